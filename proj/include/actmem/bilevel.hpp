/*
 * Copyright 2026 The actmem authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "actmem/dsa.hpp"
#include "actmem/trace.hpp"
#include "actmem/types.hpp"

namespace actmem {

/// Level-1 result: exact transient-tensor layouts for one transformer
/// layer's forward and backward segments. Skeletal tensors never enter the
/// DSA arena; they live in the rounding buffers.
struct LayerPlan {
  MemoryPlan fwd_plan;
  MemoryPlan bwd_plan;
  Bytes fwd_peak = 0;
  Bytes bwd_peak = 0;
  bool optimal = true;
};

namespace detail {

// Transient lifespans of the two segments, split by owning segment. The
// extraction runs over the [fwd, bwd] pair so skeletal tensors close
// properly; unclosed tensors (e.g. an empty bwd segment) stay skeletal.
inline std::pair<std::vector<TensorLifespan>, std::vector<TensorLifespan>>
split_transients(const TraceSegment& fwd, const TraceSegment& bwd) {
  const TraceSegment segs[] = {fwd, bwd};
  auto analysis = extract_lifespans(std::span<const TraceSegment>(segs, 2), true);
  std::pair<std::vector<TensorLifespan>, std::vector<TensorLifespan>> out;
  const std::size_t n_fwd = fwd.requests.size();
  for (const auto& ls : analysis.lifespans) {
    if (ls.cls != TensorClass::Transient) continue;
    (ls.alloc_index < n_fwd ? out.first : out.second).push_back(ls);
  }
  return out;
}

}  // namespace detail

/// Solves the offline DSA sub-problem for one transformer layer's forward
/// and backward transients. Throws InfeasibleError if a segment cannot fit
/// within `cap`; a timeout keeps the incumbent and clears `optimal`.
inline LayerPlan plan_layer(const TraceSegment& fwd, const TraceSegment& bwd, Bytes cap,
                            Seconds time_budget = 60.0, Bytes alignment = 512) {
  auto [fwd_spans, bwd_spans] = detail::split_transients(fwd, bwd);
  LayerPlan plan;
  auto solve = [&](std::vector<TensorLifespan> spans, MemoryPlan& out, Bytes& peak,
                   const char* which) {
    auto inst = make_dsa_instance(std::move(spans), cap, alignment);
    auto res = solve_exact(inst, time_budget);
    if (res.status == SolveStatus::Infeasible)
      throw InfeasibleError(std::string("layer ") + which +
                            " transients do not fit in cap " + std::to_string(cap));
    if (res.status != SolveStatus::Optimal) plan.optimal = false;
    out = std::move(res.plan);
    peak = out.peak;
  };
  solve(std::move(fwd_spans), plan.fwd_plan, plan.fwd_peak, "fwd");
  solve(std::move(bwd_spans), plan.bwd_plan, plan.bwd_peak, "bwd");
  return plan;
}

/// Condensed request sequence: outer requests pass through, each layer
/// segment collapses to one pseudo malloc/free pair sized at the segment's
/// level-1 peak, and layer skeletal requests disappear (rounding buffers
/// carry them).
struct CondensedTrace {
  std::vector<MemoryRequest> events;
  std::map<std::size_t, TensorId> pseudo_of_segment;  // trace segment -> pseudo id
  std::size_t expanded_event_count = 0;
};

inline CondensedTrace build_pseudo_trace(const IterationTrace& trace,
                                         const LayerPlan& lp) {
  // Layer segments must be request-for-request identical modulo ids; real
  // traces that only nearly match fail loudly rather than planning silently
  // wrong.
  const TraceSegment* first_fwd = nullptr;
  const TraceSegment* first_bwd = nullptr;
  for (const auto& seg : trace.segments) {
    if (seg.phase == Phase::LayerFwd) {
      if (!first_fwd)
        first_fwd = &seg;
      else if (canonical_requests(seg) != canonical_requests(*first_fwd))
        throw PlanningError("layer forward segments are not identical modulo ids");
    } else if (seg.phase == Phase::LayerBwd) {
      if (!first_bwd)
        first_bwd = &seg;
      else if (canonical_requests(seg) != canonical_requests(*first_bwd))
        throw PlanningError("layer backward segments are not identical modulo ids");
    }
  }

  auto analysis = extract_lifespans(trace);
  std::set<TensorId> skeletal;
  {
    // Tensor ids allocated in layer segments and classified skeletal.
    std::vector<std::size_t> event_segment;
    event_segment.reserve(trace.event_count());
    for (std::size_t si = 0; si < trace.segments.size(); ++si)
      event_segment.insert(event_segment.end(), trace.segments[si].requests.size(), si);
    for (const auto& ls : analysis.lifespans)
      if (ls.cls == TensorClass::Skeletal &&
          trace.segments.at(event_segment.at(ls.alloc_index)).phase == Phase::LayerFwd)
        skeletal.insert(ls.tensor_id);
  }

  TensorId next_pseudo = 1;
  for (const auto& ls : analysis.lifespans)
    next_pseudo = std::max(next_pseudo, ls.tensor_id + 1);

  CondensedTrace out;
  out.expanded_event_count = trace.event_count();
  for (std::size_t si = 0; si < trace.segments.size(); ++si) {
    const auto& seg = trace.segments[si];
    if (is_layer_phase(seg.phase)) {
      const Bytes peak = seg.phase == Phase::LayerFwd ? lp.fwd_peak : lp.bwd_peak;
      if (peak == 0) continue;  // nothing transient to reserve
      const TensorId id = next_pseudo++;
      out.pseudo_of_segment[si] = id;
      out.events.push_back({RequestKind::Malloc, id, peak});
      out.events.push_back({RequestKind::Free, id, peak});
    } else {
      for (const auto& req : seg.requests)
        if (!skeletal.count(req.tensor_id)) out.events.push_back(req);
    }
  }
  return out;
}

/// Absolute layout for one iteration: level-1 layer plan, level-2 outer plan
/// over pseudo blocks, and the composed per-tensor offsets.
struct AbsoluteAddress {
  std::size_t segment_index = 0;
  TensorId tensor_id = 0;
  Bytes offset = 0;

  bool operator==(const AbsoluteAddress&) const = default;
};

struct GlobalPlan {
  LayerPlan layer_plan;
  MemoryPlan outer_plan;
  std::map<std::size_t, TensorId> pseudo_of_segment;
  std::vector<AbsoluteAddress> absolute;
  Bytes total_peak = 0;
  bool optimal = true;
};

namespace detail {

inline std::vector<TensorLifespan> lifespans_of_events(
    const std::vector<MemoryRequest>& events) {
  TraceSegment seg;
  seg.phase = Phase::LayerFwd;
  seg.layer = 0;
  seg.requests = events;
  return extract_lifespans(std::span<const TraceSegment>(&seg, 1), true).lifespans;
}

}  // namespace detail

/// The two-level planning algorithm: solve one layer exactly, condense every
/// layer segment to a pseudo block of that peak size, solve the outer DSA,
/// then compose absolute addresses (outer pseudo base + layer-local offset).
inline GlobalPlan plan_model(const IterationTrace& trace, Bytes cap,
                             Seconds time_budget = 60.0, Bytes alignment = 512) {
  validate_iteration_structure(trace);
  const std::size_t n = static_cast<std::size_t>(trace.layer_count);
  const TraceSegment& fwd0 = trace.segments[1];
  const TraceSegment& bwd0 = trace.segments[2 * n + 2];

  GlobalPlan gp;
  gp.layer_plan = plan_layer(fwd0, bwd0, cap, time_budget, alignment);
  gp.optimal = gp.layer_plan.optimal;

  CondensedTrace condensed = build_pseudo_trace(trace, gp.layer_plan);
  auto outer_inst = make_dsa_instance(detail::lifespans_of_events(condensed.events), cap,
                                      alignment);
  auto outer = solve_exact(outer_inst, time_budget);
  if (outer.status == SolveStatus::Infeasible)
    throw InfeasibleError("outer request sequence does not fit in cap " +
                          std::to_string(cap));
  if (outer.status != SolveStatus::Optimal) gp.optimal = false;
  gp.outer_plan = std::move(outer.plan);
  gp.pseudo_of_segment = condensed.pseudo_of_segment;
  gp.total_peak = gp.outer_plan.peak;

  // Compose absolute addresses. Layer-local tensors translate by their
  // segment's pseudo base; the identical-segment invariant makes the
  // positional id mapping between layer k and layer 0 well defined.
  std::set<TensorId> outer_ids;
  for (const auto& [id, addr] : gp.outer_plan.addresses) outer_ids.insert(id);

  auto map_layer = [&](const TraceSegment& seg, std::size_t seg_index,
                       const TraceSegment& canon, const MemoryPlan& local) {
    auto it = gp.pseudo_of_segment.find(seg_index);
    if (it == gp.pseudo_of_segment.end()) return;  // zero-peak segment
    const Bytes base = gp.outer_plan.addresses.at(it->second);
    for (std::size_t k = 0; k < seg.requests.size(); ++k) {
      const auto& req = seg.requests[k];
      const auto& creq = canon.requests[k];
      if (req.kind != RequestKind::Malloc) continue;
      auto addr = local.addresses.find(creq.tensor_id);
      if (addr == local.addresses.end()) continue;  // skeletal, not in the arena
      gp.absolute.push_back({seg_index, req.tensor_id, base + addr->second});
    }
  };

  for (std::size_t si = 0; si < trace.segments.size(); ++si) {
    const auto& seg = trace.segments[si];
    if (seg.phase == Phase::LayerFwd) {
      map_layer(seg, si, fwd0, gp.layer_plan.fwd_plan);
    } else if (seg.phase == Phase::LayerBwd) {
      map_layer(seg, si, bwd0, gp.layer_plan.bwd_plan);
    } else {
      for (const auto& req : seg.requests) {
        if (req.kind != RequestKind::Malloc) continue;
        auto it = gp.outer_plan.addresses.find(req.tensor_id);
        if (it != gp.outer_plan.addresses.end())
          gp.absolute.push_back({si, req.tensor_id, it->second});
      }
    }
  }
  std::sort(gp.absolute.begin(), gp.absolute.end(),
            [](const AbsoluteAddress& a, const AbsoluteAddress& b) {
              return std::tie(a.segment_index, a.tensor_id) <
                     std::tie(b.segment_index, b.tensor_id);
            });
  return gp;
}

/// The DSA instance the plan must satisfy once pseudo blocks are expanded:
/// every tensor of the iteration except the rounding-buffer (layer skeletal)
/// ones.
inline DsaInstance arena_instance(const IterationTrace& trace, Bytes cap = 0,
                                  Bytes alignment = 512) {
  auto analysis = extract_lifespans(trace);
  std::vector<std::size_t> event_segment;
  event_segment.reserve(trace.event_count());
  for (std::size_t si = 0; si < trace.segments.size(); ++si)
    event_segment.insert(event_segment.end(), trace.segments[si].requests.size(), si);
  std::vector<TensorLifespan> arena;
  for (const auto& ls : analysis.lifespans) {
    const bool layer_skeletal =
        ls.cls == TensorClass::Skeletal &&
        trace.segments.at(event_segment.at(ls.alloc_index)).phase == Phase::LayerFwd;
    if (!layer_skeletal) arena.push_back(ls);
  }
  return make_dsa_instance(std::move(arena), cap, alignment);
}

/// Expands the composed plan to a flat tensor -> address map with
/// peak = total_peak, suitable for verify_plan against arena_instance().
inline MemoryPlan expand_global_plan(const GlobalPlan& gp) {
  MemoryPlan plan;
  plan.peak = gp.total_peak;
  for (const auto& a : gp.absolute) plan.addresses[a.tensor_id] = a.offset;
  return plan;
}

}  // namespace actmem
