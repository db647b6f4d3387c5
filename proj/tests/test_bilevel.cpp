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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>

#include "actmem/bilevel.hpp"
#include "actmem/synth.hpp"
#include "synthetic_traces.hpp"

using namespace actmem;

namespace {

ModelConfig toy_config(std::uint64_t n_layers = 2) {
  ModelConfig cfg;
  cfg.n_layers = n_layers;
  cfg.hidden = 64;
  cfg.ffn_hidden = 256;
  cfg.n_heads = 4;
  cfg.vocab = 512;
  cfg.batch = 1;
  cfg.seq_len = 128;
  cfg.dtype_bytes = 2;
  return cfg;
}

}  // namespace

TEST_CASE("plan_layer on two overlapping transients") {
  TraceSegment fwd;
  fwd.phase = Phase::LayerFwd;
  fwd.layer = 0;
  fwd.requests = {{RequestKind::Malloc, 1, 8},
                  {RequestKind::Malloc, 2, 8},
                  {RequestKind::Free, 1, 8},
                  {RequestKind::Free, 2, 8}};
  TraceSegment bwd;
  bwd.phase = Phase::LayerBwd;
  bwd.layer = 0;

  auto lp = plan_layer(fwd, bwd, 0, 10.0, 1);
  CHECK(lp.fwd_peak == 16);
  CHECK(lp.bwd_peak == 0);
  CHECK(lp.optimal);
}

TEST_CASE("plan_layer tolerates an empty backward segment with open skeletal") {
  TraceSegment fwd;
  fwd.phase = Phase::LayerFwd;
  fwd.layer = 0;
  fwd.requests = {{RequestKind::Malloc, 1, 4},
                  {RequestKind::Free, 1, 4},
                  {RequestKind::Malloc, 2, 32}};  // skeletal, never freed here
  TraceSegment bwd;
  bwd.phase = Phase::LayerBwd;
  bwd.layer = 0;

  auto lp = plan_layer(fwd, bwd, 0, 10.0, 1);
  CHECK(lp.fwd_peak == 4);  // skeletal excluded from the arena
  CHECK(lp.bwd_peak == 0);
}

TEST_CASE("plan_layer peaks match direct exact solves") {
  ModelConfig cfg = toy_config();
  auto [fwd, bwd] = synthesize_layer_trace(cfg);
  auto lp = plan_layer(fwd, bwd, 0, 10.0, 512);

  const TraceSegment segs[] = {fwd, bwd};
  auto analysis = extract_lifespans(std::span<const TraceSegment>(segs, 2));
  std::vector<TensorLifespan> fwd_spans, bwd_spans;
  for (const auto& ls : analysis.lifespans) {
    if (ls.cls != TensorClass::Transient) continue;
    (ls.alloc_index < fwd.requests.size() ? fwd_spans : bwd_spans).push_back(ls);
  }
  auto fwd_direct = solve_exact(make_dsa_instance(fwd_spans, 0, 512), 10.0);
  auto bwd_direct = solve_exact(make_dsa_instance(bwd_spans, 0, 512), 10.0);
  REQUIRE(fwd_direct.status == SolveStatus::Optimal);
  REQUIRE(bwd_direct.status == SolveStatus::Optimal);
  CHECK(lp.fwd_peak == fwd_direct.plan.peak);
  CHECK(lp.bwd_peak == bwd_direct.plan.peak);
}

TEST_CASE("plan_layer infeasible below the lower bound") {
  TraceSegment fwd;
  fwd.phase = Phase::LayerFwd;
  fwd.layer = 0;
  fwd.requests = {{RequestKind::Malloc, 1, 8},
                  {RequestKind::Malloc, 2, 8},
                  {RequestKind::Free, 1, 8},
                  {RequestKind::Free, 2, 8}};
  TraceSegment bwd;
  bwd.phase = Phase::LayerBwd;
  bwd.layer = 0;
  CHECK_THROWS_AS(plan_layer(fwd, bwd, 15, 10.0, 1), InfeasibleError);
}

TEST_CASE("build_pseudo_trace condenses layer segments") {
  auto trace = synthesize_iteration_trace(toy_config(2));
  LayerPlan lp;
  lp.fwd_peak = 16;
  lp.bwd_peak = 24;

  auto condensed = build_pseudo_trace(trace, lp);
  std::size_t fwd_pseudo = 0, bwd_pseudo = 0;
  std::map<TensorId, Bytes> pseudo_size;
  for (const auto& ev : condensed.events)
    if (ev.kind == RequestKind::Malloc) pseudo_size[ev.tensor_id] = ev.size;
  for (const auto& [seg_idx, id] : condensed.pseudo_of_segment) {
    if (trace.segments[seg_idx].phase == Phase::LayerFwd) {
      ++fwd_pseudo;
      CHECK(pseudo_size.at(id) == 16);
    } else {
      ++bwd_pseudo;
      CHECK(pseudo_size.at(id) == 24);
    }
  }
  CHECK(fwd_pseudo == 2);
  CHECK(bwd_pseudo == 2);
  // Condensation shrinks the event sequence by an order of magnitude.
  CHECK(condensed.events.size() * 10 <= condensed.expanded_event_count);
}

TEST_CASE("build_pseudo_trace rejects non-identical layers") {
  auto trace = synthesize_iteration_trace(toy_config(2));
  trace.segments[2].requests.push_back({RequestKind::Malloc, 999999, 64});
  trace.segments[2].requests.push_back({RequestKind::Free, 999999, 64});
  LayerPlan lp;
  lp.fwd_peak = 1;
  lp.bwd_peak = 1;
  CHECK_THROWS_AS(build_pseudo_trace(trace, lp), PlanningError);
}

TEST_CASE("plan_model on a single layer with empty outer segments") {
  std::mt19937_64 rng(11);
  testutil::SyntheticTraceOptions opt;
  opt.n_layers = 1;
  auto trace = testutil::random_iteration_trace(rng, opt);
  // Strip outer transients, keeping the segments themselves.
  for (auto& seg : trace.segments)
    if (!is_layer_phase(seg.phase)) seg.requests.clear();

  auto gp = plan_model(trace, 0, 10.0, 1);
  CHECK(gp.total_peak == std::max(gp.layer_plan.fwd_peak, gp.layer_plan.bwd_peak));
  auto expanded = expand_global_plan(gp);
  auto inst = arena_instance(trace, 0, 1);
  CHECK(!verify_plan(expanded, inst));
}

TEST_CASE("plan_model soundness and conservativeness on random traces") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 12; ++round) {
    testutil::SyntheticTraceOptions opt;
    opt.n_layers = 2 + static_cast<int>(rng() % 3);
    opt.embedding_held_tensor = (round % 2) == 1;
    auto trace = testutil::random_iteration_trace(rng, opt);

    auto gp = plan_model(trace, 0, 10.0, 1);
    auto expanded = expand_global_plan(gp);
    auto inst = arena_instance(trace, 0, 1);
    CHECK(!verify_plan(expanded, inst));

    auto single = solve_exact(inst, 10.0);
    REQUIRE(single.status == SolveStatus::Optimal);
    CHECK(gp.total_peak >= single.plan.peak);
    if (!opt.embedding_held_tensor) {
      // No outer tensor co-lives with a layer segment: bi-level is exact.
      CHECK(gp.total_peak == single.plan.peak);
    }
  }
}

TEST_CASE("layer address reuse at the offset level") {
  auto trace = synthesize_iteration_trace(toy_config(3));
  auto gp = plan_model(trace, 0, 10.0, 512);

  // Offsets relative to the segment's pseudo base must be identical across
  // layers for corresponding (canonical) tensors.
  std::map<std::size_t, std::vector<Bytes>> rel_by_segment;
  std::map<std::size_t, Bytes> base;
  for (const auto& [seg, id] : gp.pseudo_of_segment)
    base[seg] = gp.outer_plan.addresses.at(id);
  for (const auto& a : gp.absolute) {
    if (!base.count(a.segment_index)) continue;
    rel_by_segment[a.segment_index].push_back(a.offset - base.at(a.segment_index));
  }
  std::vector<Bytes> fwd_ref, bwd_ref;
  for (std::size_t si = 0; si < trace.segments.size(); ++si) {
    if (!rel_by_segment.count(si)) continue;
    auto& rel = rel_by_segment[si];
    if (trace.segments[si].phase == Phase::LayerFwd) {
      if (fwd_ref.empty())
        fwd_ref = rel;
      else
        CHECK(rel == fwd_ref);
    } else if (trace.segments[si].phase == Phase::LayerBwd) {
      if (bwd_ref.empty())
        bwd_ref = rel;
      else
        CHECK(rel == bwd_ref);
    }
  }
  CHECK(!fwd_ref.empty());
  CHECK(!bwd_ref.empty());
}

TEST_CASE("plan_model propagates infeasibility") {
  auto trace = synthesize_iteration_trace(toy_config(2));
  CHECK_THROWS_AS(plan_model(trace, 512, 10.0, 512), InfeasibleError);
}

TEST_CASE("expanded plan stays sound on the default synthesized trace") {
  auto trace = synthesize_iteration_trace(toy_config(4));
  auto gp = plan_model(trace, 0, 30.0, 512);
  auto expanded = expand_global_plan(gp);
  auto inst = arena_instance(trace, 0, 512);
  auto violation = verify_plan(expanded, inst);
  if (violation) FAIL(violation->detail);
  CHECK(gp.total_peak >= dsa_lower_bound(inst));
}
