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
#include <chrono>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "actmem/trace.hpp"
#include "actmem/types.hpp"

namespace actmem {

/// Offline dynamic storage allocation instance: sized lifespans, the overlap
/// relation E derived from them, a capacity and an address alignment. Sizes
/// are already rounded up to the alignment, so canonical addresses (sums of
/// abutting extents) stay aligned for free.
struct DsaInstance {
  std::vector<TensorLifespan> tensors;  // allocation order
  std::vector<std::pair<TensorId, TensorId>> overlaps;  // E, id_i < id_j
  Bytes mem_cap = 0;  // 0 = unbounded
  Bytes alignment = 512;

  Bytes cap_or_max() const {
    return mem_cap == 0 ? std::numeric_limits<Bytes>::max() : mem_cap;
  }
};

inline DsaInstance make_dsa_instance(std::vector<TensorLifespan> lifespans,
                                     Bytes mem_cap = 0, Bytes alignment = 512) {
  if (alignment == 0 || (alignment & (alignment - 1)) != 0)
    throw ConfigError("alignment must be a power of two");
  DsaInstance inst;
  inst.mem_cap = mem_cap;
  inst.alignment = alignment;
  std::sort(lifespans.begin(), lifespans.end(),
            [](const TensorLifespan& a, const TensorLifespan& b) {
              return a.alloc_index < b.alloc_index;
            });
  std::unordered_set<TensorId> seen;
  for (auto& t : lifespans) {
    if (t.alloc_index >= t.free_index)
      throw ConfigError("tensor " + std::to_string(t.tensor_id) + " has empty lifespan");
    if (!seen.insert(t.tensor_id).second)
      throw ConfigError("duplicate tensor id " + std::to_string(t.tensor_id));
    t.size = align_up(t.size, alignment);
  }
  for (std::size_t i = 0; i < lifespans.size(); ++i)
    for (std::size_t j = i + 1; j < lifespans.size(); ++j)
      if (lifespans[i].overlaps(lifespans[j]))
        inst.overlaps.emplace_back(
            std::min(lifespans[i].tensor_id, lifespans[j].tensor_id),
            std::max(lifespans[i].tensor_id, lifespans[j].tensor_id));
  std::sort(inst.overlaps.begin(), inst.overlaps.end());
  inst.tensors = std::move(lifespans);
  return inst;
}

/// Tensor -> base offset assignment plus the peak address reached.
struct MemoryPlan {
  std::map<TensorId, Bytes> addresses;
  Bytes peak = 0;
};

/// Max over event positions of total live bytes; no plan can peak below this.
inline Bytes dsa_lower_bound(const DsaInstance& inst) {
  Bytes best = 0;
  for (const auto& t : inst.tensors) {
    Bytes live = 0;
    for (const auto& u : inst.tensors)
      if (u.alloc_index <= t.alloc_index && t.alloc_index < u.free_index) live += u.size;
    best = std::max(best, live);
  }
  return best;
}

struct PlanViolation {
  std::string detail;
};

/// Checks a plan against the instance: every tensor addressed and aligned,
/// extents inside [0, peak], peak within capacity, and concurrently live
/// tensors disjoint in address space.
inline std::optional<PlanViolation> verify_plan(const MemoryPlan& plan,
                                                const DsaInstance& inst) {
  for (const auto& t : inst.tensors) {
    auto it = plan.addresses.find(t.tensor_id);
    if (it == plan.addresses.end())
      return PlanViolation{"tensor " + std::to_string(t.tensor_id) + " has no address"};
    if (it->second % inst.alignment != 0)
      return PlanViolation{"tensor " + std::to_string(t.tensor_id) +
                           " address not aligned to " + std::to_string(inst.alignment)};
    if (it->second + t.size > plan.peak)
      return PlanViolation{"tensor " + std::to_string(t.tensor_id) +
                           " extends past peak " + std::to_string(plan.peak)};
  }
  if (inst.mem_cap != 0 && plan.peak > inst.mem_cap)
    return PlanViolation{"peak " + std::to_string(plan.peak) + " exceeds mem_cap " +
                         std::to_string(inst.mem_cap)};
  std::map<TensorId, const TensorLifespan*> by_id;
  for (const auto& t : inst.tensors) by_id[t.tensor_id] = &t;
  for (const auto& [a, b] : inst.overlaps) {
    const auto* ta = by_id.at(a);
    const auto* tb = by_id.at(b);
    const Bytes aa = plan.addresses.at(a);
    const Bytes ab = plan.addresses.at(b);
    if (aa < ab + tb->size && ab < aa + ta->size)
      return PlanViolation{"tensors " + std::to_string(a) + " and " + std::to_string(b) +
                           " are live together and overlap in address space"};
  }
  return std::nullopt;
}

enum class SolveStatus { Optimal, Feasible, TimedOut, Infeasible };

struct SolveResult {
  SolveStatus status = SolveStatus::Infeasible;
  MemoryPlan plan;

  bool ok() const {
    return status == SolveStatus::Optimal || status == SolveStatus::Feasible ||
           status == SolveStatus::TimedOut;
  }
};

/// Best-fit arena with free-list coalescing, replayed in event order.
/// Always produces a valid plan; Infeasible only when its peak exceeds the
/// capacity.
inline SolveResult solve_heuristic(const DsaInstance& inst) {
  struct Ev {
    std::size_t index;
    bool is_alloc;
    std::size_t tensor;
  };
  std::vector<Ev> events;
  events.reserve(inst.tensors.size() * 2);
  for (std::size_t i = 0; i < inst.tensors.size(); ++i) {
    events.push_back({inst.tensors[i].alloc_index, true, i});
    events.push_back({inst.tensors[i].free_index, false, i});
  }
  std::sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) {
    if (a.index != b.index) return a.index < b.index;
    return a.is_alloc < b.is_alloc;  // frees first at equal positions
  });

  std::map<Bytes, Bytes> free_blocks;  // addr -> len
  Bytes top = 0;
  Bytes peak = 0;
  SolveResult result;
  auto place = [&](std::size_t tensor) {
    const Bytes size = inst.tensors[tensor].size;
    auto best = free_blocks.end();
    for (auto it = free_blocks.begin(); it != free_blocks.end(); ++it)
      if (it->second >= size && (best == free_blocks.end() || it->second < best->second))
        best = it;
    Bytes addr;
    if (best != free_blocks.end()) {
      addr = best->first;
      Bytes len = best->second;
      free_blocks.erase(best);
      if (len > size) free_blocks.emplace(addr + size, len - size);
    } else {
      addr = top;
      top += size;
      peak = std::max(peak, top);
    }
    result.plan.addresses[inst.tensors[tensor].tensor_id] = addr;
  };
  auto release = [&](std::size_t tensor) {
    Bytes addr = result.plan.addresses.at(inst.tensors[tensor].tensor_id);
    Bytes len = inst.tensors[tensor].size;
    auto next = free_blocks.lower_bound(addr);
    if (next != free_blocks.end() && addr + len == next->first) {
      len += next->second;
      next = free_blocks.erase(next);
    }
    if (next != free_blocks.begin()) {
      auto prev = std::prev(next);
      if (prev->first + prev->second == addr) {
        addr = prev->first;
        len += prev->second;
        free_blocks.erase(prev);
      }
    }
    if (addr + len == top) {
      top = addr;  // return the wilderness
    } else {
      free_blocks.emplace(addr, len);
    }
  };
  for (const auto& ev : events) ev.is_alloc ? place(ev.tensor) : release(ev.tensor);

  result.plan.peak = peak;
  result.status = peak <= inst.cap_or_max() ? SolveStatus::Feasible : SolveStatus::Infeasible;
  return result;
}

namespace detail {

// Branch-and-bound over placement sequences with a first-fit decode. Every
// left-justified (canonical) assignment is reachable by placing tensors in
// ascending order of their final addresses, and some canonical assignment is
// optimal, so searching sequences is exact. Candidate addresses are always 0
// or abutments of already placed overlapping tensors.
class ExactSolver {
 public:
  ExactSolver(const DsaInstance& inst, const std::vector<std::size_t>& component,
              std::chrono::steady_clock::time_point deadline)
      : inst_(inst), ids_(component), deadline_(deadline) {
    const std::size_t n = ids_.size();
    adj_.assign(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (inst_.tensors[ids_[i]].overlaps(inst_.tensors[ids_[j]]))
          adj_[i][j] = adj_[j][i] = true;
    addr_.assign(n, 0);
    placed_.assign(n, false);
    lb_ = component_lower_bound();
  }

  // Seeds the incumbent with a known-feasible assignment (addresses indexed
  // like the component).
  void seed(const std::vector<Bytes>& addrs, Bytes peak) {
    best_addr_ = addrs;
    best_peak_ = peak;
    have_best_ = true;
  }

  bool run() {
    if (have_best_ && best_peak_ <= lb_) return true;  // seed already optimal
    dfs(0, 0);
    return !timed_out_;
  }

  Bytes lower_bound() const { return lb_; }
  Bytes best_peak() const { return best_peak_; }
  bool have_best() const { return have_best_; }
  bool timed_out() const { return timed_out_; }
  const std::vector<Bytes>& best_addr() const { return best_addr_; }

 private:
  Bytes component_lower_bound() const {
    Bytes best = 0;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const auto& t = inst_.tensors[ids_[i]];
      Bytes live = 0;
      for (std::size_t j = 0; j < ids_.size(); ++j) {
        const auto& u = inst_.tensors[ids_[j]];
        if (u.alloc_index <= t.alloc_index && t.alloc_index < u.free_index) live += u.size;
      }
      best = std::max(best, live);
    }
    return best;
  }

  Bytes first_fit(std::size_t cand) const {
    const Bytes size = inst_.tensors[ids_[cand]].size;
    std::vector<std::pair<Bytes, Bytes>> blocks;  // (addr, end) of live neighbors
    for (std::size_t j = 0; j < ids_.size(); ++j)
      if (placed_[j] && adj_[cand][j])
        blocks.emplace_back(addr_[j], addr_[j] + inst_.tensors[ids_[j]].size);
    std::sort(blocks.begin(), blocks.end());
    Bytes cur = 0;
    for (const auto& [a, e] : blocks) {
      if (a > cur && a - cur >= size) return cur;
      cur = std::max(cur, e);
    }
    return cur;
  }

  void dfs(std::size_t depth, Bytes peak) {
    if (timed_out_) return;
    if (++nodes_ % 4096 == 0 && std::chrono::steady_clock::now() > deadline_) {
      timed_out_ = true;
      return;
    }
    if (have_best_ && best_peak_ <= lb_) return;  // proven optimal
    if (depth == ids_.size()) {
      if (!have_best_ || peak < best_peak_) {
        best_peak_ = peak;
        best_addr_ = addr_;
        have_best_ = true;
      }
      return;
    }
    struct Cand {
      std::size_t idx;
      Bytes addr;
      Bytes top;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (placed_[i]) continue;
      const Bytes a = first_fit(i);
      cands.push_back({i, a, std::max(peak, a + inst_.tensors[ids_[i]].size)});
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& x, const Cand& y) {
      if (x.addr != y.addr) return x.addr < y.addr;
      return inst_.tensors[ids_[x.idx]].tensor_id < inst_.tensors[ids_[y.idx]].tensor_id;
    });
    Bytes bound = inst_.cap_or_max();
    if (bound != std::numeric_limits<Bytes>::max()) bound += 1;  // peak == cap is fine
    if (have_best_) bound = std::min(bound, best_peak_);
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const auto& cand = cands[c];
      if (cand.addr >= bound) break;  // sorted by addr; later tops only grow
      if (cand.top >= bound) continue;
      // Tensors with identical extent and lifespan are interchangeable; only
      // expand the first of each equivalence class at this node.
      bool duplicate = false;
      for (std::size_t p = 0; p < c && !duplicate; ++p) {
        const auto& a = inst_.tensors[ids_[cands[p].idx]];
        const auto& b = inst_.tensors[ids_[cand.idx]];
        duplicate = a.size == b.size && a.alloc_index == b.alloc_index &&
                    a.free_index == b.free_index;
      }
      if (duplicate) continue;
      placed_[cand.idx] = true;
      addr_[cand.idx] = cand.addr;
      dfs(depth + 1, cand.top);
      placed_[cand.idx] = false;
      if (timed_out_) return;
      if (have_best_ && best_peak_ <= lb_) return;
    }
  }

  const DsaInstance& inst_;
  std::vector<std::size_t> ids_;  // tensor indices of this component
  std::vector<std::vector<bool>> adj_;
  std::vector<Bytes> addr_;
  std::vector<bool> placed_;
  std::vector<Bytes> best_addr_;
  Bytes best_peak_ = 0;
  Bytes lb_ = 0;
  bool have_best_ = false;
  bool timed_out_ = false;
  std::size_t nodes_ = 0;
  std::chrono::steady_clock::time_point deadline_;
};

inline std::vector<std::vector<std::size_t>> overlap_components(const DsaInstance& inst) {
  const std::size_t n = inst.tensors.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (inst.tensors[i].overlaps(inst.tensors[j])) parent[find(i)] = find(j);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  // Deterministic order: by smallest tensor index (allocation order).
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

}  // namespace detail

/// Exact minimum-peak assignment via branch-and-bound over canonical
/// placements, solved independently per connected component of the overlap
/// graph (components never co-live, so their assignments superimpose).
/// Completes with a provably minimal peak, or returns the incumbent on
/// timeout. Deterministic for identical input ordering.
inline SolveResult solve_exact(const DsaInstance& inst, Seconds time_budget = 60.0) {
  SolveResult result;
  const Bytes lb = dsa_lower_bound(inst);
  if (lb > inst.cap_or_max()) {
    result.status = SolveStatus::Infeasible;
    return result;
  }
  const SolveResult seed = solve_heuristic(inst);
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(time_budget));

  MemoryPlan plan;
  bool timed_out = false;
  bool proven = true;
  for (const auto& comp : detail::overlap_components(inst)) {
    detail::ExactSolver solver(inst, comp, deadline);
    Bytes seed_peak = 0;
    std::vector<Bytes> seed_addr(comp.size());
    for (std::size_t i = 0; i < comp.size(); ++i) {
      seed_addr[i] = seed.plan.addresses.at(inst.tensors[comp[i]].tensor_id);
      seed_peak = std::max(seed_peak, seed_addr[i] + inst.tensors[comp[i]].size);
    }
    solver.seed(seed_addr, seed_peak);
    if (!solver.run()) {
      timed_out = true;
      proven = false;
    }
    for (std::size_t i = 0; i < comp.size(); ++i)
      plan.addresses[inst.tensors[comp[i]].tensor_id] = solver.best_addr()[i];
    plan.peak = std::max(plan.peak, solver.best_peak());
  }
  result.plan = std::move(plan);
  if (result.plan.peak > inst.cap_or_max()) {
    // Exhaustive search found nothing within capacity: the instance is
    // infeasible unless we ran out of time before proving it.
    result.status = timed_out ? SolveStatus::TimedOut : SolveStatus::Infeasible;
    return result;
  }
  result.status = proven ? SolveStatus::Optimal : SolveStatus::TimedOut;
  return result;
}

}  // namespace actmem
