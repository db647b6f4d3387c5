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
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "actmem/types.hpp"

namespace actmem {

// Per-layer skeletal activation components, weighted in multiples of
// b*s'*h' elements. The weights sum to 16; "layer_input" and "attn_out" are
// the two always-offloaded tensors, attn_out being 1/16 = 6.25% of the total.
struct SkeletalComponent {
  std::string name;
  double weight;
};

inline std::vector<SkeletalComponent> default_skeletal_components() {
  return {
      {"layer_input", 2.0}, {"input_norm", 1.0},    {"q", 1.0},
      {"k", 1.0},           {"v", 1.0},             {"attn_out", 1.0},
      {"attn_proj", 1.0},   {"post_attn_norm", 1.0}, {"ffn_fc1", 4.0},
      {"ffn_act", 3.0},
  };
}

/// All skeletal components of one layer with per-device byte sizes,
/// in emission order.
inline std::vector<std::pair<std::string, Bytes>> skeletal_components(
    const ModelConfig& cfg) {
  cfg.validate();
  const double bsh_bytes = static_cast<double>(cfg.batch) *
                           static_cast<double>(cfg.seq_local()) *
                           static_cast<double>(cfg.hidden_local()) *
                           static_cast<double>(cfg.dtype_bytes);
  std::vector<std::pair<std::string, Bytes>> out;
  for (auto& comp : default_skeletal_components()) {
    double w = comp.weight;
    auto it = cfg.skeletal_weight_overrides.find(comp.name);
    if (it != cfg.skeletal_weight_overrides.end()) w = it->second;
    if (w < 0) throw ConfigError("skeletal weight for " + comp.name + " is negative");
    out.emplace_back(comp.name, static_cast<Bytes>(std::llround(w * bsh_bytes)));
  }
  return out;
}

struct SkeletalSizes {
  Bytes s_input = 0;   // layer input, always offloaded
  Bytes s_attn = 0;    // attention output, always offloaded
  Bytes s_others = 0;  // subject to the token-wise alpha split
  Bytes total = 0;
  std::vector<std::pair<std::string, Bytes>> others_breakdown;
};

inline SkeletalSizes skeletal_sizes(const ModelConfig& cfg) {
  SkeletalSizes sz;
  for (auto& [name, bytes] : skeletal_components(cfg)) {
    sz.total += bytes;
    if (name == "layer_input") {
      sz.s_input += bytes;
    } else if (name == "attn_out") {
      sz.s_attn += bytes;
    } else {
      sz.s_others += bytes;
      sz.others_breakdown.emplace_back(name, bytes);
    }
  }
  return sz;
}

/// Offload decision for skeletal activations. Layers n-1 and n-2 start their
/// backward pass right after forward and are never swapped, hence the (n-2)
/// factor in the host footprint.
struct SwapPlan {
  double alpha = 0.0;                 // fraction of s_others offloaded
  Bytes mandatory_bytes = 0;          // s_input + s_attn
  Bytes swapped_bytes_per_layer = 0;  // mandatory + floor(alpha * s_others)
  Bytes cpu_footprint = 0;            // (n-2) * swapped_bytes_per_layer
  std::uint64_t swapped_layers = 0;   // max(n-2, 0)
  // Set when even the mandatory offload cannot overlap with one layer's
  // forward time; the schedule then stalls this long per swapped layer.
  std::optional<Seconds> mandatory_stall;
};

inline SwapPlan solve_alpha(const SkeletalSizes& sz, const HardwareConfig& hw,
                            Seconds t_layer_fwd, std::uint64_t n_layers) {
  hw.validate();
  if (t_layer_fwd <= 0) throw ConfigError("t_layer_fwd must be positive");
  SwapPlan plan;
  plan.mandatory_bytes = sz.s_input + sz.s_attn;

  if (n_layers <= 2) {
    // Nothing is ever swapped; both constraints are vacuous.
    plan.alpha = 1.0;
    plan.swapped_bytes_per_layer = plan.mandatory_bytes + sz.s_others;
    plan.cpu_footprint = 0;
    plan.swapped_layers = 0;
    return plan;
  }
  plan.swapped_layers = n_layers - 2;

  const double budget_bw = hw.pcie_bandwidth * t_layer_fwd;
  const double budget_cpu =
      static_cast<double>(hw.cpu_mem) / static_cast<double>(plan.swapped_layers);
  const double mandatory = static_cast<double>(plan.mandatory_bytes);

  if (mandatory > budget_cpu)
    throw CpuInfeasibleError(
        "mandatory offload of " + std::to_string(plan.mandatory_bytes) +
        " bytes/layer exceeds cpu_mem/(n-2) = " + std::to_string(budget_cpu));

  double alpha;
  if (sz.s_others == 0) {
    alpha = 1.0;
  } else {
    const double others = static_cast<double>(sz.s_others);
    alpha = std::min((budget_bw - mandatory) / others, (budget_cpu - mandatory) / others);
  }
  if (alpha < 0.0) {
    // Only the bandwidth constraint can be violated at alpha = 0 here; the
    // CPU case was rejected above. The schedule will block on the mandatory
    // transfers instead of failing.
    plan.alpha = 0.0;
    const Seconds stall = mandatory / hw.pcie_bandwidth - t_layer_fwd;
    if (stall > 0) plan.mandatory_stall = stall;
  } else {
    plan.alpha = std::min(alpha, 1.0);
    if (mandatory / hw.pcie_bandwidth > t_layer_fwd) {
      const Seconds stall = mandatory / hw.pcie_bandwidth - t_layer_fwd;
      if (stall > 0) plan.mandatory_stall = stall;
    }
  }

  const Bytes swapped_others =
      static_cast<Bytes>(std::floor(plan.alpha * static_cast<double>(sz.s_others)));
  plan.swapped_bytes_per_layer = plan.mandatory_bytes + swapped_others;
  plan.cpu_footprint = plan.swapped_layers * plan.swapped_bytes_per_layer;

  if (plan.cpu_footprint > hw.cpu_mem)
    throw CpuInfeasibleError("internal: cpu footprint exceeds capacity after solve");
  return plan;
}

struct TokenSplit {
  std::uint64_t swap_tokens = 0;
  std::uint64_t recompute_tokens = 0;
};

/// Splits the local sequence into a contiguous swapped prefix and a
/// recomputed suffix. The prefix is floor(alpha * s) rounded down to the
/// token granularity; alpha = 1 always swaps everything.
inline TokenSplit token_split(double alpha, std::uint64_t seq_len_local,
                              std::uint64_t granularity = 128) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (granularity == 0) granularity = 1;
  TokenSplit split;
  if (alpha >= 1.0) {
    split.swap_tokens = seq_len_local;
  } else {
    std::uint64_t sw =
        static_cast<std::uint64_t>(std::floor(alpha * static_cast<double>(seq_len_local)));
    sw = std::min(sw, seq_len_local);
    sw -= sw % granularity;
    split.swap_tokens = sw;
  }
  split.recompute_tokens = seq_len_local - split.swap_tokens;
  return split;
}

}  // namespace actmem
