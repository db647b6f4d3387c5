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

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "actmem/allocator.hpp"
#include "actmem/bilevel.hpp"
#include "actmem/schedule.hpp"
#include "actmem/swap.hpp"
#include "actmem/synth.hpp"
#include "actmem/types.hpp"

namespace actmem {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config files. One JSON object with optional "model", "hardware", "synth",
// "planner" and "swap" sections; unknown keys are rejected to catch typos.
// ---------------------------------------------------------------------------

struct PlannerOptions {
  Bytes cap = 0;  // 0 = unbounded
  Bytes alignment = 512;
  Seconds time_budget = 60.0;
};

struct SwapOptions {
  std::uint64_t token_granularity = 128;
  double t_layer = 0;  // measured forward layer seconds; 0 = use the analytic model
};

struct RunConfig {
  ModelConfig model;
  HardwareConfig hardware;
  SynthOptions synth;
  PlannerOptions planner;
  SwapOptions swap;
};

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

inline ModelConfig model_config_from_json(const Json& j) {
  detail::reject_unknown_keys(
      j,
      {"n_layers", "hidden", "ffn_hidden", "n_heads", "vocab", "batch", "seq_len",
       "dtype_bytes", "tp_degree", "sp_or_cp_degree", "untied_classifier",
       "skeletal_weights"},
      "model");
  ModelConfig cfg;
  cfg.n_layers = j.value("n_layers", cfg.n_layers);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.ffn_hidden = j.value("ffn_hidden", cfg.ffn_hidden);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.vocab = j.value("vocab", cfg.vocab);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.seq_len = j.value("seq_len", cfg.seq_len);
  cfg.dtype_bytes = j.value("dtype_bytes", cfg.dtype_bytes);
  cfg.tp_degree = j.value("tp_degree", cfg.tp_degree);
  cfg.sp_or_cp_degree = j.value("sp_or_cp_degree", cfg.sp_or_cp_degree);
  cfg.untied_classifier = j.value("untied_classifier", cfg.untied_classifier);
  if (j.contains("skeletal_weights"))
    for (auto it = j["skeletal_weights"].begin(); it != j["skeletal_weights"].end(); ++it)
      cfg.skeletal_weight_overrides[it.key()] = it.value().get<double>();
  cfg.validate();
  return cfg;
}

inline Json to_json(const ModelConfig& cfg) {
  Json j{{"n_layers", cfg.n_layers},
         {"hidden", cfg.hidden},
         {"ffn_hidden", cfg.ffn_hidden},
         {"n_heads", cfg.n_heads},
         {"vocab", cfg.vocab},
         {"batch", cfg.batch},
         {"seq_len", cfg.seq_len},
         {"dtype_bytes", cfg.dtype_bytes},
         {"tp_degree", cfg.tp_degree},
         {"sp_or_cp_degree", cfg.sp_or_cp_degree},
         {"untied_classifier", cfg.untied_classifier}};
  if (!cfg.skeletal_weight_overrides.empty()) {
    Json w;
    for (const auto& [name, weight] : cfg.skeletal_weight_overrides) w[name] = weight;
    j["skeletal_weights"] = w;
  }
  return j;
}

inline HardwareConfig hardware_config_from_json(const Json& j) {
  detail::reject_unknown_keys(
      j, {"pcie_bandwidth", "cpu_mem", "gpu_mem", "peak_flops", "efficiency"}, "hardware");
  HardwareConfig hw;
  hw.pcie_bandwidth = j.value("pcie_bandwidth", hw.pcie_bandwidth);
  hw.cpu_mem = j.value("cpu_mem", hw.cpu_mem);
  hw.gpu_mem = j.value("gpu_mem", hw.gpu_mem);
  hw.peak_flops = j.value("peak_flops", hw.peak_flops);
  hw.efficiency = j.value("efficiency", hw.efficiency);
  hw.validate();
  return hw;
}

inline Json to_json(const HardwareConfig& hw) {
  return Json{{"pcie_bandwidth", hw.pcie_bandwidth},
              {"cpu_mem", hw.cpu_mem},
              {"gpu_mem", hw.gpu_mem},
              {"peak_flops", hw.peak_flops},
              {"efficiency", hw.efficiency}};
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"model", "hardware", "synth", "planner", "swap"},
                              "config");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j["model"]);
  if (j.contains("hardware")) rc.hardware = hardware_config_from_json(j["hardware"]);
  if (j.contains("synth")) {
    detail::reject_unknown_keys(j["synth"], {"seed"}, "synth");
    rc.synth.seed = j["synth"].value("seed", rc.synth.seed);
  }
  if (j.contains("planner")) {
    detail::reject_unknown_keys(j["planner"], {"cap", "alignment", "time_budget"},
                                "planner");
    rc.planner.cap = j["planner"].value("cap", rc.planner.cap);
    rc.planner.alignment = j["planner"].value("alignment", rc.planner.alignment);
    rc.planner.time_budget = j["planner"].value("time_budget", rc.planner.time_budget);
  }
  if (j.contains("swap")) {
    detail::reject_unknown_keys(j["swap"], {"token_granularity", "t_layer"}, "swap");
    rc.swap.token_granularity =
        j["swap"].value("token_granularity", rc.swap.token_granularity);
    rc.swap.t_layer = j["swap"].value("t_layer", rc.swap.t_layer);
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Plans and reports
// ---------------------------------------------------------------------------

inline Json to_json(const MemoryPlan& plan) {
  Json addrs = Json::object();
  for (const auto& [id, addr] : plan.addresses) addrs[std::to_string(id)] = addr;
  return Json{{"peak", plan.peak}, {"addresses", addrs}};
}

inline Json to_json(const GlobalPlan& gp) {
  Json absolute = Json::array();
  for (const auto& a : gp.absolute)
    absolute.push_back(
        Json{{"segment", a.segment_index}, {"tensor", a.tensor_id}, {"offset", a.offset}});
  return Json{{"layer", Json{{"fwd", to_json(gp.layer_plan.fwd_plan)},
                             {"bwd", to_json(gp.layer_plan.bwd_plan)},
                             {"fwd_peak", gp.layer_plan.fwd_peak},
                             {"bwd_peak", gp.layer_plan.bwd_peak}}},
              {"outer", to_json(gp.outer_plan)},
              {"total_peak", gp.total_peak},
              {"optimal", gp.optimal},
              {"absolute", absolute}};
}

inline Json to_json(const SwapPlan& plan) {
  Json j{{"alpha", plan.alpha},
         {"mandatory_bytes", plan.mandatory_bytes},
         {"swapped_bytes_per_layer", plan.swapped_bytes_per_layer},
         {"cpu_footprint", plan.cpu_footprint},
         {"swapped_layers", plan.swapped_layers}};
  j["blocking"] = plan.mandatory_stall
                      ? Json{{"stall_seconds", *plan.mandatory_stall}}
                      : Json(nullptr);
  return j;
}

inline Json to_json(const SimReport& rep) {
  return Json{{"iteration_time", rep.iteration_time},
              {"compute_blocked", rep.compute_blocked},
              {"forward_blocked", rep.forward_blocked},
              {"offload_stream_busy", rep.offload_stream_busy},
              {"prefetch_stream_busy", rep.prefetch_stream_busy},
              {"tgs", rep.tgs},
              {"mfu", rep.mfu}};
}

inline Json to_json(const FragReport& rep) {
  return Json{{"peak_reserved", rep.peak_reserved},
              {"peak_allocated", rep.peak_allocated},
              {"peak_fragmentation", rep.peak_fragmentation},
              {"reorganizations", rep.reorganizations},
              {"oom", rep.oom}};
}

inline Json to_json(const FragComparison& cmp) {
  return Json{{"caching", to_json(cmp.caching)},
              {"planned", to_json(cmp.planned)},
              {"reserved_delta", cmp.reserved_delta},
              {"fragmentation_delta", cmp.fragmentation_delta},
              {"reorganizations_delta", cmp.reorganizations_delta}};
}

// ---------------------------------------------------------------------------
// CSV series for external plotting
// ---------------------------------------------------------------------------

inline std::string schedule_timeline_csv(const Schedule& sched) {
  std::ostringstream out;
  out << "stream,kind,layer,start,end\n";
  out.precision(17);
  for (const auto& ev : sched.events)
    out << stream_name(ev.stream) << ',' << event_kind_name(ev.kind) << ',' << ev.layer
        << ',' << ev.start << ',' << ev.end << '\n';
  return out.str();
}

inline std::string frag_timeline_csv(const FragReport& rep) {
  std::ostringstream out;
  out << "event,reserved,allocated\n";
  for (const auto& pt : rep.timeline)
    out << pt.event_index << ',' << pt.reserved << ',' << pt.allocated << '\n';
  return out.str();
}

// FNV-1a, for recording input identities in run manifests.
inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace actmem
