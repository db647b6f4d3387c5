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

// Command-line front end: synthesize traces, plan memory, solve the swap
// fraction, simulate the three-stream schedule, and compare allocators.
// Machine output is JSON (and CSV for plot-ready series); human summaries go
// to stderr. Exit codes: 0 ok, 2 bad input, 3 plan infeasible, 4 host memory
// infeasible, 1 anything else.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "actmem/actmem.hpp"

namespace {

using namespace actmem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
}

void emit_json(const std::string& out_path, const Json& j) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
}

// Scales the analytic timing model to a measured per-layer forward time,
// keeping the attention share and the fwd:bwd ratio.
TimingModel resolve_timing(const RunConfig& rc, const ParamCount& params) {
  TimingModel tm = analytic_timing(rc.model, rc.hardware, params);
  if (rc.swap.t_layer > 0) {
    const double scale = rc.swap.t_layer / tm.t_fwd_layer;
    tm.t_fwd_layer *= scale;
    tm.t_bwd_layer *= scale;
    tm.t_attn_fwd *= scale;
    tm.t_classifier_fwd *= scale;
    tm.t_classifier_bwd *= scale;
    tm.source = "measured";
  }
  return tm;
}

SwapPlan resolve_swap(const RunConfig& rc, const SkeletalSizes& sz, const TimingModel& tm,
                      double forced_alpha) {
  if (forced_alpha >= 0)
    return make_swap_plan_with_alpha(sz, rc.hardware, forced_alpha, rc.model.n_layers);
  return solve_alpha(sz, rc.hardware, tm.t_fwd_layer, rc.model.n_layers);
}

struct CommonFlags {
  std::string config_path;
  std::string trace_path;
  std::string plan_path;
  std::string out_path;
  std::string timeline_path;
  std::string sweep_path;
  Bytes cap = 0;
  double time_budget = 60.0;
  Bytes alignment = 512;
  double alpha = -1.0;  // <0 = solve
  double t_layer = 0.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic_timestamps = true;
};

RunConfig load_config(CommonFlags& f) {
  RunConfig rc = load_run_config(f.config_path);
  if (f.seed_set) rc.synth.seed = f.seed;
  if (f.t_layer > 0) rc.swap.t_layer = f.t_layer;
  return rc;
}

int cmd_synth(CommonFlags& f) {
  RunConfig rc = load_config(f);
  IterationTrace trace = synthesize_iteration_trace(rc.model, rc.synth);
  const std::string text = serialize_trace(trace);
  if (f.out_path.empty())
    std::cout << text;
  else
    write_file(f.out_path, text);
  std::cerr << "synth: " << trace.segments.size() << " segments, " << trace.event_count()
            << " events, peak live " << peak_live_bytes(trace.segments) << " bytes\n";
  return 0;
}

int cmd_plan(CommonFlags& f) {
  IterationTrace trace = parse_trace(read_file(f.trace_path));
  GlobalPlan gp = plan_model(trace, f.cap, f.time_budget, f.alignment);
  emit_json(f.out_path, to_json(gp));
  std::cerr << "plan: total_peak " << gp.total_peak << " bytes (layer fwd "
            << gp.layer_plan.fwd_peak << ", bwd " << gp.layer_plan.bwd_peak << ")"
            << (gp.optimal ? "" : " [timeout: incumbent]") << "\n";
  return 0;
}

int cmd_alpha(CommonFlags& f) {
  RunConfig rc = load_config(f);
  const SkeletalSizes sz = skeletal_sizes(rc.model);
  const ParamCount params = count_params(rc.model);
  const TimingModel tm = resolve_timing(rc, params);

  SwapPlan plan = solve_alpha(sz, rc.hardware, tm.t_fwd_layer, rc.model.n_layers);
  Json j = to_json(plan);
  const TokenSplit split =
      token_split(plan.alpha, rc.model.seq_local(), rc.swap.token_granularity);
  j["token_split"] = Json{{"swap_tokens", split.swap_tokens},
                          {"recompute_tokens", split.recompute_tokens}};
  j["t_layer"] = tm.t_fwd_layer;
  emit_json(f.out_path, j);
  std::cerr << "alpha: " << plan.alpha << " (swapping " << plan.swapped_bytes_per_layer
            << " bytes/layer across " << plan.swapped_layers << " layers)\n";

  if (!f.sweep_path.empty()) {
    std::ostringstream csv;
    csv << "alpha,predicted_mfu,status\n";
    csv.precision(17);
    for (int k = 0; k <= 8; ++k) {
      const double a = static_cast<double>(k) / 8.0;
      try {
        SwapPlan forced = make_swap_plan_with_alpha(sz, rc.hardware, a, rc.model.n_layers);
        Schedule sched = build_schedule(rc.model, rc.hardware, sz, forced, tm);
        SimReport rep = simulate(sched, rc.model, rc.hardware, params.total(rc.model));
        csv << a << ',' << rep.mfu << ",ok\n";
      } catch (const CpuInfeasibleError&) {
        csv << a << ",,oohm\n";
      }
    }
    write_file(f.sweep_path, csv.str());
    std::cerr << "alpha: sweep written to " << f.sweep_path << "\n";
  }
  return 0;
}

int cmd_simulate(CommonFlags& f) {
  RunConfig rc = load_config(f);
  const SkeletalSizes sz = skeletal_sizes(rc.model);
  const ParamCount params = count_params(rc.model);
  const TimingModel tm = resolve_timing(rc, params);
  const SwapPlan swap = resolve_swap(rc, sz, tm, f.alpha);

  Schedule sched = build_schedule(rc.model, rc.hardware, sz, swap, tm);
  SimReport rep = simulate(sched, rc.model, rc.hardware, params.total(rc.model));

  Json j = to_json(rep);
  j["alpha"] = swap.alpha;
  j["t_layer"] = tm.t_fwd_layer;
  if (!f.plan_path.empty()) {
    Json plan_json;
    std::istringstream in(read_file(f.plan_path));
    in >> plan_json;
    j["plan_total_peak"] = plan_json.value("total_peak", Json());
  }
  emit_json(f.out_path, j);
  if (!f.timeline_path.empty()) write_file(f.timeline_path, schedule_timeline_csv(sched));
  std::cerr << "simulate: iteration " << rep.iteration_time << " s, mfu " << rep.mfu
            << ", blocked " << rep.compute_blocked << " s\n";
  return 0;
}

int cmd_frag(CommonFlags& f) {
  IterationTrace trace = parse_trace(read_file(f.trace_path));
  GlobalPlan gp = plan_model(trace, 0, f.time_budget, f.alignment);
  const Bytes capacity = f.cap != 0 ? f.cap : gp.total_peak + gp.total_peak / 10;

  CachingAllocatorConfig acfg;
  acfg.capacity = capacity;
  const bool want_timeline = !f.timeline_path.empty();
  FragReport caching = simulate_caching_allocator(trace, acfg, want_timeline);
  FragReport planned = simulate_planned(trace, gp, 0, want_timeline);

  Json j = to_json(compare(caching, planned));
  j["capacity"] = capacity;
  j["plan_total_peak"] = gp.total_peak;
  emit_json(f.out_path, j);
  if (want_timeline) {
    std::ostringstream csv;
    csv << "source,event,reserved,allocated\n";
    for (const auto& pt : caching.timeline)
      csv << "caching," << pt.event_index << ',' << pt.reserved << ',' << pt.allocated
          << '\n';
    for (const auto& pt : planned.timeline)
      csv << "planned," << pt.event_index << ',' << pt.reserved << ',' << pt.allocated
          << '\n';
    write_file(f.timeline_path, csv.str());
  }
  std::cerr << "frag: caching reserved " << caching.peak_reserved << " (frag "
            << caching.peak_fragmentation << ", reorgs " << caching.reorganizations
            << (caching.oom ? ", oom" : "") << ") vs planned " << planned.peak_reserved
            << "\n";
  return 0;
}

int cmd_report(CommonFlags& f) {
  const std::string config_text = read_file(f.config_path);
  RunConfig rc = load_config(f);

  IterationTrace trace = synthesize_iteration_trace(rc.model, rc.synth);
  const SkeletalSizes sz = skeletal_sizes(rc.model);
  const ParamCount params = count_params(rc.model);
  const TimingModel tm = resolve_timing(rc, params);
  const SwapPlan swap = resolve_swap(rc, sz, tm, f.alpha);
  GlobalPlan gp = plan_model(trace, rc.planner.cap, rc.planner.time_budget,
                             rc.planner.alignment);
  Schedule sched = build_schedule(rc.model, rc.hardware, sz, swap, tm);
  SimReport rep = simulate(sched, rc.model, rc.hardware, params.total(rc.model));

  CachingAllocatorConfig acfg;
  acfg.capacity = gp.total_peak + gp.total_peak / 10;
  FragReport caching = simulate_caching_allocator(trace, acfg);
  FragReport planned = simulate_planned(trace, gp);

  Json manifest{
      {"version", kVersion},
      {"inputs", Json{{"config",
                       Json{{"path", f.config_path}, {"fnv1a", fnv1a_hex(config_text)}}}}},
      {"model", to_json(rc.model)},
      {"hardware", to_json(rc.hardware)},
      {"param_count", params.total(rc.model)},
      {"skeletal",
       Json{{"total", sz.total}, {"s_input", sz.s_input}, {"s_attn", sz.s_attn},
            {"s_others", sz.s_others}}},
      {"alpha", to_json(swap)},
      {"plan", Json{{"total_peak", gp.total_peak},
                    {"layer_fwd_peak", gp.layer_plan.fwd_peak},
                    {"layer_bwd_peak", gp.layer_plan.bwd_peak},
                    {"optimal", gp.optimal}}},
      {"sim", to_json(rep)},
      {"frag", to_json(compare(caching, planned))}};
  if (!f.deterministic_timestamps) {
    manifest["generated_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
  }
  emit_json(f.out_path, manifest);
  std::cerr << "report: alpha " << swap.alpha << ", total_peak " << gp.total_peak
            << ", mfu " << rep.mfu << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"activation memory planner and schedule simulator for long-context "
               "transformer training"};
  app.set_version_flag("--version", std::string("actmem ") + kVersion);
  app.require_subcommand(1);

  CommonFlags f;
  int (*run)(CommonFlags&) = nullptr;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", f.config_path, "run config JSON")->required();
  };
  auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", f.out_path, "output path (default: stdout)");
  };

  auto* synth = app.add_subcommand("synth", "synthesize an iteration trace");
  add_config(synth);
  add_out(synth);
  synth->add_option("--seed", f.seed, "transient pattern seed")
      ->each([&](const std::string&) { f.seed_set = true; });
  synth->callback([&] { run = cmd_synth; });

  auto* plan = app.add_subcommand("plan", "bi-level memory plan for a trace");
  plan->add_option("--trace", f.trace_path, "trace file")->required();
  plan->add_option("--cap", f.cap, "memory capacity in bytes (0 = unbounded)");
  plan->add_option("--time-budget", f.time_budget, "solver budget in seconds");
  plan->add_option("--alignment", f.alignment, "address alignment in bytes");
  add_out(plan);
  plan->callback([&] { run = cmd_plan; });

  auto* alpha = app.add_subcommand("alpha", "solve the token-wise swap fraction");
  add_config(alpha);
  alpha->add_option("--t-layer", f.t_layer,
                    "measured forward seconds per layer (default: analytic model)");
  alpha->add_option("--sweep", f.sweep_path, "also write an alpha vs MFU sweep CSV here");
  add_out(alpha);
  alpha->callback([&] { run = cmd_alpha; });

  auto* sim = app.add_subcommand("simulate", "simulate the three-stream schedule");
  add_config(sim);
  sim->add_option("--alpha", f.alpha, "force a swap fraction instead of solving");
  sim->add_option("--plan", f.plan_path, "plan JSON to record alongside the report");
  sim->add_option("--t-layer", f.t_layer, "measured forward seconds per layer");
  sim->add_option("--timeline", f.timeline_path, "write a stream timeline CSV here");
  add_out(sim);
  sim->callback([&] { run = cmd_simulate; });

  auto* frag = app.add_subcommand("frag", "compare caching allocator vs planned arena");
  frag->add_option("--trace", f.trace_path, "trace file")->required();
  frag->add_option("--cap", f.cap,
                   "caching allocator capacity (default: planned peak + 10%)");
  frag->add_option("--time-budget", f.time_budget, "solver budget in seconds");
  frag->add_option("--alignment", f.alignment, "address alignment in bytes");
  frag->add_option("--timeline", f.timeline_path, "write reserved/allocated CSV here");
  add_out(frag);
  frag->callback([&] { run = cmd_frag; });

  auto* report = app.add_subcommand("report", "run the full pipeline into one manifest");
  add_config(report);
  report->add_option("--alpha", f.alpha, "force a swap fraction instead of solving");
  report->add_option("--seed", f.seed, "transient pattern seed")
      ->each([&](const std::string&) { f.seed_set = true; });
  report->add_option("--deterministic-timestamps", f.deterministic_timestamps,
                     "omit wall-clock timestamps (default: true)");
  add_out(report);
  report->callback([&] { run = cmd_report; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return run(f);
  } catch (const CpuInfeasibleError& e) {
    std::cerr << "error (out of host memory): " << e.what() << "\n";
    return 4;
  } catch (const InfeasibleError& e) {
    std::cerr << "error (infeasible): " << e.what() << "\n";
    return 3;
  } catch (const TraceParseError& e) {
    std::cerr << "error (trace): " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const PlanningError& e) {
    std::cerr << "error (planning): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
