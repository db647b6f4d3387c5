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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "actmem/swap.hpp"
#include "actmem/types.hpp"

namespace actmem {

struct ParamCount {
  std::uint64_t embedding = 0;   // vocab * h
  std::uint64_t per_layer = 0;   // 4h^2 + 2*h*h_ffn + norm weights
  std::uint64_t final_norm = 0;  // 2h
  std::uint64_t classifier = 0;  // vocab * h when untied, else shared

  std::uint64_t total(const ModelConfig& cfg) const {
    std::uint64_t p = embedding + cfg.n_layers * per_layer + final_norm;
    if (cfg.untied_classifier) p += classifier;
    return p;
  }
};

inline ParamCount count_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamCount p;
  p.embedding = cfg.vocab * cfg.hidden;
  p.per_layer = 4 * cfg.hidden * cfg.hidden + 2 * cfg.hidden * cfg.ffn_hidden +
                4 * cfg.hidden;  // qkv+out proj, two FC layers, two norms
  p.final_norm = 2 * cfg.hidden;
  p.classifier = cfg.vocab * cfg.hidden;
  return p;
}

/// Model flops for one sample of s tokens: 6*s*P + 6*n*h*s^2, the causal
/// FlashAttention accounting.
inline double estimate_flops_per_sample(const ModelConfig& cfg, std::uint64_t param_count) {
  const double s = static_cast<double>(cfg.seq_len);
  return 6.0 * s * static_cast<double>(param_count) +
         6.0 * static_cast<double>(cfg.n_layers) * static_cast<double>(cfg.hidden) * s * s;
}

/// MFU implied by a measured tokens/GPU/second throughput.
inline double mfu_from_tgs(const ModelConfig& cfg, const HardwareConfig& hw,
                           std::uint64_t param_count, double tgs) {
  const double flops_per_token =
      estimate_flops_per_sample(cfg, param_count) / static_cast<double>(cfg.seq_len);
  return flops_per_token * tgs / hw.peak_flops;
}

/// Per-device stage durations for one iteration. Backward time defaults to
/// twice the forward time; recomputation replays the non-attention part of
/// the forward pass over the discarded (1 - alpha) token fraction.
struct TimingModel {
  Seconds t_fwd_layer = 0;
  Seconds t_bwd_layer = 0;
  Seconds t_attn_fwd = 0;
  Seconds t_embedding_fwd = 0;
  Seconds t_embedding_bwd = 0;
  Seconds t_classifier_fwd = 0;
  Seconds t_classifier_bwd = 0;
  double bwd_ratio = 2.0;
  std::string source = "analytic";

  Seconds t_recompute(double alpha) const {
    return (1.0 - alpha) * (t_fwd_layer - t_attn_fwd);
  }

  void validate() const {
    if (t_fwd_layer <= 0) throw ConfigError("t_fwd_layer must be positive");
    if (t_attn_fwd < 0 || t_attn_fwd > t_fwd_layer)
      throw ConfigError("t_attn_fwd must lie in [0, t_fwd_layer]");
    if (t_bwd_layer < 0) throw ConfigError("t_bwd_layer must be nonnegative");
  }
};

/// Converts the flops model into stage times: matmul work scales with
/// 2 * tokens * params, attention adds the quadratic 2*b*h*s^2 term, and
/// everything divides across the model-parallel group.
inline TimingModel analytic_timing(const ModelConfig& cfg, const HardwareConfig& hw,
                                   const ParamCount& params) {
  cfg.validate();
  hw.validate();
  const double denom = static_cast<double>(cfg.model_gpus()) * hw.peak_flops * hw.efficiency;
  const double b = static_cast<double>(cfg.batch);
  const double s = static_cast<double>(cfg.seq_len);
  const double attn_flops = 2.0 * b * static_cast<double>(cfg.hidden) * s * s;
  const double layer_flops = 2.0 * b * s * static_cast<double>(params.per_layer) + attn_flops;
  TimingModel tm;
  tm.t_attn_fwd = attn_flops / denom;
  tm.t_fwd_layer = layer_flops / denom;
  tm.t_bwd_layer = tm.bwd_ratio * tm.t_fwd_layer;
  // Classifier matmul plus the final norm; with tied embeddings this makes
  // the simulated compute flops equal the 6*s*P + 6*n*h*s^2 model exactly.
  tm.t_classifier_fwd =
      2.0 * b * s * static_cast<double>(params.classifier + params.final_norm) / denom;
  tm.t_classifier_bwd = tm.bwd_ratio * tm.t_classifier_fwd;
  tm.t_embedding_fwd = 0;  // lookup, no matmul flops
  tm.t_embedding_bwd = 0;
  tm.source = "analytic";
  return tm;
}

enum class StreamId { Compute, Offload, Prefetch };

enum class EventKind {
  EmbeddingFwd,
  LayerFwd,
  ClassifierFwd,
  ClassifierBwd,
  Recompute,
  LayerBwd,
  EmbeddingBwd,
  OffloadXfer,
  PrefetchXfer,
};

inline const char* stream_name(StreamId s) {
  switch (s) {
    case StreamId::Compute: return "compute";
    case StreamId::Offload: return "offload";
    case StreamId::Prefetch: return "prefetch";
  }
  return "?";
}

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::EmbeddingFwd: return "embedding_fwd";
    case EventKind::LayerFwd: return "layer_fwd";
    case EventKind::ClassifierFwd: return "classifier_fwd";
    case EventKind::ClassifierBwd: return "classifier_bwd";
    case EventKind::Recompute: return "recompute";
    case EventKind::LayerBwd: return "layer_bwd";
    case EventKind::EmbeddingBwd: return "embedding_bwd";
    case EventKind::OffloadXfer: return "offload";
    case EventKind::PrefetchXfer: return "prefetch";
  }
  return "?";
}

struct ScheduleEvent {
  StreamId stream = StreamId::Compute;
  EventKind kind = EventKind::LayerFwd;
  int layer = -1;
  Seconds start = 0;
  Seconds end = 0;
};

struct Schedule {
  std::vector<ScheduleEvent> events;
  std::uint64_t n_layers = 0;
  Bytes rounding_buffer_bytes = 0;  // each of the two buffers
  std::uint64_t swapped_layers = 0;
};

/// Builds the rounding-buffer schedule under the dependency rules:
///   F1  fwd(i+1) after fwd(i)
///   F2  offload(i) after fwd(i), FIFO on the offload stream
///   F3  fwd(i+2) after offload(i) (the buffer must be drained)
///   B1  backward in reverse order; the last two layers have no transfers
///   B2  prefetch(i) after bwd(i+2) (the buffer is free again)
///   B3  bwd(i) after prefetch(i) and after its recompute slot
/// Recompute runs on the compute stream immediately before its bwd; prefetch
/// overlaps it.
inline Schedule build_schedule(const ModelConfig& cfg, const HardwareConfig& hw,
                               const SkeletalSizes& sz, const SwapPlan& swap,
                               const TimingModel& tm) {
  cfg.validate();
  hw.validate();
  tm.validate();
  const std::uint64_t n = cfg.n_layers;
  Schedule sched;
  sched.n_layers = n;
  sched.rounding_buffer_bytes = sz.total;
  sched.swapped_layers = n >= 2 ? n - 2 : 0;

  auto swaps = [&](std::uint64_t i) {
    return n >= 3 && i + 2 < n && swap.swapped_bytes_per_layer > 0;
  };
  const Seconds xfer =
      static_cast<double>(swap.swapped_bytes_per_layer) / hw.pcie_bandwidth;
  const Seconds t_rec = std::max(0.0, tm.t_recompute(swap.alpha));

  auto emit = [&](StreamId stream, EventKind kind, int layer, Seconds start,
                  Seconds dur) -> Seconds {
    if (dur > 0) sched.events.push_back({stream, kind, layer, start, start + dur});
    return start + dur;
  };

  std::vector<Seconds> offload_done(n, 0), prefetch_done(n, 0), bwd_done(n, 0);
  Seconds t_c = emit(StreamId::Compute, EventKind::EmbeddingFwd, -1, 0, tm.t_embedding_fwd);
  Seconds off_free = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    Seconds start = t_c;
    if (i >= 2 && swaps(i - 2)) start = std::max(start, offload_done[i - 2]);
    t_c = emit(StreamId::Compute, EventKind::LayerFwd, static_cast<int>(i), start,
               tm.t_fwd_layer);
    if (swaps(i)) {
      const Seconds os = std::max(t_c, off_free);
      off_free = emit(StreamId::Offload, EventKind::OffloadXfer, static_cast<int>(i), os,
                      xfer);
      offload_done[i] = off_free;
    }
  }
  t_c = emit(StreamId::Compute, EventKind::ClassifierFwd, -1, t_c, tm.t_classifier_fwd);
  t_c = emit(StreamId::Compute, EventKind::ClassifierBwd, -1, t_c, tm.t_classifier_bwd);

  Seconds pf_free = 0;
  for (std::uint64_t i = n; i-- > 0;) {
    Seconds start = t_c;
    if (swaps(i)) {
      t_c = emit(StreamId::Compute, EventKind::Recompute, static_cast<int>(i), t_c, t_rec);
      start = std::max(t_c, prefetch_done[i]);
    }
    t_c = emit(StreamId::Compute, EventKind::LayerBwd, static_cast<int>(i), start,
               tm.t_bwd_layer);
    bwd_done[i] = t_c;
    if (i >= 2 && swaps(i - 2)) {
      const Seconds ps = std::max(bwd_done[i], pf_free);
      pf_free = emit(StreamId::Prefetch, EventKind::PrefetchXfer, static_cast<int>(i - 2),
                     ps, xfer);
      prefetch_done[i - 2] = pf_free;
    }
  }
  emit(StreamId::Compute, EventKind::EmbeddingBwd, -1, t_c, tm.t_embedding_bwd);
  return sched;
}

struct SimReport {
  Seconds iteration_time = 0;
  Seconds compute_blocked = 0;
  Seconds forward_blocked = 0;  // idle before and between forward compute events
  Seconds offload_stream_busy = 0;
  Seconds prefetch_stream_busy = 0;
  double tgs = 0;  // tokens per GPU per second
  double mfu = 0;
};

inline SimReport simulate(const Schedule& sched, const ModelConfig& cfg,
                          const HardwareConfig& hw, std::uint64_t param_count) {
  SimReport rep;
  Seconds compute_cursor = 0;
  bool in_forward = true;
  for (const auto& ev : sched.events) {
    rep.iteration_time = std::max(rep.iteration_time, ev.end);
    switch (ev.stream) {
      case StreamId::Compute: {
        if (ev.kind == EventKind::ClassifierBwd || ev.kind == EventKind::Recompute ||
            ev.kind == EventKind::LayerBwd || ev.kind == EventKind::EmbeddingBwd)
          in_forward = false;
        const Seconds gap = ev.start - compute_cursor;
        if (gap > 0) {
          rep.compute_blocked += gap;
          if (in_forward) rep.forward_blocked += gap;
        }
        compute_cursor = std::max(compute_cursor, ev.end);
        break;
      }
      case StreamId::Offload:
        rep.offload_stream_busy += ev.end - ev.start;
        break;
      case StreamId::Prefetch:
        rep.prefetch_stream_busy += ev.end - ev.start;
        break;
    }
  }
  if (rep.iteration_time > 0) {
    const double n_gpus = static_cast<double>(cfg.model_gpus());
    const double tokens = static_cast<double>(cfg.batch) * static_cast<double>(cfg.seq_len);
    rep.tgs = tokens / (rep.iteration_time * n_gpus);
    rep.mfu = estimate_flops_per_sample(cfg, param_count) *
              static_cast<double>(cfg.batch) /
              (rep.iteration_time * n_gpus * hw.peak_flops);
  }
  return rep;
}

/// Re-checks an emitted schedule against the dependency rules from first
/// principles; returns human-readable violations (empty = valid).
inline std::vector<std::string> validate_schedule(const Schedule& sched,
                                                  const SwapPlan& swap) {
  std::vector<std::string> bad;
  const double eps = 1e-9;
  const std::uint64_t n = sched.n_layers;
  auto swaps = [&](std::uint64_t i) {
    return n >= 3 && i + 2 < n && swap.swapped_bytes_per_layer > 0;
  };

  std::map<int, const ScheduleEvent*> fwd, bwd, off, pre, rec;
  std::vector<const ScheduleEvent*> by_stream[3];
  for (const auto& ev : sched.events) {
    by_stream[static_cast<int>(ev.stream)].push_back(&ev);
    if (ev.end < ev.start - eps) bad.push_back("event ends before it starts");
    std::map<int, const ScheduleEvent*>* slot = nullptr;
    switch (ev.kind) {
      case EventKind::LayerFwd: slot = &fwd; break;
      case EventKind::LayerBwd: slot = &bwd; break;
      case EventKind::OffloadXfer: slot = &off; break;
      case EventKind::PrefetchXfer: slot = &pre; break;
      case EventKind::Recompute: slot = &rec; break;
      default: break;
    }
    if (slot) {
      if (slot->count(ev.layer))
        bad.push_back(std::string("duplicate ") + event_kind_name(ev.kind) + " for layer " +
                      std::to_string(ev.layer));
      (*slot)[ev.layer] = &ev;
    }
  }

  // Streams are FIFO queues: events must not overlap in emission order.
  for (auto& stream : by_stream)
    for (std::size_t k = 1; k < stream.size(); ++k)
      if (stream[k]->start < stream[k - 1]->end - eps)
        bad.push_back(std::string("overlapping events on stream ") +
                      stream_name(stream[k]->stream));

  for (std::uint64_t i = 0; i < n; ++i) {
    if (!fwd.count(static_cast<int>(i))) bad.push_back("missing fwd for layer " + std::to_string(i));
    if (!bwd.count(static_cast<int>(i))) bad.push_back("missing bwd for layer " + std::to_string(i));
  }
  if (!bad.empty()) return bad;

  for (std::uint64_t i = 0; i < n; ++i) {
    const int li = static_cast<int>(i);
    // F1
    if (i + 1 < n && fwd.at(li + 1)->start < fwd.at(li)->end - eps)
      bad.push_back("F1: fwd " + std::to_string(i + 1) + " starts before fwd " +
                    std::to_string(i) + " ends");
    if (swaps(i)) {
      if (!off.count(li)) {
        bad.push_back("F2: missing offload for swapped layer " + std::to_string(i));
        continue;
      }
      if (!pre.count(li)) {
        bad.push_back("B2: missing prefetch for swapped layer " + std::to_string(i));
        continue;
      }
      // F2
      if (off.at(li)->start < fwd.at(li)->end - eps)
        bad.push_back("F2: offload " + std::to_string(i) + " starts before its fwd ends");
      // F3
      if (i + 2 < n && fwd.at(li + 2)->start < off.at(li)->end - eps)
        bad.push_back("F3: fwd " + std::to_string(i + 2) + " starts before offload " +
                      std::to_string(i) + " ends");
      // B2
      if (pre.at(li)->start < bwd.at(li + 2)->end - eps)
        bad.push_back("B2: prefetch " + std::to_string(i) + " starts before bwd " +
                      std::to_string(i + 2) + " ends");
      // B3
      if (bwd.at(li)->start < pre.at(li)->end - eps)
        bad.push_back("B3: bwd " + std::to_string(i) + " starts before its prefetch ends");
      if (rec.count(li)) {
        if (bwd.at(li)->start < rec.at(li)->end - eps)
          bad.push_back("B3: bwd " + std::to_string(i) + " starts before its recompute ends");
        if (rec.at(li)->stream != StreamId::Compute)
          bad.push_back("B3: recompute " + std::to_string(i) + " not on the compute stream");
        // Immediately before: no other compute event in between.
        for (const auto* ev : by_stream[static_cast<int>(StreamId::Compute)])
          if (ev != rec.at(li) && ev != bwd.at(li) &&
              ev->start >= rec.at(li)->end - eps && ev->end <= bwd.at(li)->start + eps)
            bad.push_back("B3: compute event between recompute and bwd " + std::to_string(i));
      }
    } else {
      if (off.count(li)) bad.push_back("layer " + std::to_string(i) + " must not offload");
      if (pre.count(li)) bad.push_back("B1: layer " + std::to_string(i) + " must not prefetch");
      if (rec.count(li)) bad.push_back("layer " + std::to_string(i) + " must not recompute");
    }
    // B1: reverse order
    if (i + 1 < n && bwd.at(li)->start < bwd.at(li + 1)->end - eps)
      bad.push_back("B1: bwd " + std::to_string(i) + " starts before bwd " +
                    std::to_string(i + 1) + " ends");
  }
  // F2/FIFO: offload issue order follows layer order; prefetch reverse.
  const auto& offs = by_stream[static_cast<int>(StreamId::Offload)];
  for (std::size_t k = 1; k < offs.size(); ++k)
    if (offs[k]->layer < offs[k - 1]->layer)
      bad.push_back("F2: offload stream not FIFO in layer order");
  const auto& pres = by_stream[static_cast<int>(StreamId::Prefetch)];
  for (std::size_t k = 1; k < pres.size(); ++k)
    if (pres[k]->layer > pres[k - 1]->layer)
      bad.push_back("B2: prefetch stream not FIFO in reverse layer order");
  return bad;
}

/// Per-layer swap plan with a caller-chosen alpha, for sweeps. Throws
/// CpuInfeasibleError when that alpha would exhaust host memory.
inline SwapPlan make_swap_plan_with_alpha(const SkeletalSizes& sz, const HardwareConfig& hw,
                                          double alpha, std::uint64_t n_layers) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  SwapPlan plan;
  plan.alpha = alpha;
  plan.mandatory_bytes = sz.s_input + sz.s_attn;
  plan.swapped_bytes_per_layer =
      plan.mandatory_bytes +
      static_cast<Bytes>(std::floor(alpha * static_cast<double>(sz.s_others)));
  plan.swapped_layers = n_layers >= 2 ? n_layers - 2 : 0;
  plan.cpu_footprint = plan.swapped_layers * plan.swapped_bytes_per_layer;
  if (plan.cpu_footprint > hw.cpu_mem)
    throw CpuInfeasibleError("alpha " + std::to_string(alpha) +
                             " needs more host memory than available");
  return plan;
}

}  // namespace actmem
