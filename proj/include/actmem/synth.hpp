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
#include <cstdint>
#include <utility>
#include <vector>

#include "actmem/swap.hpp"
#include "actmem/trace.hpp"
#include "actmem/types.hpp"

namespace actmem {

struct SynthOptions {
  // Perturbs the transient size pattern deterministically; the same pattern
  // is used for every layer so layer segments stay identical modulo ids.
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Bytes bsh_bytes(const ModelConfig& cfg) {
  return cfg.batch * cfg.seq_local() * cfg.hidden_local() * cfg.dtype_bytes;
}

inline Bytes clamp1(Bytes v) { return v == 0 ? 1 : v; }

struct IdGen {
  TensorId next = 1;
  TensorId operator()() { return next++; }
};

inline void push_pair(TraceSegment& seg, IdGen& ids, Bytes size) {
  TensorId id = ids();
  seg.requests.push_back({RequestKind::Malloc, id, clamp1(size)});
  seg.requests.push_back({RequestKind::Free, id, clamp1(size)});
}

// A short stack-disciplined burst of transient allocations. Five tensors per
// call, sized in quarters of b*s'*h' bytes.
inline void push_transient_motif(TraceSegment& seg, IdGen& ids, Bytes unit,
                                 bool alternate) {
  unit = clamp1(unit);
  const Bytes a = alternate ? 3 * unit : 2 * unit;
  const Bytes b = alternate ? unit : 4 * unit;
  const Bytes c = alternate ? 2 * unit : 3 * unit;
  const Bytes d = alternate ? 2 * unit : unit;
  const Bytes e = alternate ? unit : 2 * unit;
  TensorId held = ids();
  seg.requests.push_back({RequestKind::Malloc, held, a});
  push_pair(seg, ids, b);
  push_pair(seg, ids, c);
  push_pair(seg, ids, d);
  seg.requests.push_back({RequestKind::Free, held, a});
  push_pair(seg, ids, e);
}

inline TraceSegment emit_layer_fwd(const ModelConfig& cfg, const SynthOptions& opts,
                                   int layer, IdGen& ids,
                                   std::vector<std::pair<TensorId, Bytes>>& skeletal_out) {
  TraceSegment seg;
  seg.phase = Phase::LayerFwd;
  seg.layer = layer;
  const Bytes bsh = bsh_bytes(cfg);
  const std::uint64_t salt = opts.seed == 0 ? 0 : splitmix64(opts.seed) % 3;
  std::size_t k = 0;
  for (auto& [name, size] : skeletal_components(cfg)) {
    const Bytes unit = clamp1(bsh * (((k + salt) % 3) + 1) / 4);
    push_transient_motif(seg, ids, unit, false);
    TensorId id = ids();
    seg.requests.push_back({RequestKind::Malloc, id, clamp1(size)});
    skeletal_out.emplace_back(id, clamp1(size));
    ++k;
  }
  return seg;
}

inline TraceSegment emit_layer_bwd(const ModelConfig& cfg, const SynthOptions& opts,
                                   int layer, IdGen& ids,
                                   const std::vector<std::pair<TensorId, Bytes>>& skeletal) {
  TraceSegment seg;
  seg.phase = Phase::LayerBwd;
  seg.layer = layer;
  const Bytes bsh = bsh_bytes(cfg);
  const std::uint64_t salt = opts.seed == 0 ? 0 : splitmix64(opts.seed) % 3;
  std::size_t k = 0;
  for (auto it = skeletal.rbegin(); it != skeletal.rend(); ++it) {
    const Bytes unit = clamp1(bsh * (((k + salt + 1) % 3) + 1) / 4);
    push_transient_motif(seg, ids, unit, true);
    seg.requests.push_back({RequestKind::Free, it->first, it->second});
    ++k;
  }
  return seg;
}

}  // namespace detail

/// One transformer layer's forward and backward request sequences. The
/// forward pass emits the per-layer skeletal tensors (16 * b*s'*h' elements
/// in total, attention output at 1/16 of that) interleaved with five times
/// as many transient tensors; the backward pass frees the skeletal tensors
/// in reverse order between transient bursts of its own.
inline std::pair<TraceSegment, TraceSegment> synthesize_layer_trace(
    const ModelConfig& cfg, const SynthOptions& opts = {}) {
  cfg.validate();
  detail::IdGen ids;
  std::vector<std::pair<TensorId, Bytes>> skeletal;
  TraceSegment fwd = detail::emit_layer_fwd(cfg, opts, 0, ids, skeletal);
  TraceSegment bwd = detail::emit_layer_bwd(cfg, opts, 0, ids, skeletal);
  return {std::move(fwd), std::move(bwd)};
}

/// A full training iteration: embedding, n identical transformer layers,
/// classifier, then the backward passes in reverse order.
inline IterationTrace synthesize_iteration_trace(const ModelConfig& cfg,
                                                 const SynthOptions& opts = {}) {
  cfg.validate();
  const Bytes bsh = detail::clamp1(detail::bsh_bytes(cfg));
  const Bytes cls_scale = std::max<Bytes>(1, cfg.vocab / cfg.hidden);
  detail::IdGen ids;
  IterationTrace trace;
  trace.layer_count = static_cast<int>(cfg.n_layers);

  TraceSegment emb_fwd;
  emb_fwd.phase = Phase::EmbeddingFwd;
  {
    TensorId held = ids();
    emb_fwd.requests.push_back({RequestKind::Malloc, held, bsh});
    detail::push_pair(emb_fwd, ids, bsh / 2);
    emb_fwd.requests.push_back({RequestKind::Free, held, bsh});
    detail::push_pair(emb_fwd, ids, bsh / 4);
  }
  trace.segments.push_back(std::move(emb_fwd));

  std::vector<std::vector<std::pair<TensorId, Bytes>>> skeletal_by_layer(cfg.n_layers);
  for (std::uint64_t l = 0; l < cfg.n_layers; ++l)
    trace.segments.push_back(detail::emit_layer_fwd(cfg, opts, static_cast<int>(l), ids,
                                                    skeletal_by_layer[l]));

  // The classifier holds one tensor across its own fwd/bwd pair; its logits
  // buffers dominate the outer transient peak.
  TensorId cls_saved = 0;
  {
    TraceSegment cls_fwd;
    cls_fwd.phase = Phase::ClassifierFwd;
    TensorId logits = ids();
    cls_fwd.requests.push_back({RequestKind::Malloc, logits, cls_scale * bsh});
    cls_saved = ids();
    cls_fwd.requests.push_back({RequestKind::Malloc, cls_saved, bsh});
    detail::push_pair(cls_fwd, ids, cls_scale * bsh);
    cls_fwd.requests.push_back({RequestKind::Free, logits, cls_scale * bsh});
    trace.segments.push_back(std::move(cls_fwd));

    TraceSegment cls_bwd;
    cls_bwd.phase = Phase::ClassifierBwd;
    detail::push_pair(cls_bwd, ids, cls_scale * bsh);
    detail::push_pair(cls_bwd, ids, 2 * bsh);
    cls_bwd.requests.push_back({RequestKind::Free, cls_saved, bsh});
    trace.segments.push_back(std::move(cls_bwd));
  }

  for (std::uint64_t l = cfg.n_layers; l-- > 0;)
    trace.segments.push_back(detail::emit_layer_bwd(cfg, opts, static_cast<int>(l), ids,
                                                    skeletal_by_layer[l]));

  TraceSegment emb_bwd;
  emb_bwd.phase = Phase::EmbeddingBwd;
  detail::push_pair(emb_bwd, ids, bsh);
  detail::push_pair(emb_bwd, ids, bsh / 2);
  trace.segments.push_back(std::move(emb_bwd));
  return trace;
}

}  // namespace actmem
