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

// Test-only generator for small random iteration traces with identical
// layers: a few interleaved transients per segment, layer skeletal tensors,
// and optionally an embedding-held tensor that co-lives with every layer
// segment (the case where bi-level planning may lose to single-level).

#pragma once

#include <random>
#include <vector>

#include "actmem/trace.hpp"

namespace actmem::testutil {

struct SyntheticTraceOptions {
  int n_layers = 2;
  std::size_t transients_per_segment = 3;
  Bytes max_size = 8;
  bool embedding_held_tensor = false;  // outer tensor overlapping all layers
};

inline IterationTrace random_iteration_trace(std::mt19937_64& rng,
                                             const SyntheticTraceOptions& opt) {
  TensorId next_id = 1;

  // Random interleaved malloc/free pattern, all closed within the segment.
  auto random_pattern = [&](std::size_t count) {
    struct Ev {
      bool alloc;
      std::size_t slot;
    };
    std::vector<Ev> events;
    std::vector<Bytes> sizes(count);
    for (std::size_t i = 0; i < count; ++i) {
      sizes[i] = 1 + rng() % opt.max_size;
      const std::size_t at = events.empty() ? 0 : rng() % (events.size() + 1);
      events.insert(events.begin() + at, {true, i});
      const std::size_t after =
          at + 1 + (events.size() > at + 1 ? rng() % (events.size() - at) : 0);
      events.insert(events.begin() + after, {false, i});
    }
    return std::pair(events, sizes);
  };

  // One canonical pattern per segment kind, instantiated with fresh ids per
  // layer so all layer segments are identical modulo ids.
  auto fwd_pattern = random_pattern(opt.transients_per_segment);
  auto bwd_pattern = random_pattern(opt.transients_per_segment);
  const Bytes skeletal_size = 1 + rng() % opt.max_size;

  auto instantiate = [&](const auto& pattern, Phase phase, int layer) {
    TraceSegment seg;
    seg.phase = phase;
    seg.layer = layer;
    std::vector<TensorId> ids(pattern.second.size());
    for (auto& id : ids) id = next_id++;
    for (const auto& ev : pattern.first)
      seg.requests.push_back({ev.alloc ? RequestKind::Malloc : RequestKind::Free,
                              ids[ev.slot], pattern.second[ev.slot]});
    return seg;
  };

  IterationTrace trace;
  trace.layer_count = opt.n_layers;

  TraceSegment emb_fwd;
  emb_fwd.phase = Phase::EmbeddingFwd;
  TensorId held = 0;
  if (opt.embedding_held_tensor) {
    held = next_id++;
    emb_fwd.requests.push_back({RequestKind::Malloc, held, 1 + rng() % opt.max_size});
  }
  {
    TensorId t = next_id++;
    const Bytes sz = 1 + rng() % opt.max_size;
    emb_fwd.requests.push_back({RequestKind::Malloc, t, sz});
    emb_fwd.requests.push_back({RequestKind::Free, t, sz});
  }
  trace.segments.push_back(emb_fwd);

  std::vector<std::pair<TensorId, Bytes>> skeletal_ids;
  for (int l = 0; l < opt.n_layers; ++l) {
    TraceSegment seg = instantiate(fwd_pattern, Phase::LayerFwd, l);
    TensorId sk = next_id++;
    seg.requests.push_back({RequestKind::Malloc, sk, skeletal_size});
    skeletal_ids.emplace_back(sk, skeletal_size);
    trace.segments.push_back(seg);
  }

  TraceSegment cls_fwd;
  cls_fwd.phase = Phase::ClassifierFwd;
  {
    TensorId t = next_id++;
    const Bytes sz = 1 + rng() % opt.max_size;
    cls_fwd.requests.push_back({RequestKind::Malloc, t, sz});
    cls_fwd.requests.push_back({RequestKind::Free, t, sz});
  }
  trace.segments.push_back(cls_fwd);

  TraceSegment cls_bwd;
  cls_bwd.phase = Phase::ClassifierBwd;
  {
    TensorId t = next_id++;
    const Bytes sz = 1 + rng() % opt.max_size;
    cls_bwd.requests.push_back({RequestKind::Malloc, t, sz});
    cls_bwd.requests.push_back({RequestKind::Free, t, sz});
  }
  trace.segments.push_back(cls_bwd);

  for (int l = opt.n_layers - 1; l >= 0; --l) {
    TraceSegment seg = instantiate(bwd_pattern, Phase::LayerBwd, l);
    seg.requests.push_back(
        {RequestKind::Free, skeletal_ids[l].first, skeletal_ids[l].second});
    trace.segments.push_back(seg);
  }

  TraceSegment emb_bwd;
  emb_bwd.phase = Phase::EmbeddingBwd;
  {
    TensorId t = next_id++;
    const Bytes sz = 1 + rng() % opt.max_size;
    emb_bwd.requests.push_back({RequestKind::Malloc, t, sz});
    emb_bwd.requests.push_back({RequestKind::Free, t, sz});
  }
  if (opt.embedding_held_tensor)
    emb_bwd.requests.push_back(
        {RequestKind::Free, held, emb_fwd.requests.front().size});
  trace.segments.push_back(emb_bwd);
  return trace;
}

}  // namespace actmem::testutil
