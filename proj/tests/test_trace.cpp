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

#include <algorithm>
#include <random>
#include <set>

#include "actmem/synth.hpp"
#include "actmem/trace.hpp"

using namespace actmem;

namespace {

ModelConfig big_config() {
  ModelConfig cfg;
  cfg.n_layers = 32;
  cfg.hidden = 4096;
  cfg.ffn_hidden = 16384;
  cfg.n_heads = 32;
  cfg.vocab = 50257;
  cfg.batch = 1;
  cfg.seq_len = 1ull << 20;
  cfg.dtype_bytes = 2;
  return cfg;
}

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

// Independent lifespan tracker for cross-checking extract_lifespans.
struct NaiveSpan {
  Bytes size;
  std::size_t alloc, free;
};

std::map<TensorId, NaiveSpan> naive_lifespans(const IterationTrace& trace) {
  std::map<TensorId, NaiveSpan> spans;
  std::size_t ev = 0;
  for (const auto& seg : trace.segments) {
    for (const auto& req : seg.requests) {
      if (req.kind == RequestKind::Malloc)
        spans[req.tensor_id] = {req.size, ev, 0};
      else
        spans[req.tensor_id].free = ev;
      ++ev;
    }
  }
  return spans;
}

}  // namespace

TEST_CASE("parse minimal well-formed trace") {
  auto trace = parse_trace("# segment layer_fwd 0\nmalloc 1 100\nfree 1 100\n");
  REQUIRE(trace.segments.size() == 1);
  CHECK(trace.segments[0].phase == Phase::LayerFwd);
  CHECK(trace.segments[0].layer == 0);
  REQUIRE(trace.segments[0].requests.size() == 2);
  auto analysis = extract_lifespans(trace);
  REQUIRE(analysis.lifespans.size() == 1);
  CHECK(analysis.lifespans[0].size == 100);
  CHECK(analysis.lifespans[0].cls == TensorClass::Transient);
  CHECK(analysis.overlaps.empty());
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_trace("free 1 100\n"), TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment layer_fwd 0\nfree 1 100\n"), TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment layer_fwd 0\nmalloc 1 100\nfree 1 50\n"),
                  TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment layer_fwd 0\nmalloc 1 100\n"), TraceParseError);
  CHECK_THROWS_AS(
      parse_trace("# segment layer_fwd 0\nmalloc 1 1\nfree 1 1\nmalloc 1 1\nfree 1 1\n"),
      TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment layer_fwd 0\nmalloc 1 0\nfree 1 0\n"),
                  TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment warmup\n"), TraceParseError);
  CHECK_THROWS_AS(parse_trace("# segment layer_fwd\n"), TraceParseError);

  try {
    parse_trace("# segment layer_fwd 0\nmalloc 1 100\nbogus line\nfree 1 100\n");
    FAIL("expected TraceParseError");
  } catch (const TraceParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("round-trip through serialization") {
  auto trace = synthesize_iteration_trace(toy_config());
  const std::string text = serialize_trace(trace);
  auto parsed = parse_trace(text);
  CHECK(parsed == trace);
  CHECK(serialize_trace(parsed) == text);
}

TEST_CASE("iteration structure of the synthesized trace") {
  auto trace = synthesize_iteration_trace(toy_config(2));
  REQUIRE(trace.segments.size() == 8);
  const Phase want[] = {Phase::EmbeddingFwd, Phase::LayerFwd,  Phase::LayerFwd,
                        Phase::ClassifierFwd, Phase::ClassifierBwd, Phase::LayerBwd,
                        Phase::LayerBwd,      Phase::EmbeddingBwd};
  for (std::size_t i = 0; i < 8; ++i) CHECK(trace.segments[i].phase == want[i]);
  CHECK(trace.segments[1].layer == 0);
  CHECK(trace.segments[2].layer == 1);
  CHECK(trace.segments[5].layer == 1);
  CHECK(trace.segments[6].layer == 0);
  CHECK_NOTHROW(validate_iteration_structure(trace));

  // All layer segments identical modulo tensor ids.
  CHECK(canonical_requests(trace.segments[1]) == canonical_requests(trace.segments[2]));
  CHECK(canonical_requests(trace.segments[5]) == canonical_requests(trace.segments[6]));
  CHECK(canonical_requests(trace.segments[1]) != canonical_requests(trace.segments[5]));
}

TEST_CASE("skeletal byte arithmetic at the 1M-token operating point") {
  ModelConfig cfg = big_config();
  auto [fwd, bwd] = synthesize_layer_trace(cfg);
  const TraceSegment segs[] = {fwd, bwd};
  auto analysis = extract_lifespans(std::span<const TraceSegment>(segs, 2));

  Bytes skeletal_total = 0;
  Bytes attn_out = 0;
  std::size_t skeletal_count = 0;
  for (const auto& ls : analysis.lifespans) {
    if (ls.cls != TensorClass::Skeletal) continue;
    skeletal_total += ls.size;
    ++skeletal_count;
  }
  auto comps = skeletal_components(cfg);
  CHECK(skeletal_count == comps.size());
  for (auto& [name, size] : comps)
    if (name == "attn_out") attn_out = size;

  // 16 * b*s*h elements at 2 bytes each: 128 GiB per layer, 6.25% of which
  // is the attention output, and 4096 GiB across 32 layers.
  CHECK(skeletal_total == 128 * kGiB);
  CHECK(attn_out == 8 * kGiB);
  CHECK(skeletal_total * cfg.n_layers == 4096 * kGiB);
}

TEST_CASE("per-device scaling divides skeletal sizes exactly") {
  ModelConfig base = big_config();
  ModelConfig sharded = base;
  sharded.sp_or_cp_degree = 8;

  auto full = skeletal_components(base);
  auto split = skeletal_components(sharded);
  REQUIRE(full.size() == split.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    CHECK(full[i].first == split[i].first);
    CHECK(full[i].second == split[i].second * 8);
  }
}

TEST_CASE("lifespan extraction and overlap relation") {
  SUBCASE("nested pair overlaps") {
    TraceSegment seg;
    seg.phase = Phase::LayerFwd;
    seg.layer = 0;
    seg.requests = {{RequestKind::Malloc, 1, 4},
                    {RequestKind::Malloc, 2, 6},
                    {RequestKind::Free, 1, 4},
                    {RequestKind::Free, 2, 6}};
    auto analysis = extract_lifespans(std::span<const TraceSegment>(&seg, 1));
    REQUIRE(analysis.overlaps.size() == 1);
    CHECK(analysis.overlaps[0] == std::pair<TensorId, TensorId>{1, 2});
  }
  SUBCASE("disjoint pair does not overlap") {
    TraceSegment seg;
    seg.phase = Phase::LayerFwd;
    seg.layer = 0;
    seg.requests = {{RequestKind::Malloc, 1, 4},
                    {RequestKind::Free, 1, 4},
                    {RequestKind::Malloc, 2, 6},
                    {RequestKind::Free, 2, 6}};
    auto analysis = extract_lifespans(std::span<const TraceSegment>(&seg, 1));
    CHECK(analysis.overlaps.empty());
  }
}

TEST_CASE("synthesized layer classifies skeletal and transient tensors") {
  ModelConfig cfg = toy_config();
  auto [fwd, bwd] = synthesize_layer_trace(cfg);
  const TraceSegment segs[] = {fwd, bwd};
  auto analysis = extract_lifespans(std::span<const TraceSegment>(segs, 2));

  std::set<TensorId> fwd_ids, bwd_ids;
  for (const auto& r : fwd.requests)
    if (r.kind == RequestKind::Malloc) fwd_ids.insert(r.tensor_id);
  for (const auto& r : bwd.requests)
    if (r.kind == RequestKind::Malloc) bwd_ids.insert(r.tensor_id);

  std::size_t skeletal = 0, transient = 0;
  for (const auto& ls : analysis.lifespans) {
    if (ls.cls == TensorClass::Skeletal) {
      ++skeletal;
      CHECK(fwd_ids.count(ls.tensor_id) == 1);
    } else {
      ++transient;
    }
  }
  CHECK(skeletal == skeletal_components(cfg).size());
  // Transient requests outnumber skeletal ones at least five-fold.
  CHECK(transient >= 5 * skeletal);
  // Transient id sets of fwd and bwd are disjoint.
  for (TensorId id : fwd_ids) CHECK(bwd_ids.count(id) == 0);
}

TEST_CASE("live bytes never negative and return to zero") {
  auto trace = synthesize_iteration_trace(toy_config(3));
  auto curve = live_bytes_curve(trace.segments);
  REQUIRE(!curve.empty());
  CHECK(curve.back() == 0);
  // Bytes is unsigned; an underflow would show up as a huge value.
  Bytes peak = 0;
  for (Bytes b : curve) peak = std::max(peak, b);
  CHECK(peak < Bytes{1} << 62);
  CHECK(peak == peak_live_bytes(trace.segments));
}

TEST_CASE("random traces: round-trip and brute-force overlap check") {
  std::mt19937_64 rng(20260808);
  for (int round = 0; round < 20; ++round) {
    const std::size_t n_tensors = 1 + rng() % 40;
    std::vector<MemoryRequest> events;
    for (TensorId id = 1; id <= n_tensors; ++id) {
      const Bytes size = 1 + rng() % 1000;
      const std::size_t at = events.empty() ? 0 : rng() % (events.size() + 1);
      events.insert(events.begin() + at, {RequestKind::Malloc, id, size});
      const std::size_t after = at + 1 + (events.size() > at + 1 ? rng() % (events.size() - at) : 0);
      events.insert(events.begin() + after, {RequestKind::Free, id, size});
    }
    IterationTrace trace;
    trace.segments.push_back({Phase::LayerFwd, 0, events});
    trace.layer_count = 1;

    auto reparsed = parse_trace(serialize_trace(trace));
    CHECK(reparsed == trace);

    auto curve = live_bytes_curve(trace.segments);
    CHECK(curve.back() == 0);

    auto analysis = extract_lifespans(trace);
    auto naive = naive_lifespans(trace);
    std::set<std::pair<TensorId, TensorId>> expected;
    for (const auto& [ida, a] : naive)
      for (const auto& [idb, b] : naive) {
        if (ida >= idb) continue;
        if (a.alloc < b.free && b.alloc < a.free) expected.insert({ida, idb});
      }
    std::set<std::pair<TensorId, TensorId>> got(analysis.overlaps.begin(),
                                                analysis.overlaps.end());
    CHECK(got == expected);
  }
}

TEST_CASE("overlap relation matches brute force on a 1000-event trace") {
  std::mt19937_64 rng(777);
  const std::size_t n_tensors = 500;
  std::vector<MemoryRequest> events;
  events.reserve(2 * n_tensors);
  for (TensorId id = 1; id <= n_tensors; ++id) {
    const Bytes size = 1 + rng() % 4096;
    const std::size_t at = events.empty() ? 0 : rng() % (events.size() + 1);
    events.insert(events.begin() + at, {RequestKind::Malloc, id, size});
    const std::size_t after =
        at + 1 + (events.size() > at + 1 ? rng() % (events.size() - at) : 0);
    events.insert(events.begin() + after, {RequestKind::Free, id, size});
  }
  IterationTrace trace;
  trace.segments.push_back({Phase::LayerFwd, 0, std::move(events)});
  trace.layer_count = 1;

  auto analysis = extract_lifespans(trace);
  auto naive = naive_lifespans(trace);
  std::set<std::pair<TensorId, TensorId>> expected;
  for (const auto& [ida, a] : naive)
    for (const auto& [idb, b] : naive) {
      if (ida >= idb) continue;
      if (a.alloc < b.free && b.alloc < a.free) expected.insert({ida, idb});
    }
  std::set<std::pair<TensorId, TensorId>> got(analysis.overlaps.begin(),
                                              analysis.overlaps.end());
  CHECK(got == expected);
  for (const auto& [a, b] : got) CHECK(a < b);
}

TEST_CASE("config validation") {
  ModelConfig cfg = toy_config();
  cfg.seq_len = 127;
  cfg.sp_or_cp_degree = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.hidden = 63;
  cfg.tp_degree = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
