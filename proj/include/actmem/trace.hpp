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
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "actmem/types.hpp"

namespace actmem {

enum class Phase {
  EmbeddingFwd,
  LayerFwd,
  ClassifierFwd,
  ClassifierBwd,
  LayerBwd,
  EmbeddingBwd,
};

inline bool is_forward(Phase p) {
  return p == Phase::EmbeddingFwd || p == Phase::LayerFwd || p == Phase::ClassifierFwd;
}

inline bool is_layer_phase(Phase p) { return p == Phase::LayerFwd || p == Phase::LayerBwd; }

/// Backward phase whose frees close allocations made in `p`.
inline Phase matching_backward(Phase p) {
  switch (p) {
    case Phase::EmbeddingFwd: return Phase::EmbeddingBwd;
    case Phase::LayerFwd: return Phase::LayerBwd;
    case Phase::ClassifierFwd: return Phase::ClassifierBwd;
    default: throw ConfigError("matching_backward called on a backward phase");
  }
}

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::EmbeddingFwd: return "embedding_fwd";
    case Phase::LayerFwd: return "layer_fwd";
    case Phase::ClassifierFwd: return "classifier_fwd";
    case Phase::ClassifierBwd: return "classifier_bwd";
    case Phase::LayerBwd: return "layer_bwd";
    case Phase::EmbeddingBwd: return "embedding_bwd";
  }
  return "?";
}

inline std::optional<Phase> parse_phase(std::string_view s) {
  if (s == "embedding_fwd") return Phase::EmbeddingFwd;
  if (s == "layer_fwd") return Phase::LayerFwd;
  if (s == "classifier_fwd") return Phase::ClassifierFwd;
  if (s == "classifier_bwd") return Phase::ClassifierBwd;
  if (s == "layer_bwd") return Phase::LayerBwd;
  if (s == "embedding_bwd") return Phase::EmbeddingBwd;
  return std::nullopt;
}

enum class RequestKind { Malloc, Free };

struct MemoryRequest {
  RequestKind kind = RequestKind::Malloc;
  TensorId tensor_id = 0;
  Bytes size = 0;

  bool operator==(const MemoryRequest&) const = default;
};

struct TraceSegment {
  Phase phase = Phase::LayerFwd;
  int layer = -1;  // meaningful for layer phases only
  std::vector<MemoryRequest> requests;

  bool operator==(const TraceSegment&) const = default;
};

/// One training iteration's memory requests, segmented by model phase.
struct IterationTrace {
  std::vector<TraceSegment> segments;
  int layer_count = 0;

  bool operator==(const IterationTrace&) const = default;

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.requests.size();
    return n;
  }
};

enum class TensorClass { Skeletal, Transient };

/// A tensor's size plus its half-open live interval in global event indices.
struct TensorLifespan {
  TensorId tensor_id = 0;
  Bytes size = 0;
  std::size_t alloc_index = 0;
  std::size_t free_index = 0;  // index of the free event; one past last live event
  TensorClass cls = TensorClass::Transient;

  bool overlaps(const TensorLifespan& other) const {
    return alloc_index < other.free_index && other.alloc_index < free_index;
  }
};

struct LifespanAnalysis {
  std::vector<TensorLifespan> lifespans;          // in allocation order
  std::vector<std::pair<TensorId, TensorId>> overlaps;  // E, stored with id_i < id_j
};

namespace detail {

struct OpenAlloc {
  Bytes size;
  std::size_t event_index;
  std::size_t segment_index;
};

}  // namespace detail

/// Extracts lifespans and the overlap relation from a contiguous run of
/// segments. With `allow_open`, tensors still live at the end get
/// free_index = total event count and are classified Skeletal.
inline LifespanAnalysis extract_lifespans(std::span<const TraceSegment> segments,
                                          bool allow_open = false) {
  LifespanAnalysis out;
  std::unordered_map<TensorId, detail::OpenAlloc> open;
  std::unordered_map<TensorId, std::size_t> done;  // id -> lifespan slot
  std::size_t event = 0;
  for (std::size_t si = 0; si < segments.size(); ++si) {
    for (const auto& req : segments[si].requests) {
      if (req.kind == RequestKind::Malloc) {
        if (open.count(req.tensor_id) || done.count(req.tensor_id))
          throw TraceParseError(0, "tensor id " + std::to_string(req.tensor_id) +
                                       " allocated more than once");
        if (req.size == 0)
          throw TraceParseError(0, "tensor id " + std::to_string(req.tensor_id) +
                                       " has zero size");
        open.emplace(req.tensor_id, detail::OpenAlloc{req.size, event, si});
      } else {
        auto it = open.find(req.tensor_id);
        if (it == open.end())
          throw TraceParseError(0, "free of tensor id " + std::to_string(req.tensor_id) +
                                       " without a prior malloc");
        if (it->second.size != req.size)
          throw TraceParseError(0, "free size " + std::to_string(req.size) +
                                       " does not match malloc size " +
                                       std::to_string(it->second.size) + " for tensor id " +
                                       std::to_string(req.tensor_id));
        const auto& seg_alloc = segments[it->second.segment_index];
        const auto& seg_free = segments[si];
        TensorClass cls;
        if (it->second.segment_index == si) {
          cls = TensorClass::Transient;
        } else if (is_forward(seg_alloc.phase) &&
                   seg_free.phase == matching_backward(seg_alloc.phase) &&
                   (!is_layer_phase(seg_alloc.phase) || seg_alloc.layer == seg_free.layer)) {
          cls = TensorClass::Skeletal;
        } else {
          throw TraceParseError(0, "tensor id " + std::to_string(req.tensor_id) +
                                       " crosses segments without a matching fwd/bwd pair");
        }
        done.emplace(req.tensor_id, out.lifespans.size());
        out.lifespans.push_back(TensorLifespan{req.tensor_id, req.size,
                                               it->second.event_index, event, cls});
        open.erase(it);
      }
      ++event;
    }
  }
  if (!open.empty()) {
    if (!allow_open) {
      TensorId id = open.begin()->first;
      for (const auto& [k, v] : open) id = std::min(id, k);
      throw TraceParseError(0, "tensor id " + std::to_string(id) + " is never freed");
    }
    std::vector<TensorId> ids;
    ids.reserve(open.size());
    for (const auto& [id, _] : open) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (TensorId id : ids) {
      const auto& oa = open.at(id);
      out.lifespans.push_back(
          TensorLifespan{id, oa.size, oa.event_index, event, TensorClass::Skeletal});
    }
  }
  std::sort(out.lifespans.begin(), out.lifespans.end(),
            [](const TensorLifespan& a, const TensorLifespan& b) {
              return a.alloc_index < b.alloc_index;
            });
  for (std::size_t i = 0; i < out.lifespans.size(); ++i) {
    for (std::size_t j = i + 1; j < out.lifespans.size(); ++j) {
      const auto& a = out.lifespans[i];
      const auto& b = out.lifespans[j];
      if (a.overlaps(b))
        out.overlaps.emplace_back(std::min(a.tensor_id, b.tensor_id),
                                  std::max(a.tensor_id, b.tensor_id));
    }
  }
  std::sort(out.overlaps.begin(), out.overlaps.end());
  return out;
}

inline LifespanAnalysis extract_lifespans(const IterationTrace& trace,
                                          bool allow_open = false) {
  return extract_lifespans(std::span<const TraceSegment>(trace.segments), allow_open);
}

/// Running live bytes after each event. Throws on unmatched frees; never
/// negative for a well-formed trace by construction.
inline std::vector<Bytes> live_bytes_curve(std::span<const TraceSegment> segments) {
  std::vector<Bytes> curve;
  std::unordered_map<TensorId, Bytes> live;
  Bytes bytes = 0;
  for (const auto& seg : segments) {
    for (const auto& req : seg.requests) {
      if (req.kind == RequestKind::Malloc) {
        live.emplace(req.tensor_id, req.size);
        bytes += req.size;
      } else {
        auto it = live.find(req.tensor_id);
        if (it == live.end())
          throw TraceParseError(0, "free of tensor id " + std::to_string(req.tensor_id) +
                                       " without a prior malloc");
        bytes -= it->second;
        live.erase(it);
      }
      curve.push_back(bytes);
    }
  }
  return curve;
}

inline Bytes peak_live_bytes(std::span<const TraceSegment> segments) {
  Bytes peak = 0;
  for (Bytes b : live_bytes_curve(segments)) peak = std::max(peak, b);
  return peak;
}

// ---------------------------------------------------------------------------
// Text format
//
//   # segment <phase> [layer]
//   malloc <id> <bytes>
//   free <id> <bytes>
//
// Lines starting with '#' that are not segment headers are comments.
// ---------------------------------------------------------------------------

inline IterationTrace parse_trace(std::string_view text) {
  IterationTrace trace;
  std::unordered_map<TensorId, Bytes> open;      // live tensors
  std::unordered_map<TensorId, bool> ever_seen;  // malloc'd at any point
  std::size_t line_no = 0;
  std::size_t pos = 0;
  int max_layer = -1;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.size() - pos
                                                                           : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty()) continue;

    std::istringstream iss{std::string(line)};
    std::string tok;
    iss >> tok;
    if (tok == "#") {
      std::string what;
      iss >> what;
      if (what != "segment") continue;  // plain comment
      std::string phase_str;
      iss >> phase_str;
      auto phase = parse_phase(phase_str);
      if (!phase) throw TraceParseError(line_no, "unknown phase '" + phase_str + "'");
      TraceSegment seg;
      seg.phase = *phase;
      long layer = -1;
      if (iss >> layer) {
        if (layer < 0) throw TraceParseError(line_no, "negative layer index");
        seg.layer = static_cast<int>(layer);
        max_layer = std::max(max_layer, seg.layer);
      } else if (is_layer_phase(*phase)) {
        throw TraceParseError(line_no, "layer phase requires a layer index");
      }
      trace.segments.push_back(std::move(seg));
      continue;
    }
    if (tok != "malloc" && tok != "free")
      throw TraceParseError(line_no, "expected 'malloc', 'free' or '# segment', got '" +
                                         std::string(line) + "'");
    if (trace.segments.empty())
      throw TraceParseError(line_no, "event before any '# segment' header");
    TensorId id = 0;
    Bytes size = 0;
    if (!(iss >> id >> size))
      throw TraceParseError(line_no, "expected '<id> <bytes>' after '" + tok + "'");
    std::string extra;
    if (iss >> extra) throw TraceParseError(line_no, "trailing token '" + extra + "'");
    if (tok == "malloc") {
      if (size == 0) throw TraceParseError(line_no, "malloc of zero bytes");
      if (ever_seen.count(id))
        throw TraceParseError(line_no, "tensor id " + std::to_string(id) + " reused");
      ever_seen.emplace(id, true);
      open.emplace(id, size);
      trace.segments.back().requests.push_back({RequestKind::Malloc, id, size});
    } else {
      auto it = open.find(id);
      if (it == open.end())
        throw TraceParseError(line_no,
                              "free of tensor id " + std::to_string(id) + " without a prior malloc");
      if (it->second != size)
        throw TraceParseError(line_no, "free size " + std::to_string(size) +
                                           " does not match malloc size " +
                                           std::to_string(it->second));
      open.erase(it);
      trace.segments.back().requests.push_back({RequestKind::Free, id, size});
    }
  }
  if (!open.empty()) {
    TensorId id = open.begin()->first;
    for (const auto& [k, v] : open) id = std::min(id, k);
    throw TraceParseError(0, "tensor id " + std::to_string(id) + " is never freed");
  }
  trace.layer_count = max_layer + 1;
  return trace;
}

inline std::string serialize_trace(const IterationTrace& trace) {
  std::string out;
  for (const auto& seg : trace.segments) {
    out += "# segment ";
    out += phase_name(seg.phase);
    if (seg.layer >= 0) {
      out += ' ';
      out += std::to_string(seg.layer);
    }
    out += '\n';
    for (const auto& req : seg.requests) {
      out += req.kind == RequestKind::Malloc ? "malloc " : "free ";
      out += std::to_string(req.tensor_id);
      out += ' ';
      out += std::to_string(req.size);
      out += '\n';
    }
  }
  return out;
}

/// Checks the full-iteration segment ordering: EmbeddingFwd, n x LayerFwd
/// (0..n-1), ClassifierFwd, ClassifierBwd, n x LayerBwd (n-1..0),
/// EmbeddingBwd. Throws PlanningError on violation.
inline void validate_iteration_structure(const IterationTrace& trace) {
  const int n = trace.layer_count;
  if (n < 1) throw PlanningError("trace has no layer segments");
  const std::size_t expected = 2 * static_cast<std::size_t>(n) + 4;
  if (trace.segments.size() != expected)
    throw PlanningError("expected " + std::to_string(expected) + " segments, got " +
                        std::to_string(trace.segments.size()));
  auto expect = [&](std::size_t i, Phase p, int layer) {
    const auto& seg = trace.segments[i];
    if (seg.phase != p || seg.layer != layer)
      throw PlanningError("segment " + std::to_string(i) + " is " +
                          phase_name(seg.phase) + "/" + std::to_string(seg.layer) +
                          ", expected " + phase_name(p) + "/" + std::to_string(layer));
  };
  std::size_t i = 0;
  expect(i++, Phase::EmbeddingFwd, -1);
  for (int l = 0; l < n; ++l) expect(i++, Phase::LayerFwd, l);
  expect(i++, Phase::ClassifierFwd, -1);
  expect(i++, Phase::ClassifierBwd, -1);
  for (int l = n - 1; l >= 0; --l) expect(i++, Phase::LayerBwd, l);
  expect(i++, Phase::EmbeddingBwd, -1);
}

/// Canonical shape of a request sequence: tensor ids replaced by their order
/// of first appearance. Two segments are identical modulo ids iff their
/// canonical shapes are equal.
inline std::vector<MemoryRequest> canonical_requests(const TraceSegment& seg) {
  std::vector<MemoryRequest> out;
  out.reserve(seg.requests.size());
  std::unordered_map<TensorId, TensorId> remap;
  for (const auto& req : seg.requests) {
    auto [it, inserted] = remap.emplace(req.tensor_id, remap.size());
    out.push_back({req.kind, it->second, req.size});
  }
  return out;
}

}  // namespace actmem
