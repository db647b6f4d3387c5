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
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "actmem/bilevel.hpp"
#include "actmem/trace.hpp"
#include "actmem/types.hpp"

namespace actmem {

/// Deliberately simplified caching-allocator model: two pools split at a
/// size threshold, best-fit within cached free blocks, block splitting above
/// a remainder floor, segment growth on miss, and an emergency release of
/// all-free segments when a reservation would exceed capacity. It exhibits
/// the fragmentation/reorganization mechanism deterministically without
/// cloning any particular framework allocator.
struct CachingAllocatorConfig {
  Bytes capacity = 0;  // 0 = unbounded
  Bytes small_pool_threshold = kMiB;
  Bytes rounding = 512;
  Bytes split_remainder_min = 512;
  Bytes small_segment_size = 2 * kMiB;  // small requests share segments
  bool reorganize_on_failure = true;

  void validate() const {
    if (small_pool_threshold == 0) throw ConfigError("small_pool_threshold must be positive");
    if (rounding == 0 || (rounding & (rounding - 1)) != 0)
      throw ConfigError("rounding must be a power of two");
    if (split_remainder_min == 0) throw ConfigError("split_remainder_min must be positive");
  }
};

struct FragTimelinePoint {
  std::size_t event_index = 0;
  Bytes reserved = 0;
  Bytes allocated = 0;
};

struct FragReport {
  Bytes peak_reserved = 0;
  Bytes peak_allocated = 0;
  // Reserved-but-unallocated bytes measured where allocation peaks, the
  // "reserved but not allocated at the peaks of the curves" gap. Cached
  // memory sitting idle between bursts is reuse, not fragmentation.
  Bytes peak_fragmentation = 0;
  std::uint64_t reorganizations = 0;
  bool oom = false;
  std::size_t oom_event = 0;  // first event that could not be served
  std::vector<FragTimelinePoint> timeline;

  void observe(std::size_t event, Bytes reserved, Bytes allocated, bool keep_timeline) {
    peak_reserved = std::max(peak_reserved, reserved);
    if (allocated > peak_allocated) {
      peak_allocated = allocated;
      peak_fragmentation = reserved - allocated;
    } else if (allocated == peak_allocated) {
      peak_fragmentation = std::max(peak_fragmentation, reserved - allocated);
    }
    if (keep_timeline) timeline.push_back({event, reserved, allocated});
  }
};

namespace detail {

struct CacheBlock {
  Bytes size = 0;
  bool free = true;
};

struct CacheSegment {
  Bytes size = 0;
  bool small = false;
  std::map<Bytes, CacheBlock> blocks;  // offset -> block

  bool fully_free() const {
    for (const auto& [off, b] : blocks)
      if (!b.free) return false;
    return true;
  }
};

class CachingAllocator {
 public:
  explicit CachingAllocator(const CachingAllocatorConfig& cfg) : cfg_(cfg) {}

  bool malloc(TensorId id, Bytes size) {
    const Bytes rsize = align_up(size, cfg_.rounding);
    const bool small = rsize < cfg_.small_pool_threshold;
    if (try_cached(id, rsize, small)) return true;
    const Bytes seg_size = small ? std::max(rsize, cfg_.small_segment_size) : rsize;
    if (try_reserve(id, rsize, small, seg_size)) return true;
    if (cfg_.reorganize_on_failure) {
      release_unused_segments();
      ++reorganizations_;
      if (try_cached(id, rsize, small)) return true;
      if (try_reserve(id, rsize, small, seg_size)) return true;
    }
    return false;
  }

  void free(TensorId id) {
    auto it = where_.find(id);
    if (it == where_.end()) throw TraceParseError(0, "free of unknown tensor");
    auto& seg = segments_[it->second.first];
    auto blk = seg.blocks.find(it->second.second);
    blk->second.free = true;
    allocated_ -= live_.at(id);
    live_.erase(id);
    where_.erase(it);
    // Coalesce with the next and previous blocks.
    auto next = std::next(blk);
    if (next != seg.blocks.end() && next->second.free) {
      blk->second.size += next->second.size;
      seg.blocks.erase(next);
    }
    if (blk != seg.blocks.begin()) {
      auto prev = std::prev(blk);
      if (prev->second.free) {
        prev->second.size += blk->second.size;
        seg.blocks.erase(blk);
      }
    }
  }

  Bytes reserved() const { return reserved_; }
  Bytes allocated() const { return allocated_; }
  std::uint64_t reorganizations() const { return reorganizations_; }

 private:
  bool try_cached(TensorId id, Bytes rsize, bool small) {
    std::size_t best_seg = 0;
    Bytes best_off = 0, best_size = 0;
    bool found = false;
    for (std::size_t si = 0; si < segments_.size(); ++si) {
      if (segments_[si].small != small) continue;
      for (const auto& [off, b] : segments_[si].blocks) {
        if (!b.free || b.size < rsize) continue;
        if (!found || b.size < best_size) {
          found = true;
          best_seg = si;
          best_off = off;
          best_size = b.size;
        }
      }
    }
    if (!found) return false;
    occupy(best_seg, best_off, rsize);
    record(id, best_seg, best_off, rsize);
    return true;
  }

  bool try_reserve(TensorId id, Bytes rsize, bool small, Bytes seg_size) {
    if (cfg_.capacity != 0 && reserved_ + seg_size > cfg_.capacity) return false;
    CacheSegment seg;
    seg.size = seg_size;
    seg.small = small;
    seg.blocks[0] = {seg_size, true};
    segments_.push_back(std::move(seg));
    reserved_ += seg_size;
    occupy(segments_.size() - 1, 0, rsize);
    record(id, segments_.size() - 1, 0, rsize);
    return true;
  }

  void occupy(std::size_t si, Bytes off, Bytes rsize) {
    auto& seg = segments_[si];
    auto& blk = seg.blocks.at(off);
    if (blk.size >= rsize + cfg_.split_remainder_min) {
      seg.blocks[off + rsize] = {blk.size - rsize, true};
      blk.size = rsize;
    }
    blk.free = false;
  }

  void record(TensorId id, std::size_t si, Bytes off, Bytes rsize) {
    where_[id] = {si, off};
    live_[id] = rsize;
    allocated_ += rsize;
  }

  void release_unused_segments() {
    // Drop fully-free segments; indices shift, so rebuild the id map.
    std::vector<std::size_t> remap(segments_.size());
    std::vector<CacheSegment> kept;
    for (std::size_t si = 0; si < segments_.size(); ++si) {
      if (segments_[si].fully_free()) {
        reserved_ -= segments_[si].size;
        remap[si] = static_cast<std::size_t>(-1);
      } else {
        remap[si] = kept.size();
        kept.push_back(std::move(segments_[si]));
      }
    }
    segments_ = std::move(kept);
    for (auto& [id, loc] : where_) loc.first = remap[loc.first];
  }

  CachingAllocatorConfig cfg_;
  std::vector<CacheSegment> segments_;
  std::unordered_map<TensorId, std::pair<std::size_t, Bytes>> where_;  // id -> (segment, offset)
  std::unordered_map<TensorId, Bytes> live_;                           // id -> rounded size
  Bytes reserved_ = 0;
  Bytes allocated_ = 0;
  std::uint64_t reorganizations_ = 0;
};

}  // namespace detail

/// Replays the full trace through the caching model. OOM is data, not an
/// error: the replay stops at the first unserviceable request and the report
/// says so.
inline FragReport simulate_caching_allocator(const IterationTrace& trace,
                                             const CachingAllocatorConfig& cfg,
                                             bool keep_timeline = false) {
  cfg.validate();
  detail::CachingAllocator alloc(cfg);
  FragReport rep;
  std::size_t ev = 0;
  for (const auto& seg : trace.segments) {
    for (const auto& req : seg.requests) {
      if (req.kind == RequestKind::Malloc) {
        if (!alloc.malloc(req.tensor_id, req.size)) {
          rep.oom = true;
          rep.oom_event = ev;
          rep.reorganizations = alloc.reorganizations();
          return rep;
        }
      } else {
        alloc.free(req.tensor_id);
      }
      rep.observe(ev, alloc.reserved(), alloc.allocated(), keep_timeline);
      ++ev;
    }
  }
  rep.reorganizations = alloc.reorganizations();
  return rep;
}

/// Replays the trace against the static plan: reserved is a constant arena
/// (plus any fixed extra such as the rounding buffers), allocated follows
/// the live bytes of planned tensors, and nothing ever reorganizes.
inline FragReport simulate_planned(const IterationTrace& trace, const GlobalPlan& plan,
                                   Bytes extra_reserved = 0, bool keep_timeline = false) {
  const MemoryPlan expanded = expand_global_plan(plan);
  FragReport rep;
  const Bytes reserved = plan.total_peak + extra_reserved;
  rep.peak_reserved = reserved;
  Bytes allocated = 0;
  std::size_t ev = 0;
  for (const auto& seg : trace.segments) {
    for (const auto& req : seg.requests) {
      if (expanded.addresses.count(req.tensor_id)) {
        if (req.kind == RequestKind::Malloc)
          allocated += req.size;
        else
          allocated -= req.size;
      }
      rep.observe(ev, reserved, allocated, keep_timeline);
      ++ev;
    }
  }
  return rep;
}

struct FragComparison {
  FragReport caching;
  FragReport planned;
  std::int64_t reserved_delta = 0;       // caching - planned
  std::int64_t fragmentation_delta = 0;  // caching - planned
  std::int64_t reorganizations_delta = 0;
};

inline FragComparison compare(const FragReport& caching, const FragReport& planned) {
  FragComparison cmp;
  cmp.caching = caching;
  cmp.planned = planned;
  cmp.reserved_delta = static_cast<std::int64_t>(caching.peak_reserved) -
                       static_cast<std::int64_t>(planned.peak_reserved);
  cmp.fragmentation_delta = static_cast<std::int64_t>(caching.peak_fragmentation) -
                            static_cast<std::int64_t>(planned.peak_fragmentation);
  cmp.reorganizations_delta = static_cast<std::int64_t>(caching.reorganizations) -
                              static_cast<std::int64_t>(planned.reorganizations);
  return cmp;
}

}  // namespace actmem
