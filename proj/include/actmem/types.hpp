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

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace actmem {

using Bytes = std::uint64_t;
using TensorId = std::uint64_t;
using Seconds = double;

inline constexpr Bytes kKiB = 1024;
inline constexpr Bytes kMiB = 1024 * kKiB;
inline constexpr Bytes kGiB = 1024 * kMiB;

/// Invalid input data (config files, trace files, malformed plans).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Trace text that cannot be parsed or violates trace invariants.
/// `line` is 1-based; 0 means the error is not tied to a single line.
class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what
                                     : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Planning cannot proceed (non-identical layer segments, malformed trace
/// structure, tensors that cross segments without a matching fwd/bwd pair).
class PlanningError : public std::runtime_error {
 public:
  explicit PlanningError(const std::string& what) : std::runtime_error(what) {}
};

/// Even the mandatory offload set exceeds host memory; the caller must shrink
/// the mandatory set or raise capacity. Deliberately not recoverable by
/// lowering alpha.
class CpuInfeasibleError : public std::runtime_error {
 public:
  explicit CpuInfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

/// No assignment fits the memory capacity (the live-bytes lower bound or the
/// proven optimum exceeds it).
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

/// Transformer model shape. Per-device activation sizes divide by
/// `sp_or_cp_degree` along the sequence axis and by `tp_degree` along the
/// hidden axis.
struct ModelConfig {
  std::uint64_t n_layers = 1;
  std::uint64_t hidden = 1;      // h
  std::uint64_t ffn_hidden = 1;  // h_ffn
  std::uint64_t n_heads = 1;
  std::uint64_t vocab = 1;
  std::uint64_t batch = 1;    // b
  std::uint64_t seq_len = 1;  // s, in tokens
  std::uint64_t dtype_bytes = 2;
  std::uint64_t tp_degree = 1;
  std::uint64_t sp_or_cp_degree = 1;

  // The classifier projection is tied to the embedding by default; an untied
  // head adds another vocab*h parameters.
  bool untied_classifier = false;

  // Per-layer skeletal activation components, as multiples of b*s'*h'
  // elements. Empty means the built-in defaults (see skeletal_weights()).
  std::map<std::string, double> skeletal_weight_overrides;

  std::uint64_t seq_local() const { return seq_len / sp_or_cp_degree; }
  std::uint64_t hidden_local() const { return hidden / tp_degree; }
  std::uint64_t model_gpus() const { return tp_degree * sp_or_cp_degree; }

  void validate() const {
    auto positive = [](std::uint64_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(hidden, "hidden");
    positive(ffn_hidden, "ffn_hidden");
    positive(n_heads, "n_heads");
    positive(vocab, "vocab");
    positive(batch, "batch");
    positive(seq_len, "seq_len");
    positive(dtype_bytes, "dtype_bytes");
    positive(tp_degree, "tp_degree");
    positive(sp_or_cp_degree, "sp_or_cp_degree");
    if (seq_len % sp_or_cp_degree != 0)
      throw ConfigError("seq_len must be divisible by sp_or_cp_degree");
    if (hidden % tp_degree != 0)
      throw ConfigError("hidden must be divisible by tp_degree");
  }
};

/// One device of a symmetric model-parallel group plus its host link.
struct HardwareConfig {
  double pcie_bandwidth = 32.0e9;  // bytes/second, B
  Bytes cpu_mem = 2048 * kGiB;     // M_CPU
  Bytes gpu_mem = 80 * kGiB;
  double peak_flops = 312.0e12;  // per GPU
  double efficiency = 0.5;       // achievable fraction of peak, (0, 1]

  void validate() const {
    if (pcie_bandwidth <= 0) throw ConfigError("pcie_bandwidth must be positive");
    if (cpu_mem == 0) throw ConfigError("cpu_mem must be positive");
    if (gpu_mem == 0) throw ConfigError("gpu_mem must be positive");
    if (peak_flops <= 0) throw ConfigError("peak_flops must be positive");
    if (efficiency <= 0 || efficiency > 1.0)
      throw ConfigError("efficiency must be in (0, 1]");
  }
};

inline Bytes align_up(Bytes v, Bytes alignment) {
  if (alignment <= 1) return v;
  return (v + alignment - 1) / alignment * alignment;
}

}  // namespace actmem
