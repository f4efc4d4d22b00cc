#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hcam {

struct BenchConfig {
  std::size_t chunks = 32;      // N
  std::size_t chunk_size = 8;   // C
  std::size_t top_k = 2;        // k
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t queries = 16;
  std::size_t trials = 20;
  std::uint64_t seed = 3;
};

struct BenchReport {
  BenchConfig config;
  std::uint64_t hcam_scores_per_query = 0;   // measured by the kernels
  std::uint64_t dense_scores_per_query = 0;
  std::uint64_t expected_hcam = 0;           // N + k*C
  std::uint64_t expected_dense = 0;          // N*C
  double hcam_median_ms = 0.0;
  double dense_median_ms = 0.0;

  bool counts_match() const {
    return hcam_scores_per_query == expected_hcam && dense_scores_per_query == expected_dense;
  }
};

/// Times the hierarchical read against dense attention over every stored
/// row, on one random memory, and records the kernels' score counters.
BenchReport run_bench(const BenchConfig& config);

/// `key=value` pairs on one line.
std::string format_bench(const BenchReport& report);

}  // namespace hcam
