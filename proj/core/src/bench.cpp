#include "hcam/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "hcam/attention.hpp"
#include "hcam/chunk_memory.hpp"
#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace hcam {

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  const AttentionOpCount expected =
      attention_op_count(config.chunks, config.chunk_size, config.top_k);
  if (config.trials == 0 || config.queries == 0) {
    throw ContractError("bench needs at least one trial and one query");
  }
  Rng rng(config.seed);
  const std::size_t d = config.d_model;
  ParameterSet params;
  const HcamParams hcam(params, "bench", d, config.heads, rng);
  ChunkMemory memory(d, ChunkMemoryConfig{config.chunk_size, 0, config.chunks});
  for (std::size_t i = 0; i < config.chunks; ++i) {
    memory.append_chunk(random_tensor(Shape{config.chunk_size, d}, rng));
  }
  const Tensor input = random_tensor(Shape{config.queries, d}, rng);

  BenchReport report;
  report.config = config;
  report.expected_hcam = expected.hierarchical;
  report.expected_dense = expected.dense;
  std::vector<double> hcam_ms, dense_ms;
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    AttentionCounters counters;
    {
      Tape tape;
      Var x = tape.constant(input);
      const HcamWeights w = hcam.bind(tape);
      const auto t0 = std::chrono::steady_clock::now();
      hcam_block(x, memory, w, config.top_k, &counters);
      hcam_ms.push_back(std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0).count());
    }
    {
      Tape tape;
      Var x = tape.constant(input);
      const HcamWeights w = hcam.bind(tape);
      const auto t0 = std::chrono::steady_clock::now();
      dense_memory_attention(x, memory, w, &counters);
      dense_ms.push_back(std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0).count());
    }
    if (trial == 0) {
      report.hcam_scores_per_query = counters.hierarchical_total() / config.queries;
      report.dense_scores_per_query = counters.dense_scores / config.queries;
    }
  }
  report.hcam_median_ms = median(hcam_ms);
  report.dense_median_ms = median(dense_ms);
  return report;
}

std::string format_bench(const BenchReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "N=%zu C=%zu k=%zu d=%zu heads=%zu queries=%zu trials=%zu "
                "hcam_scores=%llu dense_scores=%llu expected_hcam=%llu expected_dense=%llu "
                "ratio=%.3f hcam_median_ms=%.4f dense_median_ms=%.4f counts_match=%s",
                r.config.chunks, r.config.chunk_size, r.config.top_k, r.config.d_model,
                r.config.heads, r.config.queries, r.config.trials,
                static_cast<unsigned long long>(r.hcam_scores_per_query),
                static_cast<unsigned long long>(r.dense_scores_per_query),
                static_cast<unsigned long long>(r.expected_hcam),
                static_cast<unsigned long long>(r.expected_dense),
                static_cast<double>(r.expected_dense) / static_cast<double>(r.expected_hcam),
                r.hcam_median_ms, r.dense_median_ms, r.counts_match() ? "yes" : "no");
  return buf;
}

}  // namespace hcam
