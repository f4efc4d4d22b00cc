#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace hcam {

/// xoshiro256** seeded through splitmix64. Every derived quantity
/// (uniforms, normals, bounded integers) is computed here rather than via
/// <random> distributions so streams are identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
};

/// splitmix64 finalizer, used to derive independent per-episode seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace hcam
