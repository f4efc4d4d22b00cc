#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "hcam/tensor.hpp"

namespace hcam {

struct PaiSpec {
  std::size_t chain_length = 1;  // 1 (direct pair) or 3 (one intermediate hop)
  std::size_t n_pairs = 6;
  std::size_t pool_size = 1000;
  /// Chain 3 only: probability that an episode asks for the probe's direct
  /// partner instead. A training curriculum; such episodes are generated as
  /// chain 1 and say so in their spec.
  double direct_fraction = 0.0;

  bool operator==(const PaiSpec&) const = default;
};

/// A fixed pool of random unit vectors. Episodes refer to items by index.
class PaiItemPool {
 public:
  PaiItemPool(std::size_t dim, std::size_t size, std::uint64_t seed = 0x5eed'ba11'0000'0001ULL);

  std::size_t dim() const noexcept { return items_.cols(); }
  std::size_t size() const noexcept { return items_.rows(); }
  const Tensor& items() const noexcept { return items_; }
  std::span<const double> item(std::size_t i) const { return items_.row(i); }

 private:
  Tensor items_;
};

/// Memory holds floor(n_pairs / 2) triplets stored as pairs (A, B) and
/// (B, C), in shuffled order, plus one unrelated pair when n_pairs is odd.
/// The probe is some triplet's A; the answer is its B (chain 1) or C
/// (chain 3). The lure plays the same role in a different triplet.
struct PaiEpisode {
  PaiSpec spec;
  std::vector<std::array<std::size_t, 2>> pairs;  // pool indices, memory order
  std::size_t probe = 0;
  std::array<std::size_t, 2> choices{};
  std::size_t label = 0;  // index into choices of the correct item

  std::size_t answer() const { return choices[label]; }
  std::size_t lure() const { return choices[1 - label]; }
  bool operator==(const PaiEpisode&) const = default;
};

/// Throws ContractError for an unsupported chain length, too few pairs, or
/// when the pool cannot supply enough distinct items.
PaiEpisode generate_pai_episode(const PaiSpec& spec, std::uint64_t seed);

}  // namespace hcam
