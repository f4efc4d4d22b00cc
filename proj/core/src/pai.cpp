#include "hcam/pai.hpp"

#include <cmath>
#include <numeric>

#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace hcam {

PaiItemPool::PaiItemPool(std::size_t dim, std::size_t size, std::uint64_t seed)
    : items_(Shape{size, dim}) {
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i) {
    auto row = items_.row(i);
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : row) {
        v = rng.normal();
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (auto& v : row) v /= norm;
  }
}

PaiEpisode generate_pai_episode(const PaiSpec& spec, std::uint64_t seed) {
  if (spec.chain_length != 1 && spec.chain_length != 3) {
    throw ContractError("PAI chain length must be 1 or 3, got " +
                        std::to_string(spec.chain_length));
  }
  if (spec.n_pairs < spec.chain_length || spec.n_pairs == 0) {
    throw ContractError("PAI needs n_pairs >= chain length (" +
                        std::to_string(spec.n_pairs) + " < " +
                        std::to_string(spec.chain_length) + ")");
  }
  if (!(spec.direct_fraction >= 0.0 && spec.direct_fraction <= 1.0)) {
    throw ContractError("PAI direct fraction must lie in [0, 1]");
  }
  const std::size_t triplets = spec.n_pairs / 2;
  const bool spare = spec.n_pairs % 2 == 1;
  const bool fresh_lure = triplets < 2 && !(spare && triplets == 1);
  const std::size_t needed = 3 * triplets + (spare ? 2 : 0) + (fresh_lure ? 1 : 0);
  if (needed > spec.pool_size) {
    throw ContractError("insufficient items: episode needs " + std::to_string(needed) +
                        " distinct items, pool has " + std::to_string(spec.pool_size));
  }

  Rng rng(seed);
  std::vector<std::size_t> pool(spec.pool_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < needed; ++i) {
    std::swap(pool[i], pool[i + rng.below(spec.pool_size - i)]);
  }
  auto item = [&pool](std::size_t i) { return pool[i]; };

  PaiEpisode ep;
  ep.spec = spec;
  ep.spec.direct_fraction = 0.0;
  // Only drawn when enabled, so plain streams are unchanged by the option.
  if (spec.chain_length == 3 && spec.direct_fraction > 0.0 &&
      rng.uniform(0.0, 1.0) < spec.direct_fraction) {
    ep.spec.chain_length = 1;
  }
  for (std::size_t t = 0; t < triplets; ++t) {
    ep.pairs.push_back({item(3 * t), item(3 * t + 1)});
    ep.pairs.push_back({item(3 * t + 1), item(3 * t + 2)});
  }
  const std::size_t spare_base = 3 * triplets;
  if (spare) ep.pairs.push_back({item(spare_base), item(spare_base + 1)});
  rng.shuffle(std::span<std::array<std::size_t, 2>>(ep.pairs));

  // Role offset within a triplet of the correct answer: B for chain 1, C for 3.
  const std::size_t role = ep.spec.chain_length == 1 ? 1 : 2;
  std::size_t answer = 0;
  std::size_t lure = 0;
  if (triplets == 0) {
    ep.probe = item(spare_base);
    answer = item(spare_base + 1);
    lure = item(needed - 1);
  } else {
    const std::size_t t = static_cast<std::size_t>(rng.below(triplets));
    ep.probe = item(3 * t);
    answer = item(3 * t + role);
    if (triplets >= 2) {
      std::size_t other = static_cast<std::size_t>(rng.below(triplets - 1));
      if (other >= t) ++other;
      lure = item(3 * other + role);
    } else if (spare) {
      lure = item(spare_base + 1);
    } else {
      lure = item(needed - 1);
    }
  }
  ep.label = static_cast<std::size_t>(rng.below(2));
  ep.choices[ep.label] = answer;
  ep.choices[1 - ep.label] = lure;
  return ep;
}

}  // namespace hcam
