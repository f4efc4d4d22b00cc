#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hcam/tape.hpp"
#include "hcam/tensor.hpp"

namespace hcam {

inline constexpr std::size_t kDanceCount = 13;
inline constexpr std::size_t kDanceLength = 16;
inline constexpr std::size_t kDirectionCount = 8;
/// Marks an absent token component.
inline constexpr std::int32_t kNone = -1;

/// Embedding-table sizes: every component has one extra row for NONE. The
/// query table row 0 means "not a query"; row 1 + j queries dance j.
inline constexpr std::size_t kDancerVocab = kDanceCount + 1;
inline constexpr std::size_t kDirectionVocab = kDirectionCount + 1;
inline constexpr std::size_t kQueryVocab = kDanceCount + 1;

struct Dance {
  std::string_view name;
  std::array<std::uint8_t, kDanceLength> moves;  // 0 = up, clockwise
};

const std::array<Dance, kDanceCount>& dance_table();

struct BalletToken {
  std::int32_t dancer = kNone;
  std::int32_t direction = kNone;
  std::int32_t query = kNone;  // dance index, only on the final token

  bool operator==(const BalletToken&) const = default;
};

struct BalletSpec {
  std::size_t n_dances = 2;
  std::size_t delay = 16;

  bool operator==(const BalletSpec&) const = default;
};

struct BalletEpisode {
  BalletSpec spec;
  std::vector<BalletToken> tokens;
  std::vector<std::size_t> dances;   // table index, in performance order
  std::vector<std::size_t> dancers;  // dancer id, in performance order
  std::size_t query = 0;             // table index of the queried dance
  std::size_t label = 0;             // dancer who performed it

  bool operator==(const BalletEpisode&) const = default;
};

/// n * 16 dance steps, (n - 1) * delay blank steps and one query step.
std::size_t ballet_episode_length(const BalletSpec& spec);

/// Throws ContractError unless 1 <= n_dances <= 13.
BalletEpisode generate_ballet_episode(const BalletSpec& spec, std::uint64_t seed);

/// Embedding-table row of each component.
std::size_t dancer_row(const BalletToken& token);
std::size_t direction_row(const BalletToken& token);
std::size_t query_row(const BalletToken& token);

struct BalletEmbeddings {
  Tensor dancer;     // [kDancerVocab x d]
  Tensor direction;  // [kDirectionVocab x d]
  Tensor query;      // [kQueryVocab x d]
};

/// Sum of the three component embeddings.
Tensor encode_ballet_token(const BalletToken& token, const BalletEmbeddings& tables);

/// Batched encoder on a tape: one row per token, in the given order.
Var encode_ballet_tokens(std::span<const BalletToken> tokens, Var dancer_table,
                         Var direction_table, Var query_table);

/// Cross entropy of the final-step logits against the performer.
Var ballet_loss(Var logits, std::size_t label);

/// Sum over steps of the dancer and direction cross entropies.
/// `dancer_logits` is [T x kDancerVocab], `direction_logits` [T x kDirectionVocab].
Var reconstruction_aux_loss(Var dancer_logits, Var direction_logits,
                            std::span<const BalletToken> tokens);

/// Index of the largest entry; the earliest wins ties.
std::size_t argmax(std::span<const double> row);

}  // namespace hcam
