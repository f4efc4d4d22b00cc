#include "hcam/ballet.hpp"

#include <algorithm>
#include <numeric>

#include "hcam/errors.hpp"
#include "hcam/ops.hpp"
#include "hcam/random.hpp"

namespace hcam {

const std::array<Dance, kDanceCount>& dance_table() {
  static const std::array<Dance, kDanceCount> table{{
      {"circle_cw", {0, 2, 4, 4, 6, 6, 0, 0, 2, 2, 4, 4, 6, 6, 0, 2}},
      {"circle_ccw", {0, 6, 4, 4, 2, 2, 0, 0, 6, 6, 4, 4, 2, 2, 0, 6}},
      {"up_down", {0, 4, 4, 0, 0, 4, 4, 0, 0, 4, 4, 0, 0, 4, 4, 0}},
      {"left_right", {2, 6, 6, 2, 2, 6, 6, 2, 2, 6, 6, 2, 2, 6, 6, 2}},
      {"diagonal_uldr", {7, 3, 3, 7, 7, 3, 3, 7, 7, 3, 3, 7, 7, 3, 3, 7}},
      {"diagonal_urdl", {1, 5, 5, 1, 1, 5, 5, 1, 1, 5, 5, 1, 1, 5, 5, 1}},
      {"plus_cw", {0, 4, 2, 6, 4, 0, 6, 2, 0, 4, 2, 6, 4, 0, 6, 2}},
      {"plus_ccw", {0, 4, 6, 2, 4, 0, 2, 6, 0, 4, 6, 2, 4, 0, 2, 6}},
      {"times_cw", {1, 5, 3, 7, 5, 1, 7, 3, 1, 5, 3, 7, 5, 1, 7, 3}},
      {"times_ccw", {7, 3, 5, 1, 3, 7, 1, 5, 7, 3, 5, 1, 3, 7, 1, 5}},
      {"zee", {1, 6, 6, 2, 2, 5, 1, 5, 5, 2, 2, 6, 6, 1, 5, 1}},
      {"chevron_down", {7, 4, 3, 1, 0, 5, 1, 5, 1, 4, 5, 7, 0, 3, 7, 3}},
      {"chevron_up", {3, 0, 7, 5, 4, 1, 5, 1, 5, 0, 1, 3, 4, 7, 3, 7}},
  }};
  return table;
}

std::size_t ballet_episode_length(const BalletSpec& spec) {
  if (spec.n_dances == 0) return 1;
  return spec.n_dances * kDanceLength + (spec.n_dances - 1) * spec.delay + 1;
}

BalletEpisode generate_ballet_episode(const BalletSpec& spec, std::uint64_t seed) {
  if (spec.n_dances == 0 || spec.n_dances > kDanceCount) {
    throw ContractError("ballet needs 1.." + std::to_string(kDanceCount) +
                        " dances, got " + std::to_string(spec.n_dances));
  }
  Rng rng(seed);
  std::vector<std::size_t> all(kDanceCount);
  std::iota(all.begin(), all.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(all));

  BalletEpisode ep;
  ep.spec = spec;
  ep.dances.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.n_dances));
  ep.dancers.resize(spec.n_dances);
  std::iota(ep.dancers.begin(), ep.dancers.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(ep.dancers));
  const std::size_t asked = static_cast<std::size_t>(rng.below(spec.n_dances));
  ep.query = ep.dances[asked];
  ep.label = ep.dancers[asked];

  ep.tokens.reserve(ballet_episode_length(spec));
  const auto& table = dance_table();
  for (std::size_t i = 0; i < spec.n_dances; ++i) {
    if (i > 0) ep.tokens.insert(ep.tokens.end(), spec.delay, BalletToken{});
    for (auto move : table[ep.dances[i]].moves) {
      ep.tokens.push_back(BalletToken{static_cast<std::int32_t>(ep.dancers[i]), move, kNone});
    }
  }
  ep.tokens.push_back(BalletToken{kNone, kNone, static_cast<std::int32_t>(ep.query)});
  return ep;
}

std::size_t dancer_row(const BalletToken& token) {
  return token.dancer == kNone ? kDancerVocab - 1 : static_cast<std::size_t>(token.dancer);
}

std::size_t direction_row(const BalletToken& token) {
  return token.direction == kNone ? kDirectionVocab - 1
                                  : static_cast<std::size_t>(token.direction);
}

std::size_t query_row(const BalletToken& token) {
  return token.query == kNone ? 0 : static_cast<std::size_t>(token.query) + 1;
}

Tensor encode_ballet_token(const BalletToken& token, const BalletEmbeddings& tables) {
  const std::size_t d = tables.dancer.cols();
  if (tables.direction.cols() != d || tables.query.cols() != d) {
    throw DimensionError("ballet embedding tables differ in width");
  }
  const std::size_t rows[3] = {dancer_row(token), direction_row(token), query_row(token)};
  const Tensor* parts[3] = {&tables.dancer, &tables.direction, &tables.query};
  Tensor out(Shape{d});
  for (int p = 0; p < 3; ++p) {
    if (rows[p] >= parts[p]->rows()) {
      throw IndexError("ballet token component out of range for its table");
    }
    const auto src = parts[p]->row(rows[p]);
    for (std::size_t c = 0; c < d; ++c) out[c] += src[c];
  }
  return out;
}

Var encode_ballet_tokens(std::span<const BalletToken> tokens, Var dancer_table,
                         Var direction_table, Var query_table) {
  std::vector<std::size_t> dancers, directions, queries;
  dancers.reserve(tokens.size());
  directions.reserve(tokens.size());
  queries.reserve(tokens.size());
  for (const auto& t : tokens) {
    dancers.push_back(dancer_row(t));
    directions.push_back(direction_row(t));
    queries.push_back(query_row(t));
  }
  return add(add(embed_lookup(dancer_table, dancers), embed_lookup(direction_table, directions)),
             embed_lookup(query_table, queries));
}

Var ballet_loss(Var logits, std::size_t label) { return cross_entropy_logits(logits, label); }

Var reconstruction_aux_loss(Var dancer_logits, Var direction_logits,
                            std::span<const BalletToken> tokens) {
  std::vector<std::size_t> dancers, directions;
  for (const auto& t : tokens) {
    dancers.push_back(dancer_row(t));
    directions.push_back(direction_row(t));
  }
  return add(cross_entropy_rows(dancer_logits, dancers),
             cross_entropy_rows(direction_logits, directions));
}

std::size_t argmax(std::span<const double> row) {
  if (row.empty()) throw ContractError("argmax of an empty row");
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace hcam
