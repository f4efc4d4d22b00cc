#include "hcam/episode_dump.hpp"

#include <nlohmann/json.hpp>
#include <ostream>

#include "hcam/random.hpp"

namespace hcam {

namespace {

nlohmann::json component(std::int32_t v) {
  return v == kNone ? nlohmann::json(nullptr) : nlohmann::json(v);
}

}  // namespace

std::string episode_json(const BalletEpisode& ep, std::uint64_t seed) {
  nlohmann::json dancers = nlohmann::json::array();
  nlohmann::json directions = nlohmann::json::array();
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& t : ep.tokens) {
    dancers.push_back(component(t.dancer));
    directions.push_back(component(t.direction));
    queries.push_back(component(t.query));
  }
  nlohmann::json performances = nlohmann::json::array();
  for (std::size_t i = 0; i < ep.dances.size(); ++i) {
    performances.push_back({{"dance", dance_table()[ep.dances[i]].name},
                            {"dancer", ep.dancers[i]}});
  }
  nlohmann::json j = {
      {"task", "ballet"},
      {"seed", seed},
      {"n_dances", ep.spec.n_dances},
      {"delay", ep.spec.delay},
      {"length", ep.tokens.size()},
      {"dancer", std::move(dancers)},
      {"direction", std::move(directions)},
      {"query_token", std::move(queries)},
      {"performances", std::move(performances)},
      {"query", ep.query},
      {"query_name", dance_table()[ep.query].name},
      {"label", ep.label},
  };
  return j.dump();
}

std::string episode_json(const PaiEpisode& ep, std::uint64_t seed) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : ep.pairs) pairs.push_back({p[0], p[1]});
  nlohmann::json j = {
      {"task", "pai"},
      {"seed", seed},
      {"chain_length", ep.spec.chain_length},
      {"n_pairs", ep.spec.n_pairs},
      {"pool_size", ep.spec.pool_size},
      {"pairs", std::move(pairs)},
      {"probe", ep.probe},
      {"choices", {ep.choices[0], ep.choices[1]}},
      {"label", ep.label},
  };
  return j.dump();
}

void dump_episodes(std::ostream& out, const TaskSpec& task, std::uint64_t seed,
                   std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    if (task.kind == TaskKind::ballet) {
      out << episode_json(generate_ballet_episode(task.ballet, s), s) << '\n';
    } else {
      out << episode_json(generate_pai_episode(task.pai, s), s) << '\n';
    }
  }
}

}  // namespace hcam
