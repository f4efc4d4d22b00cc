#include "hcam/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hcam/checkpoint.hpp"
#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace hcam {

RunConfig default_run_config(TaskKind task) {
  RunConfig config;
  config.task.kind = task;
  if (task == TaskKind::pai) {
    config.model.chunk_size = 2;
    config.steps = 20000;
    config.aux_weight = 0.0;
  }
  return config;
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid integer for '" + key + "': '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), last, out);
  if (ec != std::errc{} || ptr != last || !std::isfinite(out)) {
    throw ConfigError("invalid number for '" + key + "': '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + value + "'");
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  auto size = [&] { return parse_integer<std::size_t>(key, value); };
  try {
    if (key == "task") c.task.kind = parse_task_kind(value);
    else if (key == "dances") c.task.ballet.n_dances = size();
    else if (key == "delay") c.task.ballet.delay = size();
    else if (key == "chain-length") c.task.pai.chain_length = size();
    else if (key == "n-pairs") c.task.pai.n_pairs = size();
    else if (key == "pool-size") c.task.pai.pool_size = size();
    else if (key == "direct-fraction") {
      c.direct_fraction = parse_real(key, value);
      if (!(c.direct_fraction >= 0.0 && c.direct_fraction <= 1.0)) {
        throw ConfigError("direct-fraction must lie in [0, 1]");
      }
    }
    else if (key == "model") c.model.kind = parse_model_kind(value);
    else if (key == "chunk-size") c.model.chunk_size = size();
    else if (key == "top-k") c.model.top_k = size();
    else if (key == "layers") c.model.layers = size();
    else if (key == "d-model") c.model.d_model = size();
    else if (key == "heads") c.model.heads = size();
    else if (key == "window") c.model.window = size();
    else if (key == "xl-length") c.model.xl_length = size();
    else if (key == "mlp-hidden") c.model.mlp_hidden = size();
    else if (key == "overlap") c.model.overlap = size();
    else if (key == "capacity") c.model.capacity = size();
    else if (key == "chunk-positions") c.model.chunk_positions = parse_bool(key, value);
    else if (key == "aux-weight") c.aux_weight = parse_real(key, value);
    else if (key == "lr") c.optimizer.learning_rate = parse_real(key, value);
    else if (key == "beta1") c.optimizer.beta1 = parse_real(key, value);
    else if (key == "beta2") c.optimizer.beta2 = parse_real(key, value);
    else if (key == "epsilon") c.optimizer.epsilon = parse_real(key, value);
    else if (key == "batch") c.batch = size();
    else if (key == "steps") c.steps = size();
    else if (key == "eval-every") c.eval_every = size();
    else if (key == "eval-episodes") c.eval_episodes = size();
    else if (key == "seed") c.seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "target-acc") c.target_accuracy = parse_real(key, value);
    else if (key == "wall-time") c.record_wall_time = parse_bool(key, value);
    else if (key == "out") c.metrics_path = value;
    else if (key == "checkpoint") c.checkpoint_path = value;
    else throw ConfigError("unknown setting '" + key + "'");
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto split = line.find('=');
    if (split == std::string::npos) split = line.find_first_of(" \t");
    if (split == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, split));
    std::string value = trim(line.substr(split + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.6f,%.3f,%llu", row.step, row.train_loss,
                row.train_acc, row.eval_acc, row.wall_ms,
                static_cast<unsigned long long>(row.attention_score_count));
  return buf;
}

std::uint64_t train_stream_seed(std::uint64_t seed) { return mix_seed(seed, 1); }
std::uint64_t eval_stream_seed(std::uint64_t seed) { return mix_seed(seed, 2); }

double evaluate(const TaskModel& model, std::size_t episodes, std::uint64_t seed,
                std::size_t batch) {
  if (episodes == 0) throw ContractError("evaluate needs at least one episode");
  if (batch == 0) throw ContractError("evaluate needs a positive batch size");
  std::size_t correct = 0;
  for (std::size_t first = 0; first < episodes; first += batch) {
    const std::size_t n = std::min(batch, episodes - first);
    const EpisodeBatch eps = generate_batch(model.task(), seed, first, n);
    Tape tape;
    correct += model.run(tape, eps).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(episodes);
}

namespace {

std::string norm_report(const ParameterSet& params) {
  std::vector<std::pair<double, std::string>> norms;
  double total = 0.0;
  for (const auto& p : params) {
    double s = 0.0;
    for (double v : p.value.values()) s += v * v;
    total += s;
    norms.emplace_back(std::sqrt(s), p.name);
  }
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
    return !(a.first <= b.first);  // NaN first, then descending
  });
  std::ostringstream out;
  out << "global=" << std::sqrt(total);
  for (std::size_t i = 0; i < std::min<std::size_t>(3, norms.size()); ++i) {
    out << ' ' << norms[i].second << '=' << norms[i].first;
  }
  return out.str();
}

}  // namespace

TrainResult train(const RunConfig& config, TaskModel& model, std::ostream* log) {
  if (config.batch == 0) throw ConfigError("batch must be >= 1");
  ParameterSet& params = model.parameters();
  params.round_to_float();
  AdamState adam = AdamState::for_parameters(params, config.optimizer);

  std::ofstream csv;
  if (!config.metrics_path.empty()) {
    csv.open(config.metrics_path, std::ios::out | std::ios::trunc);
    if (!csv) throw ConfigError("cannot write metrics file '" + config.metrics_path + "'");
    csv << kMetricsHeader << '\n';
  }

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t train_seed = train_stream_seed(config.seed);
  TaskSpec train_task = config.task;
  train_task.pai.direct_fraction = config.direct_fraction;
  const std::uint64_t eval_seed = eval_stream_seed(config.seed);
  const double aux = config.task.kind == TaskKind::ballet ? config.aux_weight : 0.0;
  const std::size_t every = config.eval_every == 0 ? config.steps : config.eval_every;

  TrainResult result;
  AttentionCounters counters;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t seen = 0;
  std::size_t updates = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const EpisodeBatch batch =
        generate_batch(train_task, train_seed, (step - 1) * config.batch, config.batch);
    Tape tape;
    const BatchOutput out = model.run(tape, batch, aux, &counters);
    const double loss = out.loss.value().item();
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) +
                          "; parameter norms: " + norm_report(params));
    }
    const Gradients grads = tape.backward(out.loss);
    adam_step(params, grads.of(params), adam);
    params.round_to_float();

    loss_sum += loss;
    correct += out.correct;
    seen += config.batch;
    ++updates;
    result.steps_run = step;

    if (step % every == 0 || step == config.steps) {
      MetricsRow row;
      row.step = step;
      row.train_loss = loss_sum / static_cast<double>(updates);
      row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
      row.eval_acc = evaluate(model, config.eval_episodes, eval_seed);
      row.wall_ms = config.record_wall_time
                        ? std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count()
                        : 0.0;
      row.attention_score_count = counters.hierarchical_total() + counters.dense_scores +
                                  counters.window_scores;
      result.rows.push_back(row);
      result.final_eval_accuracy = row.eval_acc;
      if (csv.is_open()) csv << format_metrics_row(row) << '\n' << std::flush;
      if (log != nullptr) *log << format_metrics_row(row) << std::endl;
      loss_sum = 0.0;
      correct = 0;
      seen = 0;
      updates = 0;
      if (config.target_accuracy > 0.0 && row.eval_acc >= config.target_accuracy) {
        result.reached_target = true;
        break;
      }
    }
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, model);
  return result;
}

}  // namespace hcam
