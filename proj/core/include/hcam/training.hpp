#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcam/adam.hpp"
#include "hcam/memory_stack.hpp"
#include "hcam/task_model.hpp"

namespace hcam {

struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  AdamConfig optimizer;
  std::size_t batch = 32;
  std::size_t steps = 30000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 512;
  std::uint64_t seed = 1;
  double aux_weight = 1.0;
  /// PAI chain 3: share of training episodes that query a direct pair
  /// instead. Evaluation always uses the configured chain length.
  double direct_fraction = 0.0;
  /// Stop once an evaluation reaches this accuracy; 0 disables.
  double target_accuracy = 0.0;
  /// When false the wall_ms column is written as 0, making metrics files
  /// comparable byte for byte across runs.
  bool record_wall_time = true;
  std::string metrics_path;     // empty: no CSV
  std::string checkpoint_path;  // empty: no checkpoint
};

/// Defaults for a task: PAI stores pairs, so its chunk size is 2.
RunConfig default_run_config(TaskKind task);

/// Applies one `key value` setting (keys are the long flag names without
/// dashes, e.g. "chunk-size"). Throws ConfigError for unknown keys or
/// unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads a flat `key = value` / `key value` file; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
  double wall_ms = 0.0;
  std::uint64_t attention_score_count = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,train_acc,eval_acc,wall_ms,attention_score_count";
std::string format_metrics_row(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::size_t steps_run = 0;
  double final_eval_accuracy = 0.0;
  bool reached_target = false;
};

/// Supervised training: fresh episodes every update, memories reset per
/// episode, Adam, parameters kept at float precision. Writes the metrics CSV
/// and checkpoint named in the config. Throws TrainingError on a non-finite
/// loss.
TrainResult train(const RunConfig& config, TaskModel& model, std::ostream* log = nullptr);

/// Mean argmax accuracy over freshly generated episodes; no updates.
double evaluate(const TaskModel& model, std::size_t episodes, std::uint64_t seed,
                std::size_t batch = 64);

/// Seed of the evaluation episode stream derived from a run seed.
std::uint64_t eval_stream_seed(std::uint64_t seed);
/// Seed of the training episode stream derived from a run seed.
std::uint64_t train_stream_seed(std::uint64_t seed);

}  // namespace hcam
