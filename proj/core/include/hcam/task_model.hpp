#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hcam/attention.hpp"
#include "hcam/ballet.hpp"
#include "hcam/memory_stack.hpp"
#include "hcam/pai.hpp"
#include "hcam/parameters.hpp"
#include "hcam/tape.hpp"

namespace hcam {

enum class TaskKind { ballet, pai };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

struct TaskSpec {
  TaskKind kind = TaskKind::ballet;
  BalletSpec ballet;
  PaiSpec pai;

  /// Number of output logits of the task head.
  std::size_t classes() const;
};

using EpisodeBatch = std::variant<std::vector<BalletEpisode>, std::vector<PaiEpisode>>;

/// Episodes first_index .. first_index + count - 1 of the stream `seed`;
/// episode i uses seed mix_seed(seed, i).
EpisodeBatch generate_batch(const TaskSpec& task, std::uint64_t seed,
                            std::uint64_t first_index, std::size_t count);
std::size_t batch_size(const EpisodeBatch& batch);

struct BatchOutput {
  Var loss;       // task loss (batch mean) plus weighted auxiliary loss
  Var task_loss;  // batch mean cross entropy
  Var logits;     // [B x classes]
  std::vector<std::size_t> labels;
  std::size_t correct = 0;
};

/// Task embeddings, the memory stack and the task readout, all registered
/// in one parameter set. Not copyable or movable: layers hold pointers
/// into the set.
class TaskModel {
 public:
  TaskModel(const ModelConfig& model, const TaskSpec& task, std::uint64_t seed);
  TaskModel(const TaskModel&) = delete;
  TaskModel& operator=(const TaskModel&) = delete;

  const ModelConfig& model_config() const noexcept { return stack_->config(); }
  const TaskSpec& task() const noexcept { return task_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const MemoryStack& stack() const noexcept { return *stack_; }
  const PaiItemPool* item_pool() const noexcept { return pool_ ? &*pool_ : nullptr; }

  /// Forward pass of a batch whose kind must match the task. `aux_weight`
  /// scales the reconstruction loss (ballet only).
  BatchOutput run(Tape& tape, const EpisodeBatch& batch, double aux_weight = 0.0,
                  AttentionCounters* counters = nullptr) const;

  /// Stack output rows [T x d] of one ballet episode, before the readout.
  Tensor ballet_features(const BalletEpisode& episode) const;
  /// The two choice logits of one PAI episode.
  std::array<double, 2> pai_forward(const PaiEpisode& episode) const;

 private:
  BatchOutput run_ballet(Tape& tape, const std::vector<BalletEpisode>& episodes,
                         double aux_weight, AttentionCounters* counters) const;
  BatchOutput run_pai(Tape& tape, const std::vector<PaiEpisode>& episodes,
                      AttentionCounters* counters) const;

  TaskSpec task_;
  ParameterSet params_;
  std::unique_ptr<MemoryStack> stack_;
  std::optional<PaiItemPool> pool_;

  // ballet
  Parameter* dancer_table_ = nullptr;
  Parameter* direction_table_ = nullptr;
  Parameter* query_table_ = nullptr;
  Parameter* final_gain_ = nullptr;
  Parameter* final_bias_ = nullptr;
  Parameter* readout_ = nullptr;
  Parameter* readout_bias_ = nullptr;
  Parameter* recon_dancer_ = nullptr;
  Parameter* recon_dancer_bias_ = nullptr;
  Parameter* recon_direction_ = nullptr;
  Parameter* recon_direction_bias_ = nullptr;
  // pai
  Parameter* item_embed_ = nullptr;
  Parameter* item_embed_bias_ = nullptr;
  Parameter* probe_projection_ = nullptr;
};

}  // namespace hcam
