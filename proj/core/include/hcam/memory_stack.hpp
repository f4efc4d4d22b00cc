#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hcam/attention.hpp"
#include "hcam/chunk_memory.hpp"
#include "hcam/parameters.hpp"
#include "hcam/tape.hpp"

namespace hcam {

class Rng;

enum class ModelKind { hcam, trxl, trxl_topk, lstm };

std::string to_string(ModelKind kind);
/// Accepts "hcam", "trxl", "trxl-topk"/"trxl_topk" and "lstm".
ModelKind parse_model_kind(std::string_view text);

struct ModelConfig {
  ModelKind kind = ModelKind::hcam;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t chunk_size = 8;
  std::size_t top_k = 2;
  std::size_t window = 16;
  std::size_t xl_length = 32;
  std::size_t mlp_hidden = 128;
  std::size_t overlap = 0;
  std::size_t capacity = 4096;
  bool chunk_positions = true;

  /// Throws ContractError naming the first violated constraint.
  void validate() const;
  /// Keys one query may attend to in the windowed sub-block.
  std::size_t attention_span() const;
  bool uses_memory() const { return kind == ModelKind::hcam; }
};

/// Rows of recent layer inputs, oldest first, capped at `limit`.
class RowHistory {
 public:
  RowHistory() = default;
  RowHistory(std::size_t width, std::size_t limit) : width_(width), limit_(limit) {}

  void append(std::span<const double> rows);
  void clear() { data_.clear(); }
  std::size_t rows() const noexcept { return width_ == 0 ? 0 : data_.size() / width_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t limit() const noexcept { return limit_; }
  std::span<const double> data() const noexcept { return data_; }

 private:
  std::size_t width_ = 0;
  std::size_t limit_ = 0;
  std::vector<double> data_;
};

/// Per-rollout recurrent state of a MemoryStack.
struct StackState {
  std::vector<ChunkMemory> memories;  // one per layer (hcam)
  std::vector<RowHistory> history;    // recent layer inputs (window / XL span)
  std::vector<std::vector<double>> lstm_hidden;
  std::vector<std::vector<double>> lstm_cell;
  std::uint64_t steps = 0;

  void reset();
};

struct LstmWeights {
  Var input;      // [in x 4h], gate blocks ordered input, forget, candidate, output
  Var recurrent;  // [h x 4h]
  Var bias;       // [4h]
};

struct LstmOutput {
  Var hidden;
  Var cell;
};

/// One LSTM update for a batch of rows: x [B x in], h and c [B x h].
LstmOutput lstm_cell(Var x, Var hidden, Var cell, const LstmWeights& w);

struct StackForwardOptions {
  /// PAI preloads memories and disables writes.
  bool write_memory = true;
};

/// The layered sequence model: per layer local (or XL) attention, the
/// hierarchical memory read and an MLP, or a stack of LSTM cells.
class MemoryStack {
 public:
  MemoryStack(const ModelConfig& config, ParameterSet& params, Rng& rng,
              const std::string& prefix = "stack");

  const ModelConfig& config() const noexcept { return config_; }
  StackState initial_state() const;

  /// Runs `states.size()` independent streams of equal length. `inputs` is
  /// [B*T x d] with each stream's rows contiguous; the result has the same
  /// layout. Streams continue from their states, which are advanced.
  Var forward(Var inputs, std::span<StackState> states,
              const StackForwardOptions& options = {},
              AttentionCounters* counters = nullptr) const;

  /// One step of one stream.
  Tensor step(StackState& state, std::span<const double> x) const;
  /// T steps of one stream, optionally from a reset state.
  Tensor forward_sequence(StackState& state, const Tensor& inputs, bool reset) const;

  std::size_t parameter_count() const;

 private:
  struct Layer {
    Parameter* ln1_gain = nullptr;
    Parameter* ln1_bias = nullptr;
    AttentionParams attention;
    HcamParams memory;
    Parameter* ln3_gain = nullptr;
    Parameter* ln3_bias = nullptr;
    Parameter* mlp_in = nullptr;
    Parameter* mlp_in_bias = nullptr;
    Parameter* mlp_out = nullptr;
    Parameter* mlp_out_bias = nullptr;
    Parameter* lstm_input = nullptr;
    Parameter* lstm_recurrent = nullptr;
    Parameter* lstm_bias = nullptr;
  };

  Var transformer_layer(std::size_t index, Var x, std::span<StackState> states,
                        std::size_t steps, const StackForwardOptions& options,
                        AttentionCounters* counters) const;
  Var lstm_forward(Var x, std::span<StackState> states, std::size_t steps) const;

  ModelConfig config_;
  std::vector<Layer> layers_;
  const ParameterSet* params_;
  std::string prefix_;
  Tensor positions_;  // [span x d]
};

}  // namespace hcam
