#include "hcam/memory_stack.hpp"

#include <algorithm>

#include "hcam/errors.hpp"
#include "hcam/ops.hpp"
#include "hcam/random.hpp"

namespace hcam {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::hcam: return "hcam";
    case ModelKind::trxl: return "trxl";
    case ModelKind::trxl_topk: return "trxl-topk";
    case ModelKind::lstm: return "lstm";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "hcam") return ModelKind::hcam;
  if (text == "trxl") return ModelKind::trxl;
  if (text == "trxl-topk" || text == "trxl_topk") return ModelKind::trxl_topk;
  if (text == "lstm") return ModelKind::lstm;
  throw ContractError("unknown model kind '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("model config: " + what); };
  if (d_model == 0) fail("d_model must be >= 1");
  if (layers == 0) fail("layers must be >= 1");
  if (heads == 0 || d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by heads " +
         std::to_string(heads));
  }
  if (chunk_size == 0) fail("chunk_size must be >= 1");
  if (top_k == 0) fail("top_k must be >= 1");
  if (window == 0) fail("window must be >= 1");
  if (mlp_hidden == 0) fail("mlp_hidden must be >= 1");
  if (overlap >= chunk_size) fail("overlap must be < chunk_size");
  if (capacity == 0) fail("capacity must be >= 1");
}

std::size_t ModelConfig::attention_span() const {
  if (kind == ModelKind::trxl || kind == ModelKind::trxl_topk) return window + xl_length;
  return window;
}

void RowHistory::append(std::span<const double> rows) {
  if (limit_ == 0) return;
  data_.insert(data_.end(), rows.begin(), rows.end());
  const std::size_t cap = limit_ * width_;
  if (data_.size() > cap) {
    data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(data_.size() - cap));
  }
}

void StackState::reset() {
  for (auto& m : memories) m.reset();
  for (auto& h : history) h.clear();
  for (auto& h : lstm_hidden) std::fill(h.begin(), h.end(), 0.0);
  for (auto& c : lstm_cell) std::fill(c.begin(), c.end(), 0.0);
  steps = 0;
}

LstmOutput lstm_cell(Var x, Var hidden, Var cell, const LstmWeights& w) {
  const std::size_t h = hidden.value().cols();
  if (w.input.value().rank() != 2 || w.input.value().cols() != 4 * h) {
    throw DimensionError("lstm input weights must have 4*" + std::to_string(h) +
                         " columns, got " + to_string(w.input.shape()));
  }
  if (cell.shape() != hidden.shape()) {
    throw DimensionError("lstm hidden " + to_string(hidden.shape()) + " and cell " +
                         to_string(cell.shape()) + " differ");
  }
  Var gates = add(add(matmul(x, w.input), matmul(hidden, w.recurrent)), w.bias);
  Var in_gate = sigmoid(slice(gates, 1, 0, h));
  Var forget = sigmoid(slice(gates, 1, h, 2 * h));
  Var candidate = tanh(slice(gates, 1, 2 * h, 3 * h));
  Var out_gate = sigmoid(slice(gates, 1, 3 * h, 4 * h));
  Var next_cell = add(mul(forget, cell), mul(in_gate, candidate));
  return LstmOutput{mul(out_gate, tanh(next_cell)), next_cell};
}

MemoryStack::MemoryStack(const ModelConfig& config, ParameterSet& params, Rng& rng,
                         const std::string& prefix)
    : config_(config), params_(&params), prefix_(prefix) {
  config_.validate();
  const std::size_t d = config_.d_model;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Layer layer;
    if (config_.kind == ModelKind::lstm) {
      layer.lstm_input = &params.add(p + ".lstm.input", init::xavier_uniform(d, 4 * d, rng));
      layer.lstm_recurrent =
          &params.add(p + ".lstm.recurrent", init::xavier_uniform(d, 4 * d, rng));
      layer.lstm_bias = &params.add(p + ".lstm.bias", init::zeros(Shape{4 * d}));
      layers_.push_back(layer);
      continue;
    }
    layer.ln1_gain = &params.add(p + ".ln1.gain", init::ones(Shape{d}));
    layer.ln1_bias = &params.add(p + ".ln1.bias", init::zeros(Shape{d}));
    layer.attention = AttentionParams(params, p + ".attn", d, config_.heads, rng);
    if (config_.uses_memory()) {
      layer.memory = HcamParams(params, p + ".hcam", d, config_.heads, rng);
    }
    layer.ln3_gain = &params.add(p + ".ln3.gain", init::ones(Shape{d}));
    layer.ln3_bias = &params.add(p + ".ln3.bias", init::zeros(Shape{d}));
    layer.mlp_in = &params.add(p + ".mlp.w1", init::xavier_uniform(d, config_.mlp_hidden, rng));
    layer.mlp_in_bias = &params.add(p + ".mlp.b1", init::zeros(Shape{config_.mlp_hidden}));
    layer.mlp_out = &params.add(p + ".mlp.w2", init::xavier_uniform(config_.mlp_hidden, d, rng));
    layer.mlp_out_bias = &params.add(p + ".mlp.b2", init::zeros(Shape{d}));
    layers_.push_back(layer);
  }
  if (config_.kind != ModelKind::lstm) {
    positions_ = sinusoidal_positions(config_.attention_span(), d);
  }
}

StackState MemoryStack::initial_state() const {
  StackState s;
  const std::size_t d = config_.d_model;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (config_.kind == ModelKind::lstm) {
      s.lstm_hidden.emplace_back(d, 0.0);
      s.lstm_cell.emplace_back(d, 0.0);
      continue;
    }
    s.history.emplace_back(d, config_.attention_span() - 1);
    if (config_.uses_memory()) {
      s.memories.emplace_back(
          d, ChunkMemoryConfig{config_.chunk_size, config_.overlap, config_.capacity});
    }
  }
  return s;
}

std::size_t MemoryStack::parameter_count() const {
  const std::string head = prefix_ + ".";
  std::size_t n = 0;
  for (const auto& p : *params_) {
    if (p.name.compare(0, head.size(), head) == 0) n += p.value.size();
  }
  return n;
}

Var MemoryStack::forward(Var inputs, std::span<StackState> states,
                         const StackForwardOptions& options,
                         AttentionCounters* counters) const {
  const Tensor& x = inputs.value();
  if (x.rank() != 2 || x.cols() != config_.d_model) {
    throw DimensionError("stack input must be [n x " + std::to_string(config_.d_model) +
                         "], got " + to_string(x.shape()));
  }
  if (states.empty() || x.rows() % states.size() != 0) {
    throw DimensionError(std::to_string(x.rows()) + " input rows do not split into " +
                         std::to_string(states.size()) + " equal streams");
  }
  const bool lstm = config_.kind == ModelKind::lstm;
  for (const auto& s : states) {
    const std::size_t have = lstm ? s.lstm_hidden.size() : s.history.size();
    if (have != config_.layers || (config_.uses_memory() && s.memories.size() != config_.layers)) {
      throw ContractError("stack state does not match the model configuration");
    }
  }
  const std::size_t steps = x.rows() / states.size();
  Var y = inputs;
  if (lstm) {
    y = lstm_forward(inputs, states, steps);
  } else {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      y = transformer_layer(l, y, states, steps, options, counters);
    }
  }
  for (auto& s : states) s.steps += steps;
  return y;
}

Var MemoryStack::transformer_layer(std::size_t index, Var x, std::span<StackState> states,
                                   std::size_t steps, const StackForwardOptions& options,
                                   AttentionCounters* counters) const {
  const Layer& layer = layers_[index];
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t d = config_.d_model;
  const std::size_t streams = states.size();
  const std::size_t span = config_.attention_span();
  const bool xl = config_.kind != ModelKind::hcam;

  // Keys for each stream: its retained history (constant) then its new rows.
  bool any_history = false;
  for (const auto& s : states) any_history = any_history || s.history[index].rows() > 0;
  Var kv = x;
  std::vector<std::size_t> stream_start(streams);
  std::vector<std::size_t> query_rows(streams * steps);
  if (any_history) {
    std::vector<Var> parts;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < streams; ++b) {
      const RowHistory& hist = states[b].history[index];
      stream_start[b] = offset;
      if (hist.rows() > 0) {
        parts.push_back(tape.constant(Tensor(
            Shape{hist.rows(), d}, std::vector<double>(hist.data().begin(), hist.data().end()))));
        offset += hist.rows();
      }
      parts.push_back(streams == 1 ? x : slice(x, 0, b * steps, (b + 1) * steps));
      for (std::size_t t = 0; t < steps; ++t) query_rows[b * steps + t] = offset + t;
      offset += steps;
    }
    kv = parts.size() == 1 ? parts.front() : concat(parts, 0);
  } else {
    for (std::size_t b = 0; b < streams; ++b) {
      stream_start[b] = b * steps;
      for (std::size_t t = 0; t < steps; ++t) query_rows[b * steps + t] = b * steps + t;
    }
  }

  std::vector<QueryWindow> windows(streams * steps);
  bool detached = false;
  for (std::size_t b = 0; b < streams; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t r = query_rows[b * steps + t];
      const std::size_t begin = std::max(stream_start[b], r + 1 >= span ? r + 1 - span : 0);
      QueryWindow w{begin, r + 1, 0, r - begin};
      if (xl) {
        const std::size_t local_begin = r + 1 >= config_.window ? r + 1 - config_.window : 0;
        w.detached_end = std::max(begin, local_begin);
        detached = detached || w.detached_end > begin;
      }
      windows[b * steps + t] = w;
    }
  }

  Var gain = tape.param(*layer.ln1_gain);
  Var bias = tape.param(*layer.ln1_bias);
  const AttentionWeights aw = layer.attention.bind(tape);
  Var normed = layer_norm(kv, gain, bias);
  WindowedAttentionInputs in;
  in.queries = matmul(any_history ? gather_rows(normed, query_rows) : normed, aw.query);
  in.keys = matmul(normed, aw.key);
  in.values = matmul(normed, aw.value);
  if (detached) {
    Var frozen = layer_norm(stop_gradient(kv), gain, bias);
    in.detached_keys = matmul(frozen, aw.key);
    in.detached_values = matmul(frozen, aw.value);
  }
  Var pe = tape.constant(positions_);
  in.query_positions = matmul(pe, aw.query);
  in.key_positions = matmul(pe, aw.key);
  in.value_positions = matmul(pe, aw.value);
  in.heads = config_.heads;
  in.top_k = config_.kind == ModelKind::trxl_topk ? config_.top_k : 0;
  Var mix = windowed_attention(in, windows,
                               counters != nullptr ? &counters->window_scores : nullptr);
  Var h = add(x, matmul(mix, aw.output));

  if (config_.uses_memory()) {
    // Chunks alive at any point of this segment, and for every query the
    // slice that existed right after its own write.
    std::vector<MemoryView> views(streams);
    std::vector<ChunkRange> visible(streams * steps);
    std::size_t base = 0;
    for (std::size_t b = 0; b < streams; ++b) {
      ChunkMemory& mem = states[b].memories[index];
      MemoryView view = mem.read();
      const std::uint64_t evicted = mem.evictions();
      for (std::size_t t = 0; t < steps; ++t) {
        if (options.write_memory && mem.write(xv.row(b * steps + t))) {
          view.chunks.push_back(mem.chunk(mem.size() - 1));
          view.summaries.push_back(mem.summary(mem.size() - 1));
        }
        visible[b * steps + t] =
            ChunkRange{base + static_cast<std::size_t>(mem.evictions() - evicted),
                       base + view.size()};
      }
      base += view.size();
      views[b] = std::move(view);
    }
    const MemorySnapshot snap = snapshot_of(views, config_.chunk_size);
    h = hierarchical_attention(h, snap, visible, layer.memory.bind(tape),
                               HierarchicalOptions{config_.top_k, config_.chunk_positions},
                               counters);
  }

  Var n3 = layer_norm(h, tape.param(*layer.ln3_gain), tape.param(*layer.ln3_bias));
  Var hidden = relu(linear(n3, tape.param(*layer.mlp_in), tape.param(*layer.mlp_in_bias)));
  Var y = add(h, linear(hidden, tape.param(*layer.mlp_out), tape.param(*layer.mlp_out_bias)));

  for (std::size_t b = 0; b < streams; ++b) {
    states[b].history[index].append(
        std::span<const double>(xv.data() + b * steps * d, steps * d));
  }
  return y;
}

Var MemoryStack::lstm_forward(Var x, std::span<StackState> states, std::size_t steps) const {
  Tape& tape = *x.tape();
  const std::size_t d = config_.d_model;
  const std::size_t streams = states.size();
  std::vector<Var> hidden, cell;
  std::vector<LstmWeights> weights;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Tensor h(Shape{streams, d}), c(Shape{streams, d});
    for (std::size_t b = 0; b < streams; ++b) {
      std::copy(states[b].lstm_hidden[l].begin(), states[b].lstm_hidden[l].end(), h.row(b).begin());
      std::copy(states[b].lstm_cell[l].begin(), states[b].lstm_cell[l].end(), c.row(b).begin());
    }
    hidden.push_back(tape.constant(std::move(h)));
    cell.push_back(tape.constant(std::move(c)));
    weights.push_back(LstmWeights{tape.param(*layers_[l].lstm_input),
                                  tape.param(*layers_[l].lstm_recurrent),
                                  tape.param(*layers_[l].lstm_bias)});
  }
  std::vector<Var> outputs;
  std::vector<std::size_t> rows(streams);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < streams; ++b) rows[b] = b * steps + t;
    Var in = gather_rows(x, rows);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LstmOutput out = lstm_cell(in, hidden[l], cell[l], weights[l]);
      hidden[l] = out.hidden;
      cell[l] = out.cell;
      in = out.hidden;
    }
    outputs.push_back(in);
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t b = 0; b < streams; ++b) {
      const auto h = hidden[l].value().row(b);
      const auto c = cell[l].value().row(b);
      states[b].lstm_hidden[l].assign(h.begin(), h.end());
      states[b].lstm_cell[l].assign(c.begin(), c.end());
    }
  }
  // Outputs are time-major; reorder rows to stream-major.
  Var time_major = outputs.size() == 1 ? outputs.front() : concat(outputs, 0);
  if (streams == 1) return time_major;
  std::vector<std::size_t> order(streams * steps);
  for (std::size_t b = 0; b < streams; ++b) {
    for (std::size_t t = 0; t < steps; ++t) order[b * steps + t] = t * streams + b;
  }
  return gather_rows(time_major, order);
}

Tensor MemoryStack::step(StackState& state, std::span<const double> x) const {
  if (x.size() != config_.d_model) {
    throw DimensionError("stack_step input has width " + std::to_string(x.size()) +
                         ", model width is " + std::to_string(config_.d_model));
  }
  Tape tape;
  Var in = tape.constant(Tensor(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end())));
  Var out = forward(in, std::span<StackState>(&state, 1));
  return out.value().reshaped(Shape{config_.d_model});
}

Tensor MemoryStack::forward_sequence(StackState& state, const Tensor& inputs, bool reset) const {
  if (reset) state.reset();
  Tape tape;
  Var out = forward(tape.constant(inputs), std::span<StackState>(&state, 1));
  return out.value();
}

}  // namespace hcam
