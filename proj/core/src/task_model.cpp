#include "hcam/task_model.hpp"

#include <cmath>

#include "hcam/errors.hpp"
#include "hcam/ops.hpp"
#include "hcam/random.hpp"
#include "linalg.hpp"

namespace hcam {

std::string to_string(TaskKind kind) { return kind == TaskKind::ballet ? "ballet" : "pai"; }

TaskKind parse_task_kind(std::string_view text) {
  if (text == "ballet") return TaskKind::ballet;
  if (text == "pai") return TaskKind::pai;
  throw ContractError("unknown task '" + std::string(text) + "'");
}

std::size_t TaskSpec::classes() const { return kind == TaskKind::ballet ? ballet.n_dances : 2; }

EpisodeBatch generate_batch(const TaskSpec& task, std::uint64_t seed,
                            std::uint64_t first_index, std::size_t count) {
  if (task.kind == TaskKind::ballet) {
    std::vector<BalletEpisode> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(generate_ballet_episode(task.ballet, mix_seed(seed, first_index + i)));
    }
    return out;
  }
  std::vector<PaiEpisode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_pai_episode(task.pai, mix_seed(seed, first_index + i)));
  }
  return out;
}

std::size_t batch_size(const EpisodeBatch& batch) {
  return std::visit([](const auto& v) { return v.size(); }, batch);
}

namespace {

// Unit-variance uniform initialization for embedding tables.
Tensor embedding_init(std::size_t rows, std::size_t width, Rng& rng) {
  return init::uniform(Shape{rows, width}, std::sqrt(3.0), rng);
}

std::size_t count_correct(const Tensor& logits, const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (argmax(logits.row(b)) == labels[b]) ++correct;
  }
  return correct;
}

}  // namespace

TaskModel::TaskModel(const ModelConfig& model, const TaskSpec& task, std::uint64_t seed)
    : task_(task) {
  model.validate();
  Rng rng(seed);
  const std::size_t d = model.d_model;
  if (task.kind == TaskKind::ballet) {
    if (task.ballet.n_dances == 0 || task.ballet.n_dances > kDanceCount) {
      throw ContractError("ballet needs 1.." + std::to_string(kDanceCount) + " dances");
    }
    dancer_table_ = &params_.add("embed.dancer", embedding_init(kDancerVocab, d, rng));
    direction_table_ = &params_.add("embed.direction", embedding_init(kDirectionVocab, d, rng));
    query_table_ = &params_.add("embed.query", embedding_init(kQueryVocab, d, rng));
  } else {
    if (model.kind != ModelKind::hcam) {
      throw ContractError("the pai task needs the hcam model (memory is preloaded)");
    }
    if (model.chunk_size != 2) {
      throw ContractError("the pai task stores pairs: chunk_size must be 2, got " +
                          std::to_string(model.chunk_size));
    }
    if (d < 2 || d % 2 != 0) throw ContractError("the pai task needs an even d_model");
    pool_.emplace(d / 2, task.pai.pool_size);
    item_embed_ = &params_.add("embed.item", init::xavier_uniform(d / 2, d, rng));
    item_embed_bias_ = &params_.add("embed.item_bias", init::zeros(Shape{d}));
  }

  stack_ = std::make_unique<MemoryStack>(model, params_, rng);

  if (task.kind == TaskKind::ballet) {
    final_gain_ = &params_.add("head.norm.gain", init::ones(Shape{d}));
    final_bias_ = &params_.add("head.norm.bias", init::zeros(Shape{d}));
    readout_ = &params_.add("head.readout", init::xavier_uniform(d, task.classes(), rng));
    readout_bias_ = &params_.add("head.readout_bias", init::zeros(Shape{task.classes()}));
    recon_dancer_ = &params_.add("head.recon_dancer", init::xavier_uniform(d, kDancerVocab, rng));
    recon_dancer_bias_ = &params_.add("head.recon_dancer_bias", init::zeros(Shape{kDancerVocab}));
    recon_direction_ =
        &params_.add("head.recon_direction", init::xavier_uniform(d, kDirectionVocab, rng));
    recon_direction_bias_ =
        &params_.add("head.recon_direction_bias", init::zeros(Shape{kDirectionVocab}));
  } else {
    probe_projection_ = &params_.add("head.projection", init::xavier_uniform(d, d, rng));
  }
}

BatchOutput TaskModel::run(Tape& tape, const EpisodeBatch& batch, double aux_weight,
                           AttentionCounters* counters) const {
  if (batch_size(batch) == 0) throw ContractError("empty episode batch");
  if (const auto* ballet = std::get_if<std::vector<BalletEpisode>>(&batch)) {
    if (task_.kind != TaskKind::ballet) throw ContractError("ballet batch for a pai model");
    return run_ballet(tape, *ballet, aux_weight, counters);
  }
  if (task_.kind != TaskKind::pai) throw ContractError("pai batch for a ballet model");
  return run_pai(tape, std::get<std::vector<PaiEpisode>>(batch), counters);
}

BatchOutput TaskModel::run_ballet(Tape& tape, const std::vector<BalletEpisode>& episodes,
                                  double aux_weight, AttentionCounters* counters) const {
  const std::size_t streams = episodes.size();
  const std::size_t steps = episodes.front().tokens.size();
  std::vector<BalletToken> tokens;
  tokens.reserve(streams * steps);
  BatchOutput out;
  for (const auto& ep : episodes) {
    if (ep.tokens.size() != steps) {
      throw DimensionError("ballet batch mixes episode lengths " + std::to_string(steps) +
                           " and " + std::to_string(ep.tokens.size()));
    }
    if (ep.label >= task_.classes()) {
      throw IndexError("ballet label " + std::to_string(ep.label) + " exceeds head size");
    }
    tokens.insert(tokens.end(), ep.tokens.begin(), ep.tokens.end());
    out.labels.push_back(ep.label);
  }
  Var x = encode_ballet_tokens(tokens, tape.param(*dancer_table_),
                               tape.param(*direction_table_), tape.param(*query_table_));
  std::vector<StackState> states(streams, stack_->initial_state());
  Var y = stack_->forward(x, states, {}, counters);
  Var normed = layer_norm(y, tape.param(*final_gain_), tape.param(*final_bias_));

  std::vector<std::size_t> last(streams);
  for (std::size_t b = 0; b < streams; ++b) last[b] = b * steps + steps - 1;
  out.logits = linear(gather_rows(normed, last), tape.param(*readout_),
                      tape.param(*readout_bias_));
  const double inv_batch = 1.0 / static_cast<double>(streams);
  out.task_loss = scale(cross_entropy_rows(out.logits, out.labels), inv_batch);
  out.loss = out.task_loss;
  if (aux_weight != 0.0) {
    Var dancer = linear(normed, tape.param(*recon_dancer_), tape.param(*recon_dancer_bias_));
    Var direction =
        linear(normed, tape.param(*recon_direction_), tape.param(*recon_direction_bias_));
    Var aux = reconstruction_aux_loss(dancer, direction, tokens);
    out.loss = add(out.task_loss, scale(aux, aux_weight * inv_batch));
  }
  out.correct = count_correct(out.logits.value(), out.labels);
  return out;
}

BatchOutput TaskModel::run_pai(Tape& tape, const std::vector<PaiEpisode>& episodes,
                               AttentionCounters* counters) const {
  const std::size_t streams = episodes.size();
  const std::size_t d = stack_->config().d_model;
  const std::size_t dim = pool_->dim();
  const Tensor& w = item_embed_->value;
  const Tensor& bias = item_embed_bias_->value;

  Tensor probes(Shape{streams, dim}), first(Shape{streams, dim}), second(Shape{streams, dim});
  std::vector<StackState> states(streams, stack_->initial_state());
  BatchOutput out;
  Tensor pair_items(Shape{2, dim});
  Tensor pair_rows(Shape{2, d});
  for (std::size_t b = 0; b < streams; ++b) {
    const PaiEpisode& ep = episodes[b];
    auto copy_item = [&](std::size_t id, Tensor& dst, std::size_t row) {
      if (id >= pool_->size()) throw IndexError("pai item outside the pool");
      const auto src = pool_->item(id);
      std::copy(src.begin(), src.end(), dst.row(row).begin());
    };
    copy_item(ep.probe, probes, b);
    copy_item(ep.choices[0], first, b);
    copy_item(ep.choices[1], second, b);
    out.labels.push_back(ep.label);
    // Memory rows are embedded outside the tape: stored contents are constants.
    for (const auto& pair : ep.pairs) {
      copy_item(pair[0], pair_items, 0);
      copy_item(pair[1], pair_items, 1);
      detail::gemm(pair_items.data(), w.data(), pair_rows.data(), 2, dim, d, false, false,
                   false);
      for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < d; ++c) pair_rows.at(r, c) += bias[c];
      }
      for (auto& mem : states[b].memories) mem.append_chunk(pair_rows);
    }
  }
  Var we = tape.param(*item_embed_);
  Var be = tape.param(*item_embed_bias_);
  Var probe = linear(tape.constant(std::move(probes)), we, be);
  Var choice0 = linear(tape.constant(std::move(first)), we, be);
  Var choice1 = linear(tape.constant(std::move(second)), we, be);

  Var y = stack_->forward(probe, states, StackForwardOptions{false}, counters);
  Var pooled = mean_pool(reshape(y, Shape{streams, y.value().rows() / streams, d}), 1);
  Var projected = matmul(pooled, tape.param(*probe_projection_));
  Var ones = tape.constant(Tensor(Shape{d, 1}, 1.0));
  std::vector<Var> parts{matmul(mul(projected, choice0), ones),
                         matmul(mul(projected, choice1), ones)};
  out.logits = concat(parts, 1);
  out.task_loss = scale(cross_entropy_rows(out.logits, out.labels),
                        1.0 / static_cast<double>(streams));
  out.loss = out.task_loss;
  out.correct = count_correct(out.logits.value(), out.labels);
  return out;
}

Tensor TaskModel::ballet_features(const BalletEpisode& episode) const {
  if (task_.kind != TaskKind::ballet) throw ContractError("ballet_features on a pai model");
  Tape tape;
  Var x = encode_ballet_tokens(episode.tokens, tape.param(*dancer_table_),
                               tape.param(*direction_table_), tape.param(*query_table_));
  StackState state = stack_->initial_state();
  return stack_->forward(x, std::span<StackState>(&state, 1)).value();
}

std::array<double, 2> TaskModel::pai_forward(const PaiEpisode& episode) const {
  Tape tape;
  const BatchOutput out = run(tape, EpisodeBatch{std::vector<PaiEpisode>{episode}});
  const Tensor& logits = out.logits.value();
  return {logits[0], logits[1]};
}

}  // namespace hcam
