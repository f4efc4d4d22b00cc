#include "hcam/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "hcam/attention.hpp"
#include "hcam/chunk_memory.hpp"
#include "hcam/memory_stack.hpp"
#include "hcam/ops.hpp"
#include "hcam/random.hpp"

namespace hcam {

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::worst_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.result.max_relative_error);
  return worst;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Keeps entries away from the relu kink so central differences are valid.
Tensor away_from_zero(Tensor t) {
  for (auto& v : t.values()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

// Contracts an output with fixed random weights, so every output entry
// carries a distinct gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.tape()->constant(random_tensor(y.shape(), rng))));
}

struct Suite {
  std::uint64_t seed;
  GradCheckOptions options;
  GradcheckReport report;
  Rng rng;

  Suite(std::uint64_t s, const GradCheckOptions& o) : seed(s), options(o), rng(s) {}

  void check(const std::string& name, std::vector<Tensor> inputs,
             const std::function<Var(Tape&, std::span<const Var>)>& body) {
    const std::uint64_t weights = mix_seed(seed, report.entries.size());
    const GradCheckResult r = check_gradients(
        [&](Tape& tape, std::span<const Var> in) { return weighted_sum(body(tape, in), weights); },
        std::move(inputs), options);
    report.entries.push_back({name, r, r.passed(options.tolerance)});
  }

  void check_params(const std::string& name, ParameterSet& params,
                    const std::function<Var(Tape&)>& body) {
    const std::uint64_t weights = mix_seed(seed, report.entries.size());
    const GradCheckResult r = check_parameter_gradients(
        params, [&](Tape& tape) { return weighted_sum(body(tape), weights); }, options);
    report.entries.push_back({name, r, r.passed(options.tolerance)});
  }

  Tensor rand(Shape shape) { return random_tensor(std::move(shape), rng); }
};

AttentionWeights weights_from(std::span<const Var> in, std::size_t first, std::size_t heads) {
  return AttentionWeights{in[first], in[first + 1], in[first + 2], in[first + 3], heads};
}

ChunkMemory random_memory(std::size_t width, std::size_t chunk, std::size_t count, Rng& rng) {
  ChunkMemory mem(width, ChunkMemoryConfig{chunk, 0, 64});
  for (std::size_t i = 0; i < count; ++i) mem.append_chunk(random_tensor(Shape{chunk, width}, rng));
  return mem;
}

void op_checks(Suite& s) {
  s.check("matmul", {s.rand({3, 4}), s.rand({4, 2})},
          [](Tape&, auto in) { return matmul(in[0], in[1]); });
  s.check("transpose", {s.rand({3, 2})}, [](Tape&, auto in) { return transpose(in[0]); });
  s.check("add", {s.rand({2, 3}), s.rand({2, 3})},
          [](Tape&, auto in) { return add(in[0], in[1]); });
  s.check("add_broadcast", {s.rand({3, 4}), s.rand({4})},
          [](Tape&, auto in) { return add(in[0], in[1]); });
  s.check("sub", {s.rand({2, 3}), s.rand({3})},
          [](Tape&, auto in) { return sub(in[0], in[1]); });
  s.check("mul", {s.rand({2, 3}), s.rand({2, 3})},
          [](Tape&, auto in) { return mul(in[0], in[1]); });
  s.check("mul_broadcast", {s.rand({2, 3}), s.rand({3})},
          [](Tape&, auto in) { return mul(in[0], in[1]); });
  s.check("scale", {s.rand({5})}, [](Tape&, auto in) { return scale(in[0], -1.7); });
  s.check("relu", {away_from_zero(s.rand({2, 5}))}, [](Tape&, auto in) { return relu(in[0]); });
  s.check("tanh", {s.rand({2, 5})}, [](Tape&, auto in) { return tanh(in[0]); });
  s.check("sigmoid", {s.rand({2, 5})}, [](Tape&, auto in) { return sigmoid(in[0]); });
  s.check("concat_rows", {s.rand({2, 3}), s.rand({1, 3})}, [](Tape&, auto in) {
    const Var parts[] = {in[0], in[1]};
    return concat(parts, 0);
  });
  s.check("concat_cols", {s.rand({2, 3}), s.rand({2, 2})}, [](Tape&, auto in) {
    const Var parts[] = {in[0], in[1]};
    return concat(parts, 1);
  });
  s.check("slice", {s.rand({4, 5})}, [](Tape&, auto in) { return slice(in[0], 1, 1, 4); });
  s.check("gather_rows", {s.rand({4, 3})}, [](Tape&, auto in) {
    const std::size_t rows[] = {3, 0, 3, 1};
    return gather_rows(in[0], rows);
  });
  s.check("reshape", {s.rand({2, 6})},
          [](Tape&, auto in) { return reshape(in[0], Shape{3, 4}); });
  s.check("embed_lookup", {s.rand({5, 3})}, [](Tape&, auto in) {
    const std::size_t ids[] = {4, 1, 1};
    return embed_lookup(in[0], ids);
  });
  s.check("mean_pool", {s.rand({2, 3, 4})}, [](Tape&, auto in) { return mean_pool(in[0], 1); });
  s.check("sum", {s.rand({3, 3})},
          [](Tape&, auto in) { return reshape(sum(in[0]), Shape{1}); });
  s.check("softmax_rows", {s.rand({3, 4})}, [](Tape&, auto in) { return softmax(in[0], 1); });
  s.check("softmax_cols", {s.rand({3, 4})}, [](Tape&, auto in) { return softmax(in[0], 0); });
  s.check("layer_norm", {s.rand({3, 6}), s.rand({6}), s.rand({6})},
          [](Tape&, auto in) { return layer_norm(in[0], in[1], in[2]); });
  s.check("cross_entropy_logits", {s.rand({5})}, [](Tape&, auto in) {
    return reshape(cross_entropy_logits(in[0], 2), Shape{1});
  });
  s.check("cross_entropy_rows", {s.rand({3, 4})}, [](Tape&, auto in) {
    const std::size_t targets[] = {0, 3, 1};
    return reshape(cross_entropy_rows(in[0], targets), Shape{1});
  });
  // Finite differences would also move a stopped copy of the input, so the
  // stopped operand here is a separate constant; probe_stop_gradient covers
  // the blocked path itself.
  const Tensor held = s.rand({2, 3});
  s.check("stop_gradient", {s.rand({2, 3})}, [held](Tape& tape, auto in) {
    return add(in[0], mul(stop_gradient(tape.constant(held)), in[0]));
  });
  s.check("linear", {s.rand({3, 4}), s.rand({4, 2}), s.rand({2})},
          [](Tape&, auto in) { return linear(in[0], in[1], in[2]); });
}

void attention_checks(Suite& s) {
  const std::size_t d = 8;
  const std::size_t heads = 2;
  auto weights = [&] {
    return std::vector<Tensor>{s.rand({d, d}), s.rand({d, d}), s.rand({d, d}), s.rand({d, d})};
  };

  {
    std::vector<Tensor> in{s.rand({3, d}), s.rand({5, d})};
    for (auto& w : weights()) in.push_back(std::move(w));
    s.check("multi_head_attention", in, [&](Tape&, auto v) {
      return multi_head_attention(v[0], v[1], weights_from(v, 2, heads), false);
    });
    s.check("multi_head_attention_causal", {s.rand({4, d}), in[2], in[3], in[4], in[5]},
            [&](Tape&, auto v) {
              return multi_head_attention(v[0], v[0], weights_from(v, 1, heads), true);
            });
  }
  {
    std::vector<Tensor> in{s.rand({6, d})};
    for (auto& w : weights()) in.push_back(std::move(w));
    s.check("local_attention", in, [&](Tape&, auto v) {
      return local_attention(v[0], 3, weights_from(v, 1, heads));
    });
  }
  {
    // Windowed kernel with detached keys, positional rows and top-k masking.
    const std::vector<QueryWindow> windows{{0, 3, 1, 2}, {1, 5, 2, 3}, {2, 6, 2, 3}};
    std::vector<Tensor> in{s.rand({3, d}), s.rand({6, d}), s.rand({6, d}), s.rand({6, d}),
                           s.rand({6, d}), s.rand({4, d}), s.rand({4, d}), s.rand({4, d})};
    for (std::size_t top_k : {std::size_t{0}, std::size_t{2}}) {
      s.check(top_k == 0 ? "windowed_attention" : "windowed_attention_topk", in,
              [&, top_k](Tape&, auto v) {
                WindowedAttentionInputs w;
                w.queries = v[0];
                w.keys = v[1];
                w.values = v[2];
                w.detached_keys = v[3];
                w.detached_values = v[4];
                w.query_positions = v[5];
                w.key_positions = v[6];
                w.value_positions = v[7];
                w.heads = heads;
                w.top_k = top_k;
                return windowed_attention(w, windows);
              });
    }
  }
  {
    std::vector<Tensor> summaries;
    for (int i = 0; i < 5; ++i) summaries.push_back(s.rand({d}));
    s.check("chunk_relevance", {s.rand({2, d}), s.rand({d, d})}, [summaries](Tape&, auto v) {
      return chunk_relevance(v[0], summaries, v[1], 2)->weights;
    });
  }
  {
    // Composed block: LayerNorm, relevance, top-k, detail attention, residual.
    Rng mem_rng(mix_seed(s.seed, 99));
    const ChunkMemory memory = random_memory(d, 3, 5, mem_rng);
    std::vector<Tensor> in{s.rand({4, d}), s.rand({d}), s.rand({d}), s.rand({d, d})};
    for (auto& w : weights()) in.push_back(std::move(w));
    for (std::size_t k : {std::size_t{2}, std::size_t{5}}) {
      s.check("hcam_block_k" + std::to_string(k), in, [&, k](Tape&, auto v) {
        const HcamWeights w{v[1], v[2], v[3], weights_from(v, 4, heads)};
        return hcam_block(v[0], memory, w, k);
      });
    }
    s.check("dense_memory_attention", in, [&](Tape&, auto v) {
      const HcamWeights w{v[1], v[2], v[3], weights_from(v, 4, heads)};
      return dense_memory_attention(v[0], memory, w);
    });
  }
  {
    const std::size_t h = 4;
    s.check("lstm_cell",
            {s.rand({2, 3}), s.rand({2, h}), s.rand({2, h}), s.rand({3, 4 * h}),
             s.rand({h, 4 * h}), s.rand({4 * h})},
            [](Tape&, auto v) {
              const LstmOutput out = lstm_cell(v[0], v[1], v[2], LstmWeights{v[3], v[4], v[5]});
              const Var parts[] = {out.hidden, out.cell};
              return concat(parts, 1);
            });
  }
}

ModelConfig small_config(ModelKind kind, std::size_t layers) {
  ModelConfig c;
  c.kind = kind;
  c.d_model = 8;
  c.layers = layers;
  c.heads = 2;
  c.chunk_size = 2;
  c.top_k = 2;
  c.window = 3;
  c.xl_length = 3;
  c.mlp_hidden = 8;
  return c;
}

void stack_checks(Suite& s) {
  const std::size_t steps = 9;
  // Parameter gradients with memory writes. One layer, so every stored row
  // and every detached key is a true constant of the parameters.
  for (ModelKind kind : {ModelKind::hcam, ModelKind::trxl, ModelKind::trxl_topk}) {
    ParameterSet params;
    Rng init(mix_seed(s.seed, 500 + static_cast<int>(kind)));
    MemoryStack stack(small_config(kind, 1), params, init);
    const Tensor x = s.rand({2 * steps, 8});
    s.check_params("stack_step_" + to_string(kind) + "_params", params, [&](Tape& tape) {
      std::vector<StackState> states(2, stack.initial_state());
      return stack.forward(tape.constant(x), states);
    });
  }
  {
    // Input and parameter gradients through two layers reading a preloaded,
    // write-disabled memory.
    ParameterSet params;
    Rng init(mix_seed(s.seed, 600));
    MemoryStack stack(small_config(ModelKind::hcam, 2), params, init);
    Rng mem_rng(mix_seed(s.seed, 601));
    StackState preloaded = stack.initial_state();
    for (int i = 0; i < 4; ++i) {
      const Tensor chunk = random_tensor(Shape{2, 8}, mem_rng);
      for (auto& m : preloaded.memories) m.append_chunk(chunk);
    }
    auto run = [&](Tape&, Var x) {
      StackState state = preloaded;
      return stack.forward(x, std::span<StackState>(&state, 1), StackForwardOptions{false});
    };
    s.check("stack_step_hcam_inputs", {s.rand({5, 8})},
            [&](Tape& tape, auto v) { return run(tape, v[0]); });
    const Tensor x = s.rand({5, 8});
    s.check_params("stack_step_hcam_2layer_params", params,
                   [&](Tape& tape) { return run(tape, tape.constant(x)); });
  }
  {
    ParameterSet params;
    Rng init(mix_seed(s.seed, 700));
    MemoryStack stack(small_config(ModelKind::lstm, 2), params, init);
    s.check("stack_step_lstm_inputs", {s.rand({2 * 4, 8})}, [&](Tape&, auto v) {
      std::vector<StackState> states(2, stack.initial_state());
      return stack.forward(v[0], states);
    });
    const Tensor x = s.rand({4, 8});
    s.check_params("stack_step_lstm_params", params, [&](Tape& tape) {
      StackState state = stack.initial_state();
      return stack.forward(tape.constant(x), std::span<StackState>(&state, 1));
    });
  }
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
  Suite s(seed, options);
  op_checks(s);
  attention_checks(s);
  stack_checks(s);
  return std::move(s.report);
}

GradcheckEntry run_mutation_selftest(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(seed);
  const GradCheckResult r = check_gradients(
      [](Tape& tape, std::span<const Var> in) {
        const Tensor& x = in[0].value();
        Tensor y = x;
        for (auto& v : y.values()) v = v * v;
        Var sq = tape.record(std::move(y), {in[0]},
                             [x](const Tensor& g, std::span<Tensor* const> gi) {
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 (*gi[0])[i] += 1.1 * 2.0 * x[i] * g[i];
                               }
                             });
        return sum(sq);
      },
      {random_tensor(Shape{6}, rng)}, options);
  return GradcheckEntry{"mutation_selftest", r, r.passed(options.tolerance)};
}

StopGradientProbe probe_stop_gradient(std::uint64_t seed, double step) {
  Rng rng(seed);
  const Tensor x0 = random_tensor(Shape{3, 4}, rng);
  const Tensor c = random_tensor(Shape{3, 4}, rng);
  StopGradientProbe probe;
  {
    Tape tape;
    Var x = tape.leaf(x0);
    Var loss = sum(mul(stop_gradient(x), tape.constant(c)));
    const Tensor grad = tape.backward(loss).of(x);
    for (double g : grad.values()) {
      probe.max_analytic = std::max(probe.max_analytic, std::abs(g));
    }
  }
  // The stopped value is a constant of the graph: perturbing x leaves it at x0.
  auto loss_at = [&](const Tensor& x) {
    Tape tape;
    Var leaf = tape.leaf(x);
    Var stopped = stop_gradient(tape.constant(x0));
    return sum(add(mul(stopped, tape.constant(c)), scale(leaf, 0.0))).value().item();
  };
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor plus = x0, minus = x0;
    plus[i] += step;
    minus[i] -= step;
    probe.max_numeric =
        std::max(probe.max_numeric, std::abs(loss_at(plus) - loss_at(minus)) / (2 * step));
  }
  return probe;
}

}  // namespace hcam
