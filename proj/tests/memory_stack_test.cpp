#include <gtest/gtest.h>

#include "hcam/errors.hpp"
#include "hcam/memory_stack.hpp"
#include "hcam/random.hpp"
#include "support/oracles.hpp"

namespace {

using hcam::ModelConfig;
using hcam::ModelKind;
using hcam::Shape;
using hcam::Tape;
using hcam::Tensor;
using hcam::Var;

ModelConfig small_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.chunk_size = 4;
  c.top_k = 2;
  c.window = 5;
  c.xl_length = 6;
  c.mlp_hidden = 12;
  return c;
}

struct Fixture {
  hcam::ParameterSet params;
  hcam::Rng rng;
  hcam::MemoryStack stack;
  explicit Fixture(const ModelConfig& c, std::uint64_t seed = 31)
      : rng(seed), stack(c, params, rng) {
    // Perturb the LayerNorm/bias parameters away from their trivial init.
    for (auto& p : params) {
      if (p.name.find("gain") != std::string::npos || p.name.find(".b") != std::string::npos ||
          p.name.find("bias") != std::string::npos) {
        for (auto& v : p.value.values()) v += rng.uniform(-0.3, 0.3);
      }
    }
  }
  oracle::Mat mat(const std::string& name) const { return oracle::to_mat(params.find(name)->value); }
  std::vector<long double> vec(const std::string& name) const {
    return oracle::to_vec(params.find(name)->value);
  }
};

// One transformer layer evaluated step by step from the definitions.
oracle::Mat naive_layer(const Fixture& f, const ModelConfig& c, const oracle::Mat& x,
                        std::size_t layer) {
  const std::string p = "stack.layer" + std::to_string(layer);
  const std::size_t d = c.d_model;
  const std::size_t span = c.kind == ModelKind::hcam ? c.window : c.window + c.xl_length;
  const oracle::Mat n1 = oracle::layer_norm(x, f.vec(p + ".ln1.gain"), f.vec(p + ".ln1.bias"));
  const oracle::Mat pe = oracle::positions(span, d);
  const auto wq = f.mat(p + ".attn.wq"), wk = f.mat(p + ".attn.wk"), wv = f.mat(p + ".attn.wv"),
             wo = f.mat(p + ".attn.wo");
  oracle::HcamWeightsData hw;
  if (c.kind == ModelKind::hcam) {
    hw = {f.vec(p + ".hcam.norm.gain"), f.vec(p + ".hcam.norm.bias"), f.mat(p + ".hcam.relevance"),
          f.mat(p + ".hcam.detail.wq"), f.mat(p + ".hcam.detail.wk"), f.mat(p + ".hcam.detail.wv"),
          f.mat(p + ".hcam.detail.wo"), c.heads};
  }
  oracle::Mat out;
  std::vector<oracle::Mat> chunks;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t begin = t + 1 >= span ? t + 1 - span : 0;
    oracle::Mat keys_in, q_in{oracle::add(oracle::Mat{n1[t]}, oracle::Mat{pe[t - begin]})};
    for (std::size_t j = begin; j <= t; ++j) {
      keys_in.push_back(oracle::add(oracle::Mat{n1[j]}, oracle::Mat{pe[j - begin]})[0]);
    }
    const auto q = oracle::matmul(q_in, wq);
    const auto k = oracle::matmul(keys_in, wk);
    const auto v = oracle::matmul(keys_in, wv);
    // Per head, optionally keep only the top-k scaled scores.
    const std::size_t dh = d / c.heads;
    std::vector<long double> mix(d, 0.0L);
    for (std::size_t h = 0; h < c.heads; ++h) {
      std::vector<long double> s;
      for (std::size_t j = 0; j < k.size(); ++j) {
        long double dot = 0.0L;
        for (std::size_t col = h * dh; col < (h + 1) * dh; ++col) dot += q[0][col] * k[j][col];
        s.push_back(dot / std::sqrt(static_cast<long double>(dh)));
      }
      std::vector<std::size_t> keep = oracle::all_indices(s);
      if (c.kind == ModelKind::trxl_topk) keep = oracle::top_k_by_sort(s, c.top_k);
      std::vector<long double> kept;
      for (auto j : keep) kept.push_back(s[j]);
      const auto prob = oracle::softmax(kept);
      for (std::size_t u = 0; u < keep.size(); ++u) {
        for (std::size_t col = h * dh; col < (h + 1) * dh; ++col) mix[col] += prob[u] * v[keep[u]][col];
      }
    }
    oracle::Mat h = oracle::add(oracle::Mat{x[t]}, oracle::matmul(oracle::Mat{mix}, wo));
    if (c.kind == ModelKind::hcam) {
      if ((t + 1) % c.chunk_size == 0) {
        chunks.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(t + 1 - c.chunk_size),
                            x.begin() + static_cast<std::ptrdiff_t>(t + 1));
      }
      if (!chunks.empty()) {
        h = oracle::hierarchical(h, chunks, hw, c.chunk_positions,
                                 [&](const std::vector<long double>& r) {
                                   return oracle::top_k_by_sort(r, c.top_k);
                                 });
      }
    }
    auto n3 = oracle::layer_norm(h, f.vec(p + ".ln3.gain"), f.vec(p + ".ln3.bias"));
    auto hidden = oracle::matmul(n3, f.mat(p + ".mlp.w1"));
    const auto b1 = f.vec(p + ".mlp.b1");
    for (std::size_t j = 0; j < hidden[0].size(); ++j) hidden[0][j] = std::max(0.0L, hidden[0][j] + b1[j]);
    auto y = oracle::matmul(hidden, f.mat(p + ".mlp.w2"));
    const auto b2 = f.vec(p + ".mlp.b2");
    for (std::size_t j = 0; j < d; ++j) y[0][j] += b2[j] + h[0][j];
    out.push_back(y[0]);
  }
  return out;
}

class StackKinds : public ::testing::TestWithParam<ModelKind> {};

TEST_P(StackKinds, MatchesNaiveLayerOracle) {
  if (GetParam() == ModelKind::lstm) GTEST_SKIP() << "covered by LstmMatchesEquations";
  const ModelConfig c = small_config(GetParam());
  Fixture f(c);
  const Tensor x = oracle::random_tensor(Shape{23, c.d_model}, f.rng);
  hcam::StackState state = f.stack.initial_state();
  const Tensor got = f.stack.forward_sequence(state, x, true);
  oracle::Mat want = oracle::to_mat(x);
  for (std::size_t l = 0; l < c.layers; ++l) want = naive_layer(f, c, want, l);
  EXPECT_LT(hcam::max_abs_diff(got, oracle::to_tensor(want)), 1e-10);
}

TEST_P(StackKinds, StepwiseEqualsWholeSequence) {
  const ModelConfig c = small_config(GetParam());
  Fixture f(c);
  const Tensor x = oracle::random_tensor(Shape{19, c.d_model}, f.rng);
  hcam::StackState whole = f.stack.initial_state();
  const Tensor seq = f.stack.forward_sequence(whole, x, true);
  hcam::StackState stepped = f.stack.initial_state();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const Tensor y = f.stack.step(stepped, x.row(t));
    for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_NEAR(y[j], seq.at(t, j), 1e-12);
  }
  EXPECT_EQ(stepped.steps, whole.steps);
}

TEST_P(StackKinds, SegmentsContinueFromState) {
  const ModelConfig c = small_config(GetParam());
  Fixture f(c);
  const Tensor x = oracle::random_tensor(Shape{20, c.d_model}, f.rng);
  hcam::StackState whole = f.stack.initial_state();
  const Tensor seq = f.stack.forward_sequence(whole, x, true);
  hcam::StackState split = f.stack.initial_state();
  Tensor a(Shape{7, c.d_model}), b(Shape{13, c.d_model});
  std::copy_n(x.data(), a.size(), a.data());
  std::copy_n(x.data() + a.size(), b.size(), b.data());
  (void)f.stack.forward_sequence(split, a, true);
  const Tensor tail = f.stack.forward_sequence(split, b, false);
  for (std::size_t t = 0; t < 13; ++t) {
    for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_NEAR(tail.at(t, j), seq.at(t + 7, j), 1e-12);
  }
}

TEST_P(StackKinds, BatchedStreamsAreIndependent) {
  const ModelConfig c = small_config(GetParam());
  Fixture f(c);
  const std::size_t streams = 3, steps = 11;
  const Tensor x = oracle::random_tensor(Shape{streams * steps, c.d_model}, f.rng);
  std::vector<hcam::StackState> states(streams, f.stack.initial_state());
  Tape tape;
  const Tensor batched = f.stack.forward(tape.constant(x), states).value();
  for (std::size_t b = 0; b < streams; ++b) {
    Tensor one(Shape{steps, c.d_model});
    std::copy_n(x.data() + b * one.size(), one.size(), one.data());
    hcam::StackState s = f.stack.initial_state();
    const Tensor y = f.stack.forward_sequence(s, one, true);
    for (std::size_t i = 0; i < one.size(); ++i) {
      EXPECT_NEAR(batched[b * one.size() + i], y[i], 1e-12);
    }
  }
}

TEST_P(StackKinds, ResetIsolatesEpisodes) {
  const ModelConfig c = small_config(GetParam());
  Fixture f(c);
  const Tensor first = oracle::random_tensor(Shape{17, c.d_model}, f.rng);
  const Tensor second = oracle::random_tensor(Shape{9, c.d_model}, f.rng);
  hcam::StackState used = f.stack.initial_state();
  (void)f.stack.forward_sequence(used, first, true);
  const Tensor after_reset = f.stack.forward_sequence(used, second, true);
  hcam::StackState fresh = f.stack.initial_state();
  EXPECT_TRUE(hcam::bitwise_equal(after_reset, f.stack.forward_sequence(fresh, second, true)));
}

// The gradient of the final output reaches an input row only while it sits
// inside the local window (or, for LSTM, always): stored memory and XL rows
// are constants.
TEST_P(StackKinds, StoppedGradientsOutsideTheWindow) {
  ModelConfig c = small_config(GetParam());
  c.layers = 1;
  Fixture f(c);
  const std::size_t steps = 16;
  const Tensor x = oracle::random_tensor(Shape{steps, c.d_model}, f.rng);
  std::vector<hcam::StackState> states(1, f.stack.initial_state());
  Tape tape;
  Var in = tape.leaf(x);
  Var y = f.stack.forward(in, states);
  Var last = hcam::slice(y, 0, steps - 1, steps);
  const Tensor g = tape.backward(hcam::sum(last)).of(in);
  for (std::size_t t = 0; t < steps; ++t) {
    double norm = 0.0;
    for (double v : g.row(t)) norm += std::abs(v);
    const bool in_window = t + c.window >= steps;
    if (c.kind == ModelKind::lstm || (in_window && c.kind != ModelKind::trxl_topk)) {
      EXPECT_GT(norm, 0.0) << "row " << t;
    } else if (in_window) {
      // Top-k masking may drop some in-window keys; the current row always
      // reaches the output through the residual path.
      if (t + 1 == steps) {
        EXPECT_GT(norm, 0.0);
      }
    } else {
      EXPECT_EQ(norm, 0.0) << "row " << t;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, StackKinds,
                         ::testing::Values(ModelKind::hcam, ModelKind::trxl,
                                           ModelKind::trxl_topk, ModelKind::lstm),
                         [](const auto& info) {
                           std::string s = hcam::to_string(info.param);
                           for (auto& ch : s) if (ch == '-') ch = '_';
                           return s;
                         });

TEST(MemoryStack, FortyStepsFillFiveChunksPerLayer) {
  ModelConfig c = small_config(ModelKind::hcam);
  c.chunk_size = 8;
  Fixture f(c);
  const Tensor x = oracle::random_tensor(Shape{40, c.d_model}, f.rng);
  hcam::StackState state = f.stack.initial_state();
  (void)f.stack.forward_sequence(state, x, true);
  ASSERT_EQ(state.memories.size(), c.layers);
  for (const auto& mem : state.memories) {
    EXPECT_EQ(mem.size(), 5u);
    EXPECT_EQ(mem.buffered(), 0u);
  }
  // Layer 0 stores its raw inputs.
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t col = 0; col < c.d_model; ++col) {
        EXPECT_EQ(state.memories[0].chunk(j).at(r, col), x.at(8 * j + r, col));
      }
    }
  }
  EXPECT_EQ(state.steps, 40u);
}

TEST(MemoryStack, EvictionKeepsNewestChunks) {
  ModelConfig c = small_config(ModelKind::hcam);
  c.capacity = 2;
  Fixture f(c);
  const Tensor x = oracle::random_tensor(Shape{21, c.d_model}, f.rng);
  hcam::StackState whole = f.stack.initial_state();
  const Tensor seq = f.stack.forward_sequence(whole, x, true);
  hcam::StackState stepped = f.stack.initial_state();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const Tensor y = f.stack.step(stepped, x.row(t));
    for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_NEAR(y[j], seq.at(t, j), 1e-12);
  }
  EXPECT_EQ(whole.memories[0].size(), 2u);
  EXPECT_EQ(whole.memories[0].evictions(), 3u);
}

TEST(MemoryStack, WritesCanBeDisabled) {
  const ModelConfig c = small_config(ModelKind::hcam);
  Fixture f(c);
  std::vector<hcam::StackState> states(1, f.stack.initial_state());
  Tape tape;
  (void)f.stack.forward(tape.constant(oracle::random_tensor(Shape{9, c.d_model}, f.rng)), states,
                        hcam::StackForwardOptions{false});
  for (const auto& m : states[0].memories) EXPECT_TRUE(m.empty());
}

TEST(MemoryStack, LstmMatchesEquations) {
  hcam::Rng rng(41);
  const std::size_t in = 3, h = 4, batch = 2;
  const Tensor x = oracle::random_tensor(Shape{batch, in}, rng);
  const Tensor h0 = oracle::random_tensor(Shape{batch, h}, rng);
  const Tensor c0 = oracle::random_tensor(Shape{batch, h}, rng);
  const Tensor wi = oracle::random_tensor(Shape{in, 4 * h}, rng);
  const Tensor wr = oracle::random_tensor(Shape{h, 4 * h}, rng);
  const Tensor b = oracle::random_tensor(Shape{4 * h}, rng);
  Tape tape;
  const auto out = hcam::lstm_cell(tape.constant(x), tape.constant(h0), tape.constant(c0),
                                   {tape.constant(wi), tape.constant(wr), tape.constant(b)});
  const auto gates = oracle::add(oracle::matmul(oracle::to_mat(x), oracle::to_mat(wi)),
                                 oracle::matmul(oracle::to_mat(h0), oracle::to_mat(wr)));
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < h; ++j) {
      auto g = [&](std::size_t block) { return gates[r][block * h + j] + b[block * h + j]; };
      const long double i = oracle::sigmoid(g(0)), fgt = oracle::sigmoid(g(1)),
                        cand = std::tanh(g(2)), o = oracle::sigmoid(g(3));
      const long double cell = fgt * c0.at(r, j) + i * cand;
      EXPECT_NEAR(out.cell.value().at(r, j), static_cast<double>(cell), 1e-14);
      EXPECT_NEAR(out.hidden.value().at(r, j), static_cast<double>(o * std::tanh(cell)), 1e-14);
    }
  }
}

TEST(MemoryStack, ParameterCountsFollowArchitecture) {
  auto count = [](ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    hcam::ParameterSet params;
    hcam::Rng rng(0);
    return hcam::MemoryStack(c, params, rng).parameter_count();
  };
  const std::size_t d = 64, layers = 2, mlp = 128;
  const std::size_t block = 2 * d + 4 * d * d + 2 * d + d * mlp + mlp + mlp * d + d;
  EXPECT_EQ(count(ModelKind::trxl), layers * block);
  EXPECT_EQ(count(ModelKind::trxl_topk), count(ModelKind::trxl));
  EXPECT_EQ(count(ModelKind::hcam), layers * (block + 2 * d + 5 * d * d));
  EXPECT_EQ(count(ModelKind::lstm), layers * (8 * d * d + 4 * d));
}

TEST(MemoryStack, ConfigValidation) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), hcam::ContractError);
  c = ModelConfig{};
  c.overlap = c.chunk_size;
  EXPECT_THROW(c.validate(), hcam::ContractError);
  EXPECT_EQ(hcam::parse_model_kind("trxl-topk"), ModelKind::trxl_topk);
  EXPECT_EQ(hcam::parse_model_kind("trxl_topk"), ModelKind::trxl_topk);
  EXPECT_THROW(hcam::parse_model_kind("gru"), hcam::ContractError);
}

}  // namespace
