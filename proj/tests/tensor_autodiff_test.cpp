#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hcam/adam.hpp"
#include "hcam/errors.hpp"
#include "hcam/gradcheck.hpp"
#include "hcam/gradcheck_suite.hpp"
#include "hcam/ops.hpp"
#include "hcam/parameters.hpp"
#include "hcam/random.hpp"
#include "hcam/tape.hpp"
#include "support/oracles.hpp"

namespace {

using hcam::Shape;
using hcam::Tape;
using hcam::Tensor;
using hcam::Var;

TEST(Tensor, ShapeAccessors) {
  Tensor t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 6u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>(3)), hcam::DimensionError);
  EXPECT_THROW((void)Tensor::vector({1, 2}).item(), hcam::DimensionError);
}

TEST(Tensor, BitwiseEqualityDistinguishesSignedZero) {
  EXPECT_TRUE(hcam::bitwise_equal(Tensor::vector({0.0, 1.0}), Tensor::vector({0.0, 1.0})));
  EXPECT_FALSE(hcam::bitwise_equal(Tensor::vector({0.0}), Tensor::vector({-0.0})));
}

TEST(Rng, StreamsAreReproducibleAndBounded) {
  hcam::Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.below(7);
    EXPECT_EQ(x, b.below(7));
    EXPECT_LT(x, 7u);
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_NE(hcam::mix_seed(1, 0), hcam::mix_seed(1, 1));
}

TEST(Ops, MatmulMatchesTripleLoop) {
  hcam::Rng rng(1);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    const Tensor a = oracle::random_tensor(Shape{m, k}, rng);
    const Tensor b = oracle::random_tensor(Shape{k, n}, rng);
    Tape tape;
    const Tensor got = hcam::matmul(tape.constant(a), tape.constant(b)).value();
    const Tensor want = oracle::to_tensor(oracle::matmul(oracle::to_mat(a), oracle::to_mat(b)));
    EXPECT_LT(hcam::max_abs_diff(got, want), 1e-13);
  }
}

TEST(Ops, MatmulRejectsMismatchedShapes) {
  Tape tape;
  EXPECT_THROW(hcam::matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))),
               hcam::DimensionError);
}

TEST(Ops, SoftmaxMatchesExtendedPrecision) {
  hcam::Rng rng(2);
  const Tensor x = oracle::random_tensor(Shape{4, 7}, rng, -30.0, 30.0);
  Tape tape;
  const Tensor got = hcam::softmax(tape.constant(x), 1).value();
  for (std::size_t i = 0; i < 4; ++i) {
    const auto want = oracle::softmax(oracle::to_mat(x)[i]);
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_NEAR(got.at(i, j), static_cast<double>(want[j]), 1e-15);
      total += got.at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(Ops, SoftmaxIsShiftInvariantAndStable) {
  Tape tape;
  const Tensor x = Tensor::matrix(1, 3, {1000.0, 1001.0, 1002.0});
  const Tensor y = Tensor::matrix(1, 3, {0.0, 1.0, 2.0});
  const Tensor a = hcam::softmax(tape.constant(x), 1).value();
  const Tensor b = hcam::softmax(tape.constant(y), 1).value();
  EXPECT_TRUE(a.all_finite());
  EXPECT_LT(hcam::max_abs_diff(a, b), 1e-15);
}

TEST(Ops, LayerNormMatchesFormula) {
  hcam::Rng rng(3);
  const Tensor x = oracle::random_tensor(Shape{5, 6}, rng, -3.0, 3.0);
  const Tensor g = oracle::random_tensor(Shape{6}, rng);
  const Tensor b = oracle::random_tensor(Shape{6}, rng);
  Tape tape;
  const Tensor got =
      hcam::layer_norm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
  const Tensor want = oracle::to_tensor(
      oracle::layer_norm(oracle::to_mat(x), oracle::to_vec(g), oracle::to_vec(b)));
  EXPECT_LT(hcam::max_abs_diff(got, want), 1e-13);
}

TEST(Ops, CrossEntropyMatchesExtendedPrecision) {
  hcam::Rng rng(4);
  const Tensor logits = oracle::random_tensor(Shape{3, 5}, rng, -5.0, 5.0);
  const std::size_t targets[] = {4, 0, 2};
  Tape tape;
  const double got = hcam::cross_entropy_rows(tape.constant(logits), targets).value().item();
  long double want = 0.0L;
  const auto m = oracle::to_mat(logits);
  for (std::size_t i = 0; i < 3; ++i) want += oracle::cross_entropy(m[i], targets[i]);
  EXPECT_NEAR(got, static_cast<double>(want), 1e-13);
  EXPECT_THROW(hcam::cross_entropy_logits(tape.constant(Tensor::vector({1, 2})), 2),
               hcam::IndexError);
}

TEST(Autodiff, StopGradientBlocksOnlyItsOwnPath) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, -2.0, 3.0}));
  Var y = hcam::sum(hcam::add(hcam::mul(hcam::stop_gradient(x), x), x));
  const Tensor g = tape.backward(y).of(x);
  // d/dx [sg(x) * x + x] = sg(x) + 1
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], -1.0);
  EXPECT_EQ(g[2], 4.0);
}

TEST(Autodiff, FanOutAccumulatesGradients) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.5, 2.0}));
  Var y = hcam::sum(hcam::add(hcam::mul(x, x), hcam::scale(x, 3.0)));
  const Tensor g = tape.backward(y).of(x);
  EXPECT_DOUBLE_EQ(g[0], 4.0);
  EXPECT_DOUBLE_EQ(g[1], 7.0);
}

TEST(Autodiff, UnreachedLeavesGetZeros) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0}));
  Var unused = tape.leaf(Tensor(Shape{2, 2}, 1.0));
  const auto grads = tape.backward(hcam::sum(x));
  const Tensor g = grads.of(unused);
  EXPECT_EQ(g.shape(), (Shape{2, 2}));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, BackwardNeedsScalarLoss) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW((void)tape.backward(x), hcam::ContractError);
}

TEST(Autodiff, ValuesStayValidWhileTapeGrows) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({1.0, 2.0, 3.0}));
  const Tensor& ref = x.value();
  for (int i = 0; i < 5000; ++i) (void)tape.constant(Tensor::vector({0.0}));
  EXPECT_EQ(ref[2], 3.0);
}

TEST(Gradcheck, EveryOpPassesAtTolerance) {
  const hcam::GradcheckReport report = hcam::run_gradcheck_suite(7);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.passed) << e.name << " rel err " << e.result.max_relative_error;
  }
  EXPECT_LT(report.worst_relative_error(), 1e-4);
  EXPECT_GT(report.entries.size(), 30u);
}

TEST(Gradcheck, HarnessDetectsWrongBackward) {
  const hcam::GradcheckEntry e = hcam::run_mutation_selftest(7);
  EXPECT_FALSE(e.passed);
  EXPECT_GT(e.result.max_relative_error, 0.05);
}

TEST(Gradcheck, StopGradientProbeIsExactlyZero) {
  const hcam::StopGradientProbe p = hcam::probe_stop_gradient(11);
  EXPECT_EQ(p.max_analytic, 0.0);
  EXPECT_EQ(p.max_numeric, 0.0);
}

TEST(Gradcheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(hcam::gradient_relative_error(0.0, 1e-6, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(hcam::gradient_relative_error(2.0, 1.0, 1e-3), 0.5);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  hcam::ParameterSet params;
  params.add("w", Tensor::vector({1.0, 1.0, 1.0}));
  hcam::AdamConfig config;
  config.learning_rate = 0.1;
  auto state = hcam::AdamState::for_parameters(params, config);
  hcam::adam_step(params, {Tensor::vector({0.5, -2.0, 0.0})}, state);
  // Bias-corrected moments equal g and g^2 after one step.
  EXPECT_NEAR(params[0].value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(params[0].value[1], 1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(params[0].value[2], 1.0);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  hcam::ParameterSet params;
  params.add("w", Tensor::vector({0.3}));
  hcam::AdamConfig config;
  auto state = hcam::AdamState::for_parameters(params, config);
  long double w = 0.3L, m = 0.0L, v = 0.0L;
  for (int t = 1; t <= 50; ++t) {
    const double g = std::sin(0.7 * t) + 2.0 * static_cast<double>(w);
    hcam::adam_step(params, {Tensor::vector({g})}, state);
    m = 0.9L * m + 0.1L * g;
    v = 0.999L * v + 0.001L * g * g;
    const long double mh = m / (1.0L - std::pow(0.9L, t));
    const long double vh = v / (1.0L - std::pow(0.999L, t));
    w -= 2e-4L * mh / (std::sqrt(vh) + 1e-8L);
  }
  EXPECT_NEAR(params[0].value[0], static_cast<double>(w), 1e-12);
}

TEST(Parameters, RoundToFloatIsIdempotent) {
  hcam::ParameterSet params;
  params.add("w", Tensor::vector({0.1, 1.0 / 3.0}));
  params.round_to_float();
  const auto once = params.snapshot();
  params.round_to_float();
  EXPECT_TRUE(hcam::bitwise_equal(once[0], params[0].value));
  EXPECT_EQ(params[0].value[0], static_cast<double>(0.1F));
}

TEST(Parameters, NamesAreUnique) {
  hcam::ParameterSet params;
  params.add("w", Tensor::vector({1.0}));
  EXPECT_THROW(params.add("w", Tensor::vector({1.0})), hcam::ContractError);
}

}  // namespace
