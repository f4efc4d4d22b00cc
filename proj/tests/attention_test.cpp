#include <gtest/gtest.h>

#include <algorithm>

#include "hcam/attention.hpp"
#include "hcam/errors.hpp"
#include "hcam/random.hpp"
#include "support/oracles.hpp"

namespace {

using hcam::Shape;
using hcam::Tape;
using hcam::Tensor;
using hcam::Var;

struct Block {
  hcam::ParameterSet params;
  hcam::HcamParams hcam;
  Block(std::size_t d, std::size_t heads, hcam::Rng& rng) : hcam(params, "b", d, heads, rng) {
    // Non-trivial LayerNorm parameters so the oracle exercises them.
    for (auto& v : hcam.norm_gain->value.values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : hcam.norm_bias->value.values()) v = rng.uniform(-0.2, 0.2);
  }
  oracle::HcamWeightsData data() const {
    return {oracle::to_vec(hcam.norm_gain->value), oracle::to_vec(hcam.norm_bias->value),
            oracle::to_mat(hcam.relevance->value),  oracle::to_mat(hcam.detail.query->value),
            oracle::to_mat(hcam.detail.key->value), oracle::to_mat(hcam.detail.value->value),
            oracle::to_mat(hcam.detail.output->value), hcam.detail.heads()};
  }
};

std::vector<oracle::Mat> chunk_mats(const hcam::ChunkMemory& mem) {
  std::vector<oracle::Mat> out;
  for (std::size_t i = 0; i < mem.size(); ++i) out.push_back(oracle::to_mat(mem.chunk(i)));
  return out;
}

TEST(TopK, MatchesStableSortWithTies) {
  hcam::Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> row(n);
    // Few distinct values so ties are common.
    for (auto& v : row) v = static_cast<double>(rng.below(4));
    const std::size_t k = 1 + rng.below(n + 2);
    EXPECT_EQ(hcam::top_k_select(row, k), oracle::top_k_by_sort(row, k));
  }
}

TEST(TopK, RejectsZero) {
  const double row[] = {1.0};
  EXPECT_THROW(hcam::top_k_select(row, 0), hcam::ContractError);
}

TEST(Positions, MatchSinusoidFormula) {
  const Tensor pe = hcam::sinusoidal_positions(9, 6);
  EXPECT_LT(hcam::max_abs_diff(pe, oracle::to_tensor(oracle::positions(9, 6))), 1e-14);
}

TEST(MultiHead, MatchesNaiveAttention) {
  hcam::Rng rng(6);
  for (bool causal : {false, true}) {
    const std::size_t n = 5, d = 8, heads = 2;
    hcam::ParameterSet params;
    hcam::AttentionParams p(params, "a", d, heads, rng);
    const Tensor x = oracle::random_tensor(Shape{n, d}, rng);
    Tape tape;
    const Tensor got =
        hcam::multi_head_attention(tape.constant(x), tape.constant(x), p.bind(tape), causal).value();
    const auto xm = oracle::to_mat(x);
    const auto core = oracle::attention_core(
        oracle::matmul(xm, oracle::to_mat(p.query->value)),
        oracle::matmul(xm, oracle::to_mat(p.key->value)),
        oracle::matmul(xm, oracle::to_mat(p.value->value)), heads,
        [causal](std::size_t i, std::size_t j) { return !causal || j <= i; });
    const Tensor want = oracle::to_tensor(oracle::matmul(core, oracle::to_mat(p.output->value)));
    EXPECT_LT(hcam::max_abs_diff(got, want), 1e-12) << "causal=" << causal;
  }
}

TEST(LocalAttention, SeesOnlyTheWindow) {
  hcam::Rng rng(7);
  const std::size_t n = 9, d = 8, heads = 4, window = 3;
  hcam::ParameterSet params;
  hcam::AttentionParams p(params, "a", d, heads, rng);
  const Tensor x = oracle::random_tensor(Shape{n, d}, rng);
  hcam::AttentionCounters counters;
  Tape tape;
  const Tensor got = hcam::local_attention(tape.constant(x), window, p.bind(tape), &counters).value();
  const auto xm = oracle::to_mat(x);
  const auto core = oracle::attention_core(
      oracle::matmul(xm, oracle::to_mat(p.query->value)),
      oracle::matmul(xm, oracle::to_mat(p.key->value)),
      oracle::matmul(xm, oracle::to_mat(p.value->value)), heads,
      [window](std::size_t i, std::size_t j) { return j <= i && i - j < window; });
  const Tensor want = oracle::to_tensor(oracle::matmul(core, oracle::to_mat(p.output->value)));
  EXPECT_LT(hcam::max_abs_diff(got, want), 1e-12);
  EXPECT_EQ(counters.window_scores, 1u + 2u + 3u * (n - 2));
}

TEST(Hcam, DenseSelectionMatchesOracle) {
  hcam::Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.below(6), c = 1 + rng.below(5), heads = 2;
    const std::size_t d = 2 * heads * (1 + rng.below(3));
    Block block(d, heads, rng);
    hcam::ChunkMemory mem(d, {c, 0, 64});
    for (std::size_t i = 0; i < n; ++i) mem.append_chunk(oracle::random_tensor(Shape{c, d}, rng));
    const Tensor x = oracle::random_tensor(Shape{3, d}, rng);
    for (bool pos : {true, false}) {
      Tape tape;
      const Tensor got =
          hcam::hcam_block(tape.constant(x), mem, block.hcam.bind(tape), n, nullptr, pos).value();
      const Tensor want = oracle::to_tensor(oracle::hierarchical(
          oracle::to_mat(x), chunk_mats(mem), block.data(), pos, oracle::all_indices));
      EXPECT_LT(hcam::max_abs_diff(got, want), 1e-10);
    }
  }
}

TEST(Hcam, TopKSelectionMatchesOracle) {
  hcam::Rng rng(9);
  const std::size_t d = 16, heads = 4, c = 4, n = 9;
  Block block(d, heads, rng);
  hcam::ChunkMemory mem(d, {c, 0, 64});
  for (std::size_t i = 0; i < n; ++i) mem.append_chunk(oracle::random_tensor(Shape{c, d}, rng, -2, 2));
  const Tensor x = oracle::random_tensor(Shape{6, d}, rng);
  for (std::size_t k : {1u, 2u, 4u}) {
    Tape tape;
    const Tensor got = hcam::hcam_block(tape.constant(x), mem, block.hcam.bind(tape), k).value();
    const Tensor want = oracle::to_tensor(oracle::hierarchical(
        oracle::to_mat(x), chunk_mats(mem), block.data(), true,
        [k](const std::vector<long double>& r) { return oracle::top_k_by_sort(r, k); }));
    EXPECT_LT(hcam::max_abs_diff(got, want), 1e-10) << "k=" << k;
  }
}

TEST(Hcam, EmptyMemoryIsPassthrough) {
  hcam::Rng rng(10);
  Block block(8, 2, rng);
  hcam::ChunkMemory mem(8, {4, 0, 8});
  mem.write(std::vector<double>(8, 1.0));  // buffered, not readable
  const Tensor x = oracle::random_tensor(Shape{2, 8}, rng);
  Tape tape;
  EXPECT_TRUE(hcam::bitwise_equal(
      hcam::hcam_block(tape.constant(x), mem, block.hcam.bind(tape), 2).value(), x));
}

TEST(Hcam, CountersMatchClosedForm) {
  hcam::Rng rng(11);
  for (auto [n, c, k] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {4, 8, 2}, {7, 3, 7}, {16, 2, 3}, {32, 8, 2}}) {
    Block block(8, 2, rng);
    hcam::ChunkMemory mem(8, {c, 0, 64});
    for (std::size_t i = 0; i < n; ++i) mem.append_chunk(oracle::random_tensor(Shape{c, 8}, rng));
    const std::size_t q = 3;
    const Tensor x = oracle::random_tensor(Shape{q, 8}, rng);
    hcam::AttentionCounters hc, dc;
    Tape tape;
    hcam::hcam_block(tape.constant(x), mem, block.hcam.bind(tape), k, &hc);
    hcam::dense_memory_attention(tape.constant(x), mem, block.hcam.bind(tape), &dc);
    const auto expected = hcam::attention_op_count(n, c, k);
    EXPECT_EQ(hc.hierarchical_total(), q * expected.hierarchical);
    EXPECT_EQ(hc.relevance_scores, q * n);
    EXPECT_EQ(dc.dense_scores, q * expected.dense);
    EXPECT_EQ(expected.hierarchical, n + k * c);
    EXPECT_EQ(expected.dense, n * c);
  }
  EXPECT_THROW(hcam::attention_op_count(4, 8, 0), hcam::ContractError);
  EXPECT_THROW(hcam::attention_op_count(4, 8, 5), hcam::ContractError);
}

TEST(Hcam, NonSelectedChunksDoNotAffectOutput) {
  hcam::Rng rng(12);
  const std::size_t d = 8, c = 4, n = 6, k = 2;
  Block block(d, 2, rng);
  std::vector<Tensor> chunks;
  for (std::size_t i = 0; i < n; ++i) chunks.push_back(oracle::random_tensor(Shape{c, d}, rng));
  const Tensor x = oracle::random_tensor(Shape{1, d}, rng);
  auto run = [&](const std::vector<Tensor>& cs) {
    hcam::ChunkMemory mem(d, {c, 0, 64});
    for (const auto& t : cs) mem.append_chunk(t);
    Tape tape;
    auto w = block.hcam.bind(tape);
    Var normed = hcam::layer_norm(tape.constant(x), w.norm_gain, w.norm_bias);
    std::vector<Tensor> summaries = mem.read().summaries;
    auto rel = hcam::chunk_relevance(normed, summaries, w.relevance, k);
    return std::make_pair(hcam::hcam_block(tape.constant(x), mem, w, k).value(), rel->selected[0]);
  };
  const auto [base, picked] = run(chunks);
  // Perturb rows of an unselected chunk while keeping its mean, so the
  // selection itself cannot change.
  for (std::size_t j = 0; j < n; ++j) {
    if (std::find(picked.begin(), picked.end(), j) != picked.end()) continue;
    auto changed = chunks;
    for (std::size_t col = 0; col < d; ++col) {
      changed[j].at(0, col) += 0.75;
      changed[j].at(1, col) -= 0.75;
    }
    const auto [out, picked_again] = run(changed);
    EXPECT_EQ(picked_again, picked);
    EXPECT_TRUE(hcam::bitwise_equal(out, base)) << "chunk " << j;
  }
}

TEST(Hcam, MemoryContentsReceiveNoGradient) {
  hcam::Rng rng(13);
  const std::size_t d = 8, c = 3;
  Block block(d, 2, rng);
  Tape tape;
  Var stored = tape.leaf(oracle::random_tensor(Shape{2 * c, d}, rng));
  hcam::MemorySnapshot snap;
  snap.chunk_size = c;
  snap.count = 2;
  snap.contents = stored.value();
  snap.summaries = Tensor(Shape{2, d});
  const std::vector<hcam::ChunkRange> visible(2, hcam::ChunkRange{0, 2});
  Var x = tape.leaf(oracle::random_tensor(Shape{2, d}, rng));
  Var y = hcam::hierarchical_attention(x, snap, visible, block.hcam.bind(tape), {2, true});
  const auto grads = tape.backward(hcam::sum(y));
  const Tensor stored_grad = grads.of(stored);
  for (double g : stored_grad.values()) EXPECT_EQ(g, 0.0);
  const Tensor input_grad = grads.of(x);
  double norm = 0.0;
  for (double g : input_grad.values()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Hcam, VisibilityRangesRestrictQueries) {
  hcam::Rng rng(14);
  const std::size_t d = 8, c = 2;
  Block block(d, 2, rng);
  hcam::ChunkMemory mem(d, {c, 0, 8});
  for (int i = 0; i < 4; ++i) mem.append_chunk(oracle::random_tensor(Shape{c, d}, rng));
  const hcam::MemorySnapshot snap = hcam::snapshot_of(mem);
  const Tensor x = oracle::random_tensor(Shape{3, d}, rng);
  Tape tape;
  auto w = block.hcam.bind(tape);
  const std::vector<hcam::ChunkRange> visible{{0, 0}, {1, 3}, {0, 4}};
  const Tensor got = hcam::hierarchical_attention(tape.constant(x), snap, visible, w, {4, true}).value();
  // Row 0 sees nothing; row 1 equals a read over chunks 1..2 only.
  for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(got.at(0, j), x.at(0, j));
  hcam::ChunkMemory sub(d, {c, 0, 8});
  sub.append_chunk(mem.chunk(1));
  sub.append_chunk(mem.chunk(2));
  Tensor x1(Shape{1, d});
  std::copy_n(x.row(1).begin(), d, x1.data());
  const Tensor want = hcam::hcam_block(tape.constant(x1), sub, w, 4).value();
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(got.at(1, j), want.at(0, j), 1e-14);
}

TEST(Hcam, RelativeWeightsOfUniformAreOnes) {
  const std::vector<double> r(5, 0.2);
  const Tensor w = hcam::relative_attention_weights(r);
  for (double v : w.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Hcam, RejectsWidthMismatch) {
  hcam::Rng rng(15);
  Block block(8, 2, rng);
  hcam::ChunkMemory mem(4, {2, 0, 8});
  Tape tape;
  EXPECT_THROW(hcam::hcam_block(tape.constant(Tensor(Shape{1, 8})), mem, block.hcam.bind(tape), 1),
               hcam::DimensionError);
  EXPECT_THROW(hcam::hcam_block(tape.constant(Tensor(Shape{1, 4})), mem, block.hcam.bind(tape), 0),
               hcam::ContractError);
}

}  // namespace
