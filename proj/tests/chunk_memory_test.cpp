#include <gtest/gtest.h>

#include <deque>

#include "hcam/chunk_memory.hpp"
#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace {

using hcam::Shape;
using hcam::Tensor;

// Independent model of the write rule: a flat log of written rows since the
// last reset; chunk j covers rows [j * stride, j * stride + C) with
// stride = C - overlap, and only the newest `capacity` chunks survive.
struct TraceModel {
  std::size_t c, overlap, capacity, width;
  std::vector<std::vector<double>> rows;

  std::size_t stride() const { return c - overlap; }
  std::size_t total_chunks() const {
    return rows.size() < c ? 0 : 1 + (rows.size() - c) / stride();
  }
  std::size_t first_kept() const {
    return total_chunks() > capacity ? total_chunks() - capacity : 0;
  }
};

void expect_matches(const hcam::ChunkMemory& mem, const TraceModel& model) {
  const std::size_t first = model.first_kept();
  ASSERT_EQ(mem.size(), model.total_chunks() - first);
  ASSERT_EQ(mem.evictions(), first);
  const hcam::MemoryView view = mem.read();
  for (std::size_t j = 0; j < mem.size(); ++j) {
    const std::size_t begin = (first + j) * model.stride();
    const Tensor& chunk = view.chunks[j];
    ASSERT_EQ(chunk.shape(), (Shape{model.c, model.width}));
    for (std::size_t r = 0; r < model.c; ++r) {
      for (std::size_t col = 0; col < model.width; ++col) {
        ASSERT_EQ(chunk.at(r, col), model.rows[begin + r][col]);
      }
    }
    for (std::size_t col = 0; col < model.width; ++col) {
      long double mean = 0.0L;
      for (std::size_t r = 0; r < model.c; ++r) mean += model.rows[begin + r][col];
      mean /= static_cast<long double>(model.c);
      ASSERT_NEAR(view.summaries[j][col], static_cast<double>(mean), 1e-6);
      ASSERT_NEAR(view.summaries[j][col], static_cast<double>(mean), 1e-14);
    }
  }
  // Rows after the last completed chunk are never readable.
  const std::size_t covered = model.total_chunks() == 0
                                  ? 0
                                  : (model.total_chunks() - 1) * model.stride() + model.c;
  EXPECT_EQ(mem.buffered(), model.rows.size() - covered + (model.total_chunks() ? model.overlap : 0));
}

TEST(ChunkMemory, RandomTracesMatchModel) {
  hcam::Rng rng(21);
  for (int trace = 0; trace < 300; ++trace) {
    const std::size_t c = 1 + rng.below(6);
    const std::size_t overlap = rng.below(c);
    const std::size_t capacity = 1 + rng.below(6);
    const std::size_t width = 1 + rng.below(4);
    hcam::ChunkMemory mem(width, {c, overlap, capacity});
    TraceModel model{c, overlap, capacity, width, {}};
    const std::size_t steps = rng.below(60);
    for (std::size_t s = 0; s < steps; ++s) {
      if (rng.below(25) == 0) {
        mem.reset();
        model.rows.clear();
      } else {
        std::vector<double> row(width);
        for (auto& v : row) v = rng.uniform(-10, 10);
        const std::size_t before = model.total_chunks();
        model.rows.push_back(row);
        EXPECT_EQ(mem.write(row), model.total_chunks() > before);
      }
      expect_matches(mem, model);
    }
  }
}

TEST(ChunkMemory, ResetIsolatesEpisodes) {
  hcam::ChunkMemory a(3, {2, 0, 8}), b(3, {2, 0, 8});
  for (int i = 0; i < 5; ++i) a.write(std::vector<double>{1.0 * i, 2.0, 3.0});
  a.reset();
  EXPECT_TRUE(a.empty());
  EXPECT_EQ(a.buffered(), 0u);
  for (int i = 0; i < 4; ++i) {
    const std::vector<double> row{0.5 * i, -1.0, 4.0};
    EXPECT_EQ(a.write(row), b.write(row));
  }
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_TRUE(hcam::bitwise_equal(a.chunk(j), b.chunk(j)));
    EXPECT_TRUE(hcam::bitwise_equal(a.summary(j), b.summary(j)));
  }
}

TEST(ChunkMemory, ReadIsASnapshot) {
  hcam::ChunkMemory mem(2, {1, 0, 8});
  mem.write(std::vector<double>{1.0, 2.0});
  const hcam::MemoryView view = mem.read();
  mem.write(std::vector<double>{3.0, 4.0});
  EXPECT_EQ(view.size(), 1u);
  EXPECT_EQ(mem.size(), 2u);
}

TEST(ChunkMemory, RejectsBadConfiguration) {
  EXPECT_THROW(hcam::ChunkMemory(0, {}), hcam::ContractError);
  EXPECT_THROW(hcam::ChunkMemory(4, {0, 0, 1}), hcam::ContractError);
  EXPECT_THROW(hcam::ChunkMemory(4, {2, 2, 1}), hcam::ContractError);
  EXPECT_THROW(hcam::ChunkMemory(4, {2, 0, 0}), hcam::ContractError);
  hcam::ChunkMemory mem(4, {2, 0, 1});
  EXPECT_THROW(mem.write(std::vector<double>(3)), hcam::DimensionError);
  EXPECT_THROW(mem.append_chunk(Tensor(Shape{3, 4})), hcam::DimensionError);
}

TEST(ChunkMemory, AppendChunkBypassesBuffer) {
  hcam::ChunkMemory mem(2, {2, 0, 8});
  mem.write(std::vector<double>{9.0, 9.0});
  mem.append_chunk(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(mem.size(), 1u);
  EXPECT_EQ(mem.buffered(), 1u);
  EXPECT_EQ(mem.summary(0)[0], 2.0);
  EXPECT_EQ(mem.summary(0)[1], 3.0);
}

}  // namespace
