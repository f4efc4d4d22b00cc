#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "hcam/tensor.hpp"

namespace hcam {

struct ChunkMemoryConfig {
  std::size_t chunk_size = 8;
  /// Trailing rows of a finalized chunk that seed the next one; < chunk_size.
  std::size_t overlap = 0;
  /// Oldest chunks are evicted beyond this count.
  std::size_t capacity = 4096;
};

/// Chronological snapshot of the finalized chunks. Values are copies, so they
/// enter any computation as constants.
struct MemoryView {
  std::vector<Tensor> summaries;  // each [d]
  std::vector<Tensor> chunks;     // each [C x d]

  std::size_t size() const noexcept { return chunks.size(); }
  bool empty() const noexcept { return chunks.empty(); }
  /// Summaries stacked as [N x d]; the view must not be empty.
  Tensor summary_matrix() const;
};

/// Episodic store that groups per-step state vectors into fixed-length
/// chunks, each keyed by the mean of its rows. Rows still in the write
/// buffer are not readable until their chunk fills.
class ChunkMemory {
 public:
  ChunkMemory(std::size_t width, ChunkMemoryConfig config);

  /// Appends one state row. Returns true when the row completed a chunk.
  bool write(std::span<const double> state);
  /// Stores a complete chunk directly, bypassing the write buffer.
  void append_chunk(const Tensor& rows);
  void reset();

  MemoryView read() const;

  std::size_t size() const noexcept { return chunks_.size(); }
  bool empty() const noexcept { return chunks_.empty(); }
  std::size_t buffered() const noexcept { return buffered_; }
  std::size_t width() const noexcept { return width_; }
  const ChunkMemoryConfig& config() const noexcept { return config_; }
  std::uint64_t evictions() const noexcept { return evictions_; }

  const Tensor& chunk(std::size_t i) const { return chunks_.at(i); }
  const Tensor& summary(std::size_t i) const { return summaries_.at(i); }

 private:
  void push_chunk(Tensor rows);

  std::size_t width_;
  ChunkMemoryConfig config_;
  std::deque<Tensor> chunks_;
  std::deque<Tensor> summaries_;
  std::vector<double> buffer_;
  std::size_t buffered_ = 0;
  std::uint64_t evictions_ = 0;
};

}  // namespace hcam
