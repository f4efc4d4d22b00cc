#include "hcam/chunk_memory.hpp"

#include <algorithm>

#include "hcam/errors.hpp"

namespace hcam {

Tensor MemoryView::summary_matrix() const {
  if (summaries.empty()) throw ContractError("summary_matrix of an empty memory");
  const std::size_t d = summaries.front().size();
  Tensor out(Shape{summaries.size(), d});
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    std::copy_n(summaries[i].data(), d, out.data() + i * d);
  }
  return out;
}

ChunkMemory::ChunkMemory(std::size_t width, ChunkMemoryConfig config)
    : width_(width), config_(config) {
  if (width_ == 0) throw ContractError("chunk memory width must be positive");
  if (config_.chunk_size == 0) throw ContractError("chunk_size must be positive");
  if (config_.overlap >= config_.chunk_size) {
    throw ContractError("overlap must be smaller than chunk_size");
  }
  if (config_.capacity == 0) throw ContractError("capacity must be positive");
  buffer_.resize(config_.chunk_size * width_);
}

bool ChunkMemory::write(std::span<const double> state) {
  if (state.size() != width_) {
    throw DimensionError("chunk memory write of width " +
                         std::to_string(state.size()) + ", memory width " +
                         std::to_string(width_));
  }
  std::copy(state.begin(), state.end(), buffer_.begin() + buffered_ * width_);
  buffered_ += 1;
  if (buffered_ < config_.chunk_size) return false;

  push_chunk(Tensor(Shape{config_.chunk_size, width_}, buffer_));
  const std::size_t keep = config_.overlap * width_;
  std::copy(buffer_.end() - static_cast<std::ptrdiff_t>(keep), buffer_.end(),
            buffer_.begin());
  buffered_ = config_.overlap;
  return true;
}

void ChunkMemory::append_chunk(const Tensor& rows) {
  if (rows.shape() != Shape{config_.chunk_size, width_}) {
    throw DimensionError("append_chunk expects " +
                         to_string(Shape{config_.chunk_size, width_}) + ", got " +
                         to_string(rows.shape()));
  }
  push_chunk(rows);
}

void ChunkMemory::push_chunk(Tensor rows) {
  Tensor summary(Shape{width_});
  for (std::size_t r = 0; r < config_.chunk_size; ++r) {
    const auto row = rows.row(r);
    for (std::size_t c = 0; c < width_; ++c) summary[c] += row[c];
  }
  for (auto& v : summary.values()) v /= static_cast<double>(config_.chunk_size);
  chunks_.push_back(std::move(rows));
  summaries_.push_back(std::move(summary));
  if (chunks_.size() > config_.capacity) {
    chunks_.pop_front();
    summaries_.pop_front();
    evictions_ += 1;
  }
}

void ChunkMemory::reset() {
  chunks_.clear();
  summaries_.clear();
  buffered_ = 0;
  evictions_ = 0;
}

MemoryView ChunkMemory::read() const {
  MemoryView view;
  view.chunks.assign(chunks_.begin(), chunks_.end());
  view.summaries.assign(summaries_.begin(), summaries_.end());
  return view;
}

}  // namespace hcam
