#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcam/chunk_memory.hpp"
#include "hcam/ops.hpp"
#include "hcam/parameters.hpp"
#include "hcam/tape.hpp"

namespace hcam {

class Rng;

/// Score-computation counters. One "score" is one query-key dot product
/// evaluated for a query position, independent of the number of heads.
struct AttentionCounters {
  std::uint64_t relevance_scores = 0;  // query vs. chunk summary
  std::uint64_t detail_scores = 0;     // query vs. row of a selected chunk
  std::uint64_t dense_scores = 0;      // query vs. every stored row
  std::uint64_t window_scores = 0;     // local / XL attention

  std::uint64_t hierarchical_total() const {
    return relevance_scores + detail_scores;
  }
};

/// Multi-head attention weights bound to a tape. Head h owns columns
/// [h * d_head, (h + 1) * d_head) of the query, key and value projections.
struct AttentionWeights {
  Var query;
  Var key;
  Var value;
  Var output;
  std::size_t heads = 1;
};

class AttentionParams {
 public:
  AttentionParams() = default;
  /// Registers `<prefix>.wq`, `.wk`, `.wv` and `.wo` ([d_model x d_model]).
  AttentionParams(ParameterSet& set, const std::string& prefix,
                  std::size_t d_model, std::size_t heads, Rng& rng);

  AttentionWeights bind(Tape& tape) const;

  std::size_t heads() const noexcept { return heads_; }
  std::size_t d_model() const noexcept { return d_model_; }

  Parameter* query = nullptr;
  Parameter* key = nullptr;
  Parameter* value = nullptr;
  Parameter* output = nullptr;

 private:
  std::size_t heads_ = 1;
  std::size_t d_model_ = 0;
};

struct HcamWeights {
  Var norm_gain;
  Var norm_bias;
  Var relevance;  // [d x d] query projection used against chunk summaries
  AttentionWeights detail;
};

/// Parameters of one hierarchical chunk attention block: the input
/// LayerNorm, the relevance query projection, and the detail attention.
class HcamParams {
 public:
  HcamParams() = default;
  HcamParams(ParameterSet& set, const std::string& prefix, std::size_t d_model,
             std::size_t heads, Rng& rng);

  HcamWeights bind(Tape& tape) const;

  Parameter* norm_gain = nullptr;
  Parameter* norm_bias = nullptr;
  Parameter* relevance = nullptr;
  AttentionParams detail;
};

/// Fixed sinusoidal encodings, [count x width].
Tensor sinusoidal_positions(std::size_t count, std::size_t width);

// ---------------------------------------------------------------------------
// Attention over sliding windows (local attention, TransformerXL spans).

/// Key layout of one query for windowed_attention. Keys are rows
/// [key_begin, key_end) of the key/value tensors; rows below detached_end
/// read the detached key/value tensors instead, so no gradient reaches the
/// inputs that produced them. Positional rows are indexed by the distance
/// from key_begin.
struct QueryWindow {
  std::size_t key_begin = 0;
  std::size_t key_end = 0;
  std::size_t detached_end = 0;
  std::size_t query_position = 0;
};

struct WindowedAttentionInputs {
  Var queries;  // [q x d], already projected
  Var keys;     // [s x d]
  Var values;   // [s x d]
  /// Optional; required when any window has detached_end > key_begin.
  Var detached_keys;
  Var detached_values;
  /// Optional projected positional rows, [span x d] each.
  Var query_positions;
  Var key_positions;
  Var value_positions;
  std::size_t heads = 1;
  /// When non-zero, each head keeps only its top_k highest pre-softmax
  /// scores per query (earliest key wins ties); the rest are masked out.
  std::size_t top_k = 0;
};

/// Scaled dot-product attention per head over each query's window, heads
/// concatenated. Returns the pre-output-projection mixture [q x d].
Var windowed_attention(const WindowedAttentionInputs& in,
                       std::span<const QueryWindow> windows,
                       std::uint64_t* score_counter = nullptr);

/// MHA(queries, keys_values): per-head softmax(q k^T / sqrt(d_head)) v,
/// concatenated and output-projected. With `causal`, query i sees keys <= i.
Var multi_head_attention(Var queries, Var keys_values, const AttentionWeights& w,
                         bool causal, AttentionCounters* counters = nullptr);

/// Causal self-attention where position t sees positions
/// max(0, t - window + 1) .. t.
Var local_attention(Var sequence, std::size_t window, const AttentionWeights& w,
                    AttentionCounters* counters = nullptr);

// ---------------------------------------------------------------------------
// Hierarchical chunk attention.

/// Relevance of every query to every chunk, R = softmax(Q(normed) . S^T),
/// plus the per-query top-k chunk indices in ascending order.
struct RelevanceScores {
  Var weights;  // [q x N]
  std::vector<std::vector<std::size_t>> selected;
};

/// Returns std::nullopt when `summaries` is empty; callers then treat the
/// memory read as a pure residual passthrough.
std::optional<RelevanceScores> chunk_relevance(Var normed_input,
                                               std::span<const Tensor> summaries,
                                               Var relevance_projection,
                                               std::size_t k);

/// Indices of the min(k, n) largest entries, ties resolved toward the
/// smaller index, returned in ascending index order.
std::vector<std::size_t> top_k_select(std::span<const double> row, std::size_t k);

/// Chunks laid out for the hierarchical kernels: summaries [N x d] and the
/// rows of every chunk stacked chronologically, [N * chunk_size x d].
struct MemorySnapshot {
  std::size_t chunk_size = 0;
  std::size_t count = 0;
  Tensor summaries;
  Tensor contents;
};

MemorySnapshot snapshot_of(const ChunkMemory& memory);
/// Concatenates views that share chunk size and width; empty views are skipped.
MemorySnapshot snapshot_of(std::span<const MemoryView> views, std::size_t chunk_size);

/// Chunks [begin, end) of a snapshot visible to one query.
struct ChunkRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool empty() const noexcept { return begin >= end; }
};

struct HierarchicalOptions {
  std::size_t top_k = 1;
  /// Add within-chunk sinusoidal positions to chunk rows before the
  /// detail key/value projections.
  bool chunk_positions = true;
};

/// Hierarchical read for many queries at once. Per query: normalize, score
/// every visible summary, keep the top-k chunks, attend within each of them,
/// weight each result by its (un-renormalized) relevance and add the sum to
/// the input. Memory contents are constants; gradients reach the input, the
/// LayerNorm, the relevance projection and the detail attention weights.
Var hierarchical_attention(Var input, const MemorySnapshot& memory,
                           std::span<const ChunkRange> visible,
                           const HcamWeights& weights,
                           const HierarchicalOptions& options,
                           AttentionCounters* counters = nullptr);

/// The single-memory block: every query sees every stored chunk. An empty
/// memory returns `input` unchanged.
Var hcam_block(Var input, const ChunkMemory& memory, const HcamWeights& weights,
               std::size_t top_k, AttentionCounters* counters = nullptr,
               bool chunk_positions = true);

/// Reference path that attends densely over every stored row (all chunks
/// flattened into one sequence). Used for cost comparisons.
Var dense_memory_attention(Var input, const ChunkMemory& memory,
                           const HcamWeights& weights,
                           AttentionCounters* counters = nullptr,
                           bool chunk_positions = true);

struct AttentionOpCount {
  std::uint64_t hierarchical = 0;
  std::uint64_t dense = 0;
};

/// Per-query score counts: N + k*C for the hierarchical read, N*C dense.
AttentionOpCount attention_op_count(std::size_t chunks, std::size_t chunk_size,
                                    std::size_t top_k);

/// R_i / (1/N): uniform attention maps to all ones.
Tensor relative_attention_weights(std::span<const double> relevance);

}  // namespace hcam
