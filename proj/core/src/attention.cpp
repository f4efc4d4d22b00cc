#include "hcam/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace hcam {

AttentionParams::AttentionParams(ParameterSet& set, const std::string& prefix,
                                 std::size_t d_model, std::size_t heads, Rng& rng)
    : heads_(heads), d_model_(d_model) {
  if (heads == 0 || d_model % heads != 0) {
    throw ContractError("d_model " + std::to_string(d_model) +
                        " is not divisible by " + std::to_string(heads) + " heads");
  }
  query = &set.add(prefix + ".wq", init::xavier_uniform(d_model, d_model, rng));
  key = &set.add(prefix + ".wk", init::xavier_uniform(d_model, d_model, rng));
  value = &set.add(prefix + ".wv", init::xavier_uniform(d_model, d_model, rng));
  output = &set.add(prefix + ".wo", init::xavier_uniform(d_model, d_model, rng));
}

AttentionWeights AttentionParams::bind(Tape& tape) const {
  return AttentionWeights{tape.param(*query), tape.param(*key), tape.param(*value),
                          tape.param(*output), heads_};
}

HcamParams::HcamParams(ParameterSet& set, const std::string& prefix,
                       std::size_t d_model, std::size_t heads, Rng& rng) {
  norm_gain = &set.add(prefix + ".norm.gain", init::ones(Shape{d_model}));
  norm_bias = &set.add(prefix + ".norm.bias", init::zeros(Shape{d_model}));
  relevance = &set.add(prefix + ".relevance",
                       init::xavier_uniform(d_model, d_model, rng));
  detail = AttentionParams(set, prefix + ".detail", d_model, heads, rng);
}

HcamWeights HcamParams::bind(Tape& tape) const {
  return HcamWeights{tape.param(*norm_gain), tape.param(*norm_bias),
                     tape.param(*relevance), detail.bind(tape)};
}

Tensor sinusoidal_positions(std::size_t count, std::size_t width) {
  Tensor pe(Shape{count, width});
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      pe.at(p, i) = std::sin(static_cast<double>(p) * freq);
      if (i + 1 < width) pe.at(p, i + 1) = std::cos(static_cast<double>(p) * freq);
    }
  }
  return pe;
}

std::vector<std::size_t> top_k_select(std::span<const double> row, std::size_t k) {
  if (k == 0) throw ContractError("top-k selection needs k >= 1");
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (k < row.size()) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    order.resize(k);
    std::sort(order.begin(), order.end());
  }
  return order;
}

// ---------------------------------------------------------------------------

namespace {

Tape& tape_of(Var v) {
  if (!v) throw ContractError("attention input is an unbound Var");
  return *v.tape();
}

void require_rows(const Tensor& t, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.cols() != cols) {
    throw DimensionError(std::string(what) + " must be [n x " + std::to_string(cols) +
                         "], got " + to_string(t.shape()));
  }
}

double head_dot(const double* a, const double* b, std::size_t begin,
                std::size_t width) {
  double s = 0.0;
  for (std::size_t c = begin; c < begin + width; ++c) s += a[c] * b[c];
  return s;
}

// In-place softmax over `scores`; entries equal to -inf get probability 0.
void softmax_inplace(std::span<double> scores) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double s : scores) peak = std::max(peak, s);
  double total = 0.0;
  for (double& s : scores) {
    s = std::isinf(s) && s < 0 ? 0.0 : std::exp(s - peak);
    total += s;
  }
  for (double& s : scores) s /= total;
}

// Masks all but the top_k scores (earliest wins ties) to -inf.
void mask_to_top_k(std::span<double> scores, std::size_t top_k) {
  if (top_k == 0 || top_k >= scores.size()) return;
  const auto keep = top_k_select(scores, top_k);
  std::size_t next = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (next < keep.size() && keep[next] == j) {
      ++next;
    } else {
      scores[j] = -std::numeric_limits<double>::infinity();
    }
  }
}

}  // namespace

Var windowed_attention(const WindowedAttentionInputs& in,
                       std::span<const QueryWindow> windows,
                       std::uint64_t* score_counter) {
  const Tensor& q = in.queries.value();
  if (q.rank() != 2) {
    throw DimensionError("windowed_attention queries must be a matrix, got " +
                         to_string(q.shape()));
  }
  const std::size_t d = q.cols();
  const std::size_t nq = q.rows();
  if (in.heads == 0 || d % in.heads != 0) {
    throw ContractError("width " + std::to_string(d) + " not divisible by " +
                        std::to_string(in.heads) + " heads");
  }
  if (windows.size() != nq) {
    throw DimensionError("windowed_attention: " + std::to_string(nq) +
                         " queries but " + std::to_string(windows.size()) + " windows");
  }
  require_rows(in.keys.value(), d, "keys");
  require_rows(in.values.value(), d, "values");
  const std::size_t s = in.keys.value().rows();
  if (in.values.value().rows() != s) {
    throw DimensionError("keys and values differ: " + to_string(in.keys.shape()) +
                         " vs " + to_string(in.values.shape()));
  }
  const bool has_detached = static_cast<bool>(in.detached_keys);
  if (has_detached) {
    if (in.detached_keys.shape() != in.keys.shape() ||
        in.detached_values.shape() != in.values.shape()) {
      throw DimensionError("detached keys/values must match keys/values");
    }
  }
  const bool has_pos = static_cast<bool>(in.key_positions);
  std::size_t span_limit = std::numeric_limits<std::size_t>::max();
  if (has_pos) {
    require_rows(in.query_positions.value(), d, "query positions");
    require_rows(in.key_positions.value(), d, "key positions");
    require_rows(in.value_positions.value(), d, "value positions");
    span_limit = in.key_positions.value().rows();
  }
  std::size_t longest = 0;
  for (const auto& w : windows) {
    if (w.key_begin >= w.key_end || w.key_end > s) {
      throw ContractError("attention window [" + std::to_string(w.key_begin) + ", " +
                          std::to_string(w.key_end) + ") is empty or exceeds " +
                          std::to_string(s) + " keys");
    }
    if (w.detached_end > w.key_begin && !has_detached) {
      throw ContractError("window uses detached keys that were not provided");
    }
    if (has_pos && (w.key_end - w.key_begin > span_limit ||
                    w.query_position >= span_limit)) {
      throw DimensionError("window longer than the positional table");
    }
    longest = std::max(longest, w.key_end - w.key_begin);
  }

  const std::size_t heads = in.heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Effective (position-augmented) rows are assembled per query into scratch
  // buffers; the backward pass rebuilds them the same way.
  struct Geometry {
    const Tensor* q;
    const Tensor* k;
    const Tensor* v;
    const Tensor* dk;
    const Tensor* dv;
    const Tensor* pq;
    const Tensor* pk;
    const Tensor* pv;
  };
  auto geometry = [in, has_detached, has_pos] {
    return Geometry{&in.queries.value(),
                    &in.keys.value(),
                    &in.values.value(),
                    has_detached ? &in.detached_keys.value() : nullptr,
                    has_detached ? &in.detached_values.value() : nullptr,
                    has_pos ? &in.query_positions.value() : nullptr,
                    has_pos ? &in.key_positions.value() : nullptr,
                    has_pos ? &in.value_positions.value() : nullptr};
  };
  auto gather = [d](const Geometry& g, const QueryWindow& w, std::vector<double>& ke,
                    std::vector<double>& ve) {
    const std::size_t len = w.key_end - w.key_begin;
    ke.resize(len * d);
    ve.resize(len * d);
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t row = w.key_begin + j;
      const bool detached = row < w.detached_end;
      const double* kr = (detached ? g.dk : g.k)->data() + row * d;
      const double* vr = (detached ? g.dv : g.v)->data() + row * d;
      double* ko = ke.data() + j * d;
      double* vo = ve.data() + j * d;
      if (g.pk != nullptr) {
        const double* pk = g.pk->data() + j * d;
        const double* pv = g.pv->data() + j * d;
        for (std::size_t c = 0; c < d; ++c) {
          ko[c] = kr[c] + pk[c];
          vo[c] = vr[c] + pv[c];
        }
      } else {
        std::copy_n(kr, d, ko);
        std::copy_n(vr, d, vo);
      }
    }
  };
  auto query_row = [d](const Geometry& g, std::size_t i, const QueryWindow& w,
                       std::vector<double>& qe) {
    qe.resize(d);
    const double* qr = g.q->data() + i * d;
    if (g.pq != nullptr) {
      const double* pq = g.pq->data() + w.query_position * d;
      for (std::size_t c = 0; c < d; ++c) qe[c] = qr[c] + pq[c];
    } else {
      std::copy_n(qr, d, qe.data());
    }
  };
  auto head_probs = [d, dh, inv_sqrt](const std::vector<double>& qe,
                                      const std::vector<double>& ke, std::size_t len,
                                      std::size_t h, std::size_t top_k,
                                      std::vector<double>& p) {
    p.resize(len);
    for (std::size_t j = 0; j < len; ++j) {
      p[j] = head_dot(qe.data(), ke.data() + j * d, h * dh, dh) * inv_sqrt;
    }
    mask_to_top_k(p, top_k);
    softmax_inplace(p);
  };

  Tensor out(Shape{nq, d});
  std::vector<double> qe, ke, ve, p;
  ke.reserve(longest * d);
  ve.reserve(longest * d);
  const Geometry g = geometry();
  std::uint64_t scores = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    const QueryWindow& w = windows[i];
    const std::size_t len = w.key_end - w.key_begin;
    scores += len;
    query_row(g, i, w, qe);
    gather(g, w, ke, ve);
    double* o = out.data() + i * d;
    for (std::size_t h = 0; h < heads; ++h) {
      head_probs(qe, ke, len, h, in.top_k, p);
      for (std::size_t j = 0; j < len; ++j) {
        if (p[j] == 0.0) continue;
        const double* vr = ve.data() + j * d;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) o[c] += p[j] * vr[c];
      }
    }
  }
  if (score_counter != nullptr) *score_counter += scores;

  // Input slots: queries, keys, values, then optional groups.
  std::vector<Var> inputs{in.queries, in.keys, in.values};
  const std::size_t detached_slot = inputs.size();
  if (has_detached) {
    inputs.push_back(in.detached_keys);
    inputs.push_back(in.detached_values);
  }
  const std::size_t pos_slot = inputs.size();
  if (has_pos) {
    inputs.push_back(in.query_positions);
    inputs.push_back(in.key_positions);
    inputs.push_back(in.value_positions);
  }
  std::vector<QueryWindow> win(windows.begin(), windows.end());
  const std::size_t top_k = in.top_k;
  return tape_of(in.queries)
      .record(std::move(out), std::move(inputs),
              [geometry, gather, query_row, head_probs, win = std::move(win), d, dh,
               heads, inv_sqrt, top_k, has_detached, has_pos, detached_slot,
               pos_slot](const Tensor& grad, std::span<Tensor* const> gi) {
                const Geometry g = geometry();
                Tensor* dq = gi[0];
                Tensor* dk = gi[1];
                Tensor* dv = gi[2];
                Tensor* ddk = has_detached ? gi[detached_slot] : nullptr;
                Tensor* ddv = has_detached ? gi[detached_slot + 1] : nullptr;
                Tensor* dpq = has_pos ? gi[pos_slot] : nullptr;
                Tensor* dpk = has_pos ? gi[pos_slot + 1] : nullptr;
                Tensor* dpv = has_pos ? gi[pos_slot + 2] : nullptr;

                std::vector<double> qe, ke, ve, p, dp, dqe, dke, dve;
                for (std::size_t i = 0; i < win.size(); ++i) {
                  const QueryWindow& w = win[i];
                  const std::size_t len = w.key_end - w.key_begin;
                  query_row(g, i, w, qe);
                  gather(g, w, ke, ve);
                  dqe.assign(d, 0.0);
                  dke.assign(len * d, 0.0);
                  dve.assign(len * d, 0.0);
                  const double* go = grad.data() + i * d;
                  for (std::size_t h = 0; h < heads; ++h) {
                    head_probs(qe, ke, len, h, top_k, p);
                    dp.resize(len);
                    double weighted = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                      dp[j] = head_dot(go, ve.data() + j * d, h * dh, dh);
                      weighted += p[j] * dp[j];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                      if (p[j] == 0.0) continue;
                      const double ds = p[j] * (dp[j] - weighted) * inv_sqrt;
                      const double* kr = ke.data() + j * d;
                      double* dkr = dke.data() + j * d;
                      double* dvr = dve.data() + j * d;
                      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                        dqe[c] += ds * kr[c];
                        dkr[c] += ds * qe[c];
                        dvr[c] += p[j] * go[c];
                      }
                    }
                  }
                  if (dq != nullptr) {
                    double* row = dq->data() + i * d;
                    for (std::size_t c = 0; c < d; ++c) row[c] += dqe[c];
                  }
                  if (dpq != nullptr) {
                    double* row = dpq->data() + w.query_position * d;
                    for (std::size_t c = 0; c < d; ++c) row[c] += dqe[c];
                  }
                  for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t r = w.key_begin + j;
                    const bool detached = r < w.detached_end;
                    Tensor* tk = detached ? ddk : dk;
                    Tensor* tv = detached ? ddv : dv;
                    const double* dkr = dke.data() + j * d;
                    const double* dvr = dve.data() + j * d;
                    if (tk != nullptr) {
                      double* row = tk->data() + r * d;
                      for (std::size_t c = 0; c < d; ++c) row[c] += dkr[c];
                    }
                    if (tv != nullptr) {
                      double* row = tv->data() + r * d;
                      for (std::size_t c = 0; c < d; ++c) row[c] += dvr[c];
                    }
                    if (dpk != nullptr) {
                      double* row = dpk->data() + j * d;
                      for (std::size_t c = 0; c < d; ++c) row[c] += dkr[c];
                    }
                    if (dpv != nullptr) {
                      double* row = dpv->data() + j * d;
                      for (std::size_t c = 0; c < d; ++c) row[c] += dvr[c];
                    }
                  }
                }
              });
}

Var multi_head_attention(Var queries, Var keys_values, const AttentionWeights& w,
                         bool causal, AttentionCounters* counters) {
  const Tensor& kv = keys_values.value();
  if (kv.rank() != 2) {
    throw ContractError("multi_head_attention needs a non-empty key/value sequence");
  }
  const std::size_t nq = queries.value().rows();
  const std::size_t s = kv.rows();
  std::vector<QueryWindow> windows(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    windows[i].key_end = causal ? std::min(i + 1, s) : s;
  }
  WindowedAttentionInputs in;
  in.queries = matmul(queries, w.query);
  in.keys = matmul(keys_values, w.key);
  in.values = matmul(keys_values, w.value);
  in.heads = w.heads;
  Var mix = windowed_attention(in, windows,
                               counters != nullptr ? &counters->window_scores : nullptr);
  return matmul(mix, w.output);
}

Var local_attention(Var sequence, std::size_t window, const AttentionWeights& w,
                    AttentionCounters* counters) {
  if (window == 0) throw ContractError("local attention window must be >= 1");
  const std::size_t t = sequence.value().rows();
  std::vector<QueryWindow> windows(t);
  for (std::size_t i = 0; i < t; ++i) {
    windows[i].key_begin = i + 1 > window ? i + 1 - window : 0;
    windows[i].key_end = i + 1;
  }
  WindowedAttentionInputs in;
  in.queries = matmul(sequence, w.query);
  in.keys = matmul(sequence, w.key);
  in.values = matmul(sequence, w.value);
  in.heads = w.heads;
  Var mix = windowed_attention(in, windows,
                               counters != nullptr ? &counters->window_scores : nullptr);
  return matmul(mix, w.output);
}

// ---------------------------------------------------------------------------

std::optional<RelevanceScores> chunk_relevance(Var normed_input,
                                               std::span<const Tensor> summaries,
                                               Var relevance_projection,
                                               std::size_t k) {
  if (k == 0) throw ContractError("top-k selection needs k >= 1");
  if (summaries.empty()) return std::nullopt;
  const std::size_t d = summaries.front().size();
  Tensor s_t(Shape{d, summaries.size()});
  for (std::size_t j = 0; j < summaries.size(); ++j) {
    if (summaries[j].size() != d) {
      throw DimensionError("summary widths differ");
    }
    for (std::size_t c = 0; c < d; ++c) s_t.at(c, j) = summaries[j][c];
  }
  Tape& tape = tape_of(normed_input);
  Var logits = matmul(matmul(normed_input, relevance_projection),
                      tape.constant(std::move(s_t)));
  RelevanceScores out;
  out.weights = softmax(logits, 1);
  const Tensor& r = out.weights.value();
  for (std::size_t i = 0; i < r.rows(); ++i) {
    out.selected.push_back(top_k_select(r.row(i), k));
  }
  return out;
}

MemorySnapshot snapshot_of(const ChunkMemory& memory) {
  const MemoryView view = memory.read();
  return snapshot_of(std::span<const MemoryView>(&view, 1), memory.config().chunk_size);
}

MemorySnapshot snapshot_of(std::span<const MemoryView> views, std::size_t chunk_size) {
  MemorySnapshot snap;
  snap.chunk_size = chunk_size;
  std::size_t width = 0;
  for (const auto& v : views) {
    snap.count += v.size();
    if (!v.empty()) width = v.summaries.front().size();
  }
  if (snap.count == 0) return snap;
  snap.summaries = Tensor(Shape{snap.count, width});
  snap.contents = Tensor(Shape{snap.count * chunk_size, width});
  std::size_t n = 0;
  for (const auto& v : views) {
    for (std::size_t i = 0; i < v.size(); ++i, ++n) {
      if (v.chunks[i].shape() != Shape{chunk_size, width}) {
        throw DimensionError("snapshot chunk shape " + to_string(v.chunks[i].shape()) +
                             " differs from " + to_string(Shape{chunk_size, width}));
      }
      std::copy_n(v.summaries[i].data(), width, snap.summaries.data() + n * width);
      std::copy_n(v.chunks[i].data(), chunk_size * width,
                  snap.contents.data() + n * chunk_size * width);
    }
  }
  return snap;
}

namespace {

// R = softmax over each query's visible summaries of (projected query . S).
// Entries outside the visible range are zero. S is a constant.
Var relevance_softmax(Var projected, const Tensor& summaries,
                      std::span<const ChunkRange> visible, std::uint64_t* counter) {
  const Tensor& rq = projected.value();
  const std::size_t nq = rq.rows();
  const std::size_t d = rq.cols();
  const std::size_t n = summaries.rows();
  Tensor r(Shape{nq, n});
  std::uint64_t scores = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    const ChunkRange range = visible[i];
    if (range.empty()) continue;
    auto row = r.row(i).subspan(range.begin, range.end - range.begin);
    for (std::size_t j = range.begin; j < range.end; ++j) {
      row[j - range.begin] = head_dot(rq.data() + i * d, summaries.data() + j * d, 0, d);
    }
    scores += range.end - range.begin;
    softmax_inplace(row);
  }
  if (counter != nullptr) *counter += scores;
  Tensor probs = r;
  std::vector<ChunkRange> ranges(visible.begin(), visible.end());
  return tape_of(projected)
      .record(std::move(r), {projected},
              [probs = std::move(probs), summaries, ranges = std::move(ranges), d](
                  const Tensor& g, std::span<Tensor* const> gi) {
                Tensor& drq = *gi[0];
                for (std::size_t i = 0; i < ranges.size(); ++i) {
                  const ChunkRange range = ranges[i];
                  if (range.empty()) continue;
                  double dot = 0.0;
                  for (std::size_t j = range.begin; j < range.end; ++j) {
                    dot += g.at(i, j) * probs.at(i, j);
                  }
                  double* out = drq.data() + i * d;
                  for (std::size_t j = range.begin; j < range.end; ++j) {
                    const double dl = probs.at(i, j) * (g.at(i, j) - dot);
                    const double* s = summaries.data() + j * d;
                    for (std::size_t c = 0; c < d; ++c) out[c] += dl * s[c];
                  }
                }
              });
}

struct Selected {
  std::size_t chunk;  // column of R
  std::size_t slot;   // block index into the projected key/value rows
};

// Sum over selected chunks of R[i, chunk] * MHA-core(query_i, chunk rows).
Var chunk_mixture(Var queries, Var keys, Var values, Var relevance,
                  std::vector<std::vector<Selected>> selection, std::size_t chunk_size,
                  std::size_t heads, std::uint64_t* counter) {
  const Tensor& q = queries.value();
  const std::size_t nq = q.rows();
  const std::size_t d = q.cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Attention output of query i into one chunk, for every head, into `o`;
  // probabilities per head are left in `p` ([heads x C]).
  auto attend = [d, dh, heads, chunk_size, inv_sqrt](
                    const double* qi, const Tensor& k, const Tensor& v,
                    std::size_t slot, std::vector<double>& p, std::vector<double>& o) {
    p.assign(heads * chunk_size, 0.0);
    o.assign(d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      std::span<double> ph(p.data() + h * chunk_size, chunk_size);
      for (std::size_t r = 0; r < chunk_size; ++r) {
        ph[r] = head_dot(qi, k.data() + (slot * chunk_size + r) * d, h * dh, dh) *
                inv_sqrt;
      }
      softmax_inplace(ph);
      for (std::size_t r = 0; r < chunk_size; ++r) {
        const double* vr = v.data() + (slot * chunk_size + r) * d;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) o[c] += ph[r] * vr[c];
      }
    }
  };

  Tensor out(Shape{nq, d});
  std::vector<double> p, o;
  std::uint64_t scores = 0;
  const Tensor& rel = relevance.value();
  for (std::size_t i = 0; i < nq; ++i) {
    double* oi = out.data() + i * d;
    for (const Selected& s : selection[i]) {
      attend(q.data() + i * d, keys.value(), values.value(), s.slot, p, o);
      const double weight = rel.at(i, s.chunk);
      for (std::size_t c = 0; c < d; ++c) oi[c] += weight * o[c];
      scores += chunk_size;
    }
  }
  if (counter != nullptr) *counter += scores;

  return tape_of(queries).record(
      std::move(out), {queries, keys, values, relevance},
      [queries, keys, values, relevance, selection = std::move(selection), attend, d,
       dh, heads, chunk_size, inv_sqrt](const Tensor& grad,
                                        std::span<Tensor* const> gi) {
        const Tensor& q = queries.value();
        const Tensor& k = keys.value();
        const Tensor& v = values.value();
        const Tensor& rel = relevance.value();
        std::vector<double> p, o, dp;
        for (std::size_t i = 0; i < selection.size(); ++i) {
          const double* qi = q.data() + i * d;
          const double* gi_row = grad.data() + i * d;
          for (const Selected& s : selection[i]) {
            attend(qi, k, v, s.slot, p, o);
            const double weight = rel.at(i, s.chunk);
            if (gi[3] != nullptr) {
              gi[3]->at(i, s.chunk) += head_dot(gi_row, o.data(), 0, d);
            }
            for (std::size_t h = 0; h < heads; ++h) {
              const double* ph = p.data() + h * chunk_size;
              dp.resize(chunk_size);
              double weighted = 0.0;
              for (std::size_t r = 0; r < chunk_size; ++r) {
                const double* vr = v.data() + (s.slot * chunk_size + r) * d;
                dp[r] = weight * head_dot(gi_row, vr, h * dh, dh);
                weighted += ph[r] * dp[r];
              }
              for (std::size_t r = 0; r < chunk_size; ++r) {
                const std::size_t row = s.slot * chunk_size + r;
                const double ds = ph[r] * (dp[r] - weighted) * inv_sqrt;
                const double* kr = k.data() + row * d;
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                  if (gi[0] != nullptr) gi[0]->data()[i * d + c] += ds * kr[c];
                  if (gi[1] != nullptr) gi[1]->data()[row * d + c] += ds * qi[c];
                  if (gi[2] != nullptr) {
                    gi[2]->data()[row * d + c] += ph[r] * weight * gi_row[c];
                  }
                }
              }
            }
          }
        }
      });
}

// Rows of the listed chunks, optionally offset by within-chunk positions.
Tensor chunk_rows(const MemorySnapshot& memory, std::span<const std::size_t> chunks,
                  bool positions) {
  const std::size_t c = memory.chunk_size;
  const std::size_t d = memory.contents.cols();
  Tensor rows(Shape{chunks.size() * c, d});
  for (std::size_t u = 0; u < chunks.size(); ++u) {
    std::copy_n(memory.contents.data() + chunks[u] * c * d, c * d,
                rows.data() + u * c * d);
  }
  if (positions) {
    const Tensor pe = sinusoidal_positions(c, d);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      const auto src = pe.row(r % c);
      auto dst = rows.row(r);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  return rows;
}

}  // namespace

Var hierarchical_attention(Var input, const MemorySnapshot& memory,
                           std::span<const ChunkRange> visible,
                           const HcamWeights& weights,
                           const HierarchicalOptions& options,
                           AttentionCounters* counters) {
  if (options.top_k == 0) throw ContractError("top-k selection needs k >= 1");
  const Tensor& x = input.value();
  if (x.rank() != 2) {
    throw DimensionError("hierarchical attention input must be a matrix, got " +
                         to_string(x.shape()));
  }
  const std::size_t nq = x.rows();
  const std::size_t d = x.cols();
  if (visible.size() != nq) {
    throw DimensionError(std::to_string(nq) + " queries but " +
                         std::to_string(visible.size()) + " visibility ranges");
  }
  bool any = false;
  for (const auto& range : visible) {
    if (range.end > memory.count) {
      throw ContractError("visible chunk range exceeds memory size " +
                          std::to_string(memory.count));
    }
    any = any || !range.empty();
  }
  if (!any) return input;
  require_rows(memory.summaries, d, "memory summaries");

  Tape& tape = tape_of(input);
  Var normed = layer_norm(input, weights.norm_gain, weights.norm_bias);
  Var projected = matmul(normed, weights.relevance);
  Var relevance = relevance_softmax(projected, memory.summaries, visible,
                                    counters != nullptr ? &counters->relevance_scores
                                                        : nullptr);

  // Per-query top-k, then the union of selected chunks gets projected once.
  const Tensor& r = relevance.value();
  std::vector<std::vector<std::size_t>> picks(nq);
  std::vector<std::size_t> slot_of(memory.count, memory.count);
  for (std::size_t i = 0; i < nq; ++i) {
    const ChunkRange range = visible[i];
    if (range.empty()) continue;
    picks[i] = top_k_select(r.row(i).subspan(range.begin, range.end - range.begin),
                            options.top_k);
    for (auto& j : picks[i]) {
      j += range.begin;
      slot_of[j] = 0;
    }
  }
  std::vector<std::size_t> used;
  for (std::size_t j = 0; j < memory.count; ++j) {
    if (slot_of[j] == 0) {
      slot_of[j] = used.size();
      used.push_back(j);
    }
  }
  std::vector<std::vector<Selected>> selection(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    for (auto j : picks[i]) selection[i].push_back(Selected{j, slot_of[j]});
  }

  Var rows = tape.constant(chunk_rows(memory, used, options.chunk_positions));
  Var keys = matmul(rows, weights.detail.key);
  Var values = matmul(rows, weights.detail.value);
  Var queries = matmul(normed, weights.detail.query);
  Var mix = chunk_mixture(queries, keys, values, relevance, std::move(selection),
                          memory.chunk_size, weights.detail.heads,
                          counters != nullptr ? &counters->detail_scores : nullptr);
  return add(input, matmul(mix, weights.detail.output));
}

Var hcam_block(Var input, const ChunkMemory& memory, const HcamWeights& weights,
               std::size_t top_k, AttentionCounters* counters, bool chunk_positions) {
  if (top_k == 0) throw ContractError("top-k selection needs k >= 1");
  const Tensor& x = input.value();
  if (x.rank() != 2 || x.cols() != memory.width()) {
    throw DimensionError("hcam_block input " + to_string(x.shape()) +
                         " does not match memory width " +
                         std::to_string(memory.width()));
  }
  if (memory.empty()) return input;
  const MemorySnapshot snap = snapshot_of(memory);
  const std::vector<ChunkRange> visible(x.rows(), ChunkRange{0, snap.count});
  return hierarchical_attention(input, snap, visible, weights,
                                HierarchicalOptions{top_k, chunk_positions}, counters);
}

Var dense_memory_attention(Var input, const ChunkMemory& memory,
                           const HcamWeights& weights, AttentionCounters* counters,
                           bool chunk_positions) {
  const Tensor& x = input.value();
  if (x.rank() != 2 || x.cols() != memory.width()) {
    throw DimensionError("dense_memory_attention input " + to_string(x.shape()) +
                         " does not match memory width " +
                         std::to_string(memory.width()));
  }
  if (memory.empty()) return input;
  const MemorySnapshot snap = snapshot_of(memory);
  std::vector<std::size_t> all(snap.count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Tape& tape = tape_of(input);
  Var normed = layer_norm(input, weights.norm_gain, weights.norm_bias);
  Var rows = tape.constant(chunk_rows(snap, all, chunk_positions));
  WindowedAttentionInputs in;
  in.queries = matmul(normed, weights.detail.query);
  in.keys = matmul(rows, weights.detail.key);
  in.values = matmul(rows, weights.detail.value);
  in.heads = weights.detail.heads;
  const std::vector<QueryWindow> windows(
      x.rows(), QueryWindow{0, snap.count * snap.chunk_size, 0, 0});
  Var mix = windowed_attention(in, windows,
                               counters != nullptr ? &counters->dense_scores : nullptr);
  return add(input, matmul(mix, weights.detail.output));
}

AttentionOpCount attention_op_count(std::size_t chunks, std::size_t chunk_size,
                                    std::size_t top_k) {
  if (top_k == 0 || top_k > chunks) {
    throw ContractError("attention_op_count needs 1 <= k <= N (k=" +
                        std::to_string(top_k) + ", N=" + std::to_string(chunks) + ")");
  }
  return AttentionOpCount{chunks + top_k * chunk_size,
                          static_cast<std::uint64_t>(chunks) * chunk_size};
}

Tensor relative_attention_weights(std::span<const double> relevance) {
  if (relevance.empty()) throw ContractError("relative weights of an empty row");
  const double n = static_cast<double>(relevance.size());
  Tensor out(Shape{relevance.size()});
  for (std::size_t i = 0; i < relevance.size(); ++i) out[i] = relevance[i] * n;
  return out;
}

}  // namespace hcam
