#include "hcam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hcam/errors.hpp"
#include "linalg.hpp"

namespace hcam {

namespace {

Tape& tape_of(Var v) {
  if (!v) throw ContractError("operation on an unbound Var");
  return *v.tape();
}

std::string pair_shapes(const Tensor& a, const Tensor& b) {
  return to_string(a.shape()) + " and " + to_string(b.shape());
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         to_string(t.shape()));
  }
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

enum class Broadcast { kSame, kRows };

Broadcast broadcast_kind(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() == y.shape()) return Broadcast::kSame;
  if (y.rank() == 1 && x.rank() >= 1 && x.cols() == y.size()) {
    return Broadcast::kRows;
  }
  throw DimensionError(std::string(op) + " shape mismatch: " + pair_shapes(x, y));
}

template <typename Fn, typename Deriv>
Var unary(Var x, Fn fn, Deriv deriv) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return tape_of(x).record(
      std::move(out), {x},
      [x, deriv](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = x.value();
        Tensor& dx = *gi[0];
        for (std::size_t i = 0; i < in.size(); ++i) dx[i] += g[i] * deriv(in[i]);
      });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  if (bv.extent(0) != k) {
    throw DimensionError("matmul inner dimensions differ: " + pair_shapes(av, bv));
  }
  Tensor out(Shape{m, n});
  detail::gemm(av.data(), bv.data(), out.data(), m, k, n, false, false, false);
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0] != nullptr) {
          detail::gemm(g.data(), b.value().data(), gi[0]->data(), m, n, k, false,
                       true, true);
        }
        if (gi[1] != nullptr) {
          detail::gemm(a.value().data(), g.data(), gi[1]->data(), k, m, n, true,
                       false, true);
        }
      });
}

Var transpose(Var x) {
  const Tensor& in = x.value();
  require_matrix(in, "transpose");
  const std::size_t r = in.extent(0), c = in.extent(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = in.at(i, j);
  return tape_of(x).record(std::move(out), {x},
                           [r, c](const Tensor& g, std::span<Tensor* const> gi) {
                             Tensor& dx = *gi[0];
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                 dx.at(i, j) += g.at(j, i);
                           });
}

namespace {

// Shared body of add and sub: out = x + sign * y.
Var add_signed(Var x, Var y, double sign, const char* op) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  const Broadcast kind = broadcast_kind(xv, yv, op);
  Tensor out = xv;
  const std::size_t cols = yv.size();
  if (kind == Broadcast::kSame) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * yv[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * yv[i % cols];
  }
  return tape_of(x).record(
      std::move(out), {x, y},
      [kind, sign, cols](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0] != nullptr) {
          Tensor& dx = *gi[0];
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (gi[1] != nullptr) {
          Tensor& dy = *gi[1];
          if (kind == Broadcast::kSame) {
            for (std::size_t i = 0; i < g.size(); ++i) dy[i] += sign * g[i];
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) dy[i % cols] += sign * g[i];
          }
        }
      });
}

}  // namespace

Var add(Var x, Var y) { return add_signed(x, y, 1.0, "add"); }

Var sub(Var x, Var y) { return add_signed(x, y, -1.0, "sub"); }

Var mul(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  const Broadcast kind = broadcast_kind(xv, yv, "mul");
  const std::size_t cols = yv.size();
  auto yi = [kind, cols](std::size_t i) {
    return kind == Broadcast::kSame ? i : i % cols;
  };
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[yi(i)];
  return tape_of(x).record(
      std::move(out), {x, y},
      [x, y, yi](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = x.value();
        const Tensor& yv = y.value();
        if (gi[0] != nullptr) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * yv[yi(i)];
        }
        if (gi[1] != nullptr) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[yi(i)] += g[i] * xv[i];
        }
      });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return tape_of(x).record(std::move(out), {x},
                           [factor](const Tensor& g, std::span<Tensor* const> gi) {
                             Tensor& dx = *gi[0];
                             for (std::size_t i = 0; i < g.size(); ++i)
                               dx[i] += factor * g[i];
                           });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Var sigmoid(Var x) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, sig, [sig](double v) {
    const double s = sig(v);
    return s * (1.0 - s);
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat needs at least one input");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  split_axis(first, axis);
  out_shape[axis] = 0;
  std::vector<AxisView> views;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      compatible = i == axis || s[i] == first[i];
    }
    if (!compatible) {
      throw DimensionError("concat shape mismatch: " + to_string(first) + " and " +
                           to_string(s));
    }
    views.push_back(split_axis(s, axis));
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  const std::size_t outer = views.front().outer;
  const std::size_t inner = views.front().inner;
  const std::size_t out_len = out_shape[axis];
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets.push_back(offset);
    const Tensor& in = parts[p].value();
    const std::size_t block = views[p].length * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in.data() + o * block, block,
                  out.data() + (o * out_len + offset) * inner);
    }
    offset += views[p].length;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts.front())
      .record(std::move(out), std::move(inputs),
              [views, offsets, outer, inner, out_len](
                  const Tensor& g, std::span<Tensor* const> gi) {
                for (std::size_t p = 0; p < gi.size(); ++p) {
                  if (gi[p] == nullptr) continue;
                  const std::size_t block = views[p].length * inner;
                  for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = g.data() + (o * out_len + offsets[p]) * inner;
                    double* dst = gi[p]->data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                  }
                }
              });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& in = x.value();
  const AxisView v = split_axis(in.shape(), axis);
  if (begin >= end || end > v.length) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + to_string(in.shape()));
  }
  Shape out_shape = in.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t block = (end - begin) * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(in.data() + (o * v.length + begin) * v.inner, block,
                out.data() + o * block);
  }
  return tape_of(x).record(std::move(out), {x},
                           [v, begin, block](const Tensor& g,
                                             std::span<Tensor* const> gi) {
                             for (std::size_t o = 0; o < v.outer; ++o) {
                               const double* src = g.data() + o * block;
                               double* dst =
                                   gi[0]->data() + (o * v.length + begin) * v.inner;
                               for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                             }
                           });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& in = x.value();
  if (in.rank() == 0 || rows.empty()) {
    throw DimensionError("gather_rows needs a non-scalar input and rows");
  }
  const std::size_t cols = in.cols();
  for (auto r : rows) {
    if (r >= in.rows()) {
      throw IndexError("gather_rows index " + std::to_string(r) +
                       " out of range for " + std::to_string(in.rows()) + " rows");
    }
  }
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(in.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return tape_of(x).record(std::move(out), {x},
                           [index = std::move(index), cols](
                               const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t i = 0; i < index.size(); ++i) {
                               const double* src = g.data() + i * cols;
                               double* dst = gi[0]->data() + index[i] * cols;
                               for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                             }
                           });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x},
                           [](const Tensor& g, std::span<Tensor* const> gi) {
                             Tensor& dx = *gi[0];
                             for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                           });
}

Var embed_lookup(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  require_matrix(t, "embed_lookup");
  for (auto id : ids) {
    if (id >= t.extent(0)) {
      throw IndexError("embedding id " + std::to_string(id) +
                       " out of range for table of " + std::to_string(t.extent(0)));
    }
  }
  return gather_rows(table, ids);
}

Var mean_pool(Var x, std::size_t axis) {
  const Tensor& in = x.value();
  const AxisView v = split_axis(in.shape(), axis);
  Shape out_shape = in.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(v.length);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.length; ++l)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += in[(o * v.length + l) * v.inner + i];
  for (auto& val : out.values()) val *= inv;
  return tape_of(x).record(std::move(out), {x},
                           [v, inv](const Tensor& g, std::span<Tensor* const> gi) {
                             Tensor& dx = *gi[0];
                             for (std::size_t o = 0; o < v.outer; ++o)
                               for (std::size_t l = 0; l < v.length; ++l)
                                 for (std::size_t i = 0; i < v.inner; ++i)
                                   dx[(o * v.length + l) * v.inner + i] +=
                                       inv * g[o * v.inner + i];
                           });
}

Var sum(Var x) {
  const Tensor& in = x.value();
  const double total = std::accumulate(in.values().begin(), in.values().end(), 0.0);
  return tape_of(x).record(Tensor::scalar(total), {x},
                           [](const Tensor& g, std::span<Tensor* const> gi) {
                             const double s = g.item();
                             for (auto& v : gi[0]->values()) v += s;
                           });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& in = x.value();
  const AxisView v = split_axis(in.shape(), axis);
  Tensor out(in.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.length * v.inner + i;
      double peak = in[base];
      for (std::size_t l = 1; l < v.length; ++l)
        peak = std::max(peak, in[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) {
        const double e = std::exp(in[base + l * v.inner] - peak);
        out[base + l * v.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < v.length; ++l) out[base + l * v.inner] /= total;
    }
  }
  Tensor probs = out;
  return tape_of(x).record(
      std::move(out), {x}, [probs = std::move(probs), v](const Tensor& g, std::span<Tensor* const> gi) {
        Tensor& dx = *gi[0];
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.length * v.inner + i;
            double dot = 0.0;
            for (std::size_t l = 0; l < v.length; ++l)
              dot += g[base + l * v.inner] * probs[base + l * v.inner];
            for (std::size_t l = 0; l < v.length; ++l) {
              const std::size_t k = base + l * v.inner;
              dx[k] += probs[k] * (g[k] - dot);
            }
          }
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double epsilon) {
  const Tensor& in = x.value();
  const std::size_t d = in.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm gain/bias must be [" + std::to_string(d) +
                         "], got " + to_string(gain.shape()) + " and " +
                         to_string(bias.shape()));
  }
  const std::size_t rows = in.rows();
  Tensor normed(in.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = in.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    auto out_row = normed.row(r);
    for (std::size_t c = 0; c < d; ++c) out_row[c] = (row[c] - mean) * inv_std[r];
  }
  const Tensor& g = gain.value();
  const Tensor& b = bias.value();
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = normed.at(r, c) * g[c] + b[c];
  return tape_of(x).record(
      std::move(out), {x, gain, bias},
      [normed = std::move(normed), inv_std = std::move(inv_std), gain, rows, d](
          const Tensor& grad, std::span<Tensor* const> gi) {
        const Tensor& g = gain.value();
        if (gi[1] != nullptr || gi[2] != nullptr) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              if (gi[1] != nullptr) (*gi[1])[c] += grad.at(r, c) * normed.at(r, c);
              if (gi[2] != nullptr) (*gi[2])[c] += grad.at(r, c);
            }
          }
        }
        if (gi[0] == nullptr) return;
        Tensor& dx = *gi[0];
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dn = 0.0;
          double mean_dn_n = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dn = grad.at(r, c) * g[c];
            mean_dn += dn;
            mean_dn_n += dn * normed.at(r, c);
          }
          mean_dn *= inv_d;
          mean_dn_n *= inv_d;
          for (std::size_t c = 0; c < d; ++c) {
            const double dn = grad.at(r, c) * g[c];
            dx.at(r, c) += inv_std[r] * (dn - mean_dn - normed.at(r, c) * mean_dn_n);
          }
        }
      });
}

namespace {

// log-sum-exp and probabilities of one logit row.
double log_softmax_row(std::span<const double> logits, std::span<double> probs) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - peak);
    total += probs[i];
  }
  for (auto& p : probs) p /= total;
  return peak + std::log(total);
}

}  // namespace

Var cross_entropy_logits(Var logits, std::size_t target) {
  const Tensor& in = logits.value();
  if (in.rank() != 1) {
    throw DimensionError("cross_entropy_logits expects a vector, got " +
                         to_string(in.shape()));
  }
  const std::size_t target_row[] = {target};
  Var as_row = reshape(logits, Shape{1, in.size()});
  return cross_entropy_rows(as_row, target_row);
}

Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets) {
  const Tensor& in = logits.value();
  require_matrix(in, "cross_entropy_rows");
  const std::size_t rows = in.extent(0), n = in.extent(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_rows has " + std::to_string(rows) +
                         " rows but " + std::to_string(targets.size()) + " targets");
  }
  Tensor probs(in.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n) {
      throw IndexError("cross-entropy target " + std::to_string(targets[r]) +
                       " out of range for " + std::to_string(n) + " classes");
    }
    const double lse = log_softmax_row(in.row(r), probs.row(r));
    loss += lse - in.at(r, targets[r]);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return tape_of(logits).record(
      Tensor::scalar(loss), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), n](
          const Tensor& g, std::span<Tensor* const> gi) {
        const double s = g.item();
        Tensor& dx = *gi[0];
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          for (std::size_t c = 0; c < n; ++c) {
            dx.at(r, c) += s * (probs.at(r, c) - (c == tgt[r] ? 1.0 : 0.0));
          }
        }
      });
}

Var stop_gradient(Var x) { return tape_of(x).constant(x.value()); }

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

}  // namespace hcam
