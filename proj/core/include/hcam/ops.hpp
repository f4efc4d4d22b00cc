#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hcam/tape.hpp"

namespace hcam {

inline constexpr double kLayerNormEpsilon = 1e-5;

/// [m x k] * [k x n].
Var matmul(Var a, Var b);
Var transpose(Var x);

/// Same shape, or a rank-1 `y` broadcast across the rows of `x`.
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var scale(Var x, double factor);

Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);

Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of a matrix-shaped tensor, in the given order (repeats allowed).
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var reshape(Var x, Shape shape);
/// Rows `ids` of an embedding table [V x d], giving [n x d].
Var embed_lookup(Var table, std::span<const std::size_t> ids);

/// Arithmetic mean along `axis`; the axis is removed from the shape.
Var mean_pool(Var x, std::size_t axis);
Var sum(Var x);

/// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);

/// Normalizes each row over the last axis, then applies gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double epsilon = kLayerNormEpsilon);

/// -log softmax(logits)[target] for a single logit vector.
Var cross_entropy_logits(Var logits, std::size_t target);
/// Sum of per-row cross entropies of a [B x n] logit matrix.
Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets);

/// Forward identity; contributes nothing to the gradient of `x`.
Var stop_gradient(Var x);

/// x * w + b for a [n x in] input, [in x out] weight and [out] bias.
Var linear(Var x, Var weight, Var bias);

}  // namespace hcam
