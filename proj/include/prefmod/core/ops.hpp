#pragma once

// Differentiable primitives recorded on a Tape.
//
// Broadcasting is limited to (full shape op full shape) and (full shape op
// rank-0 scalar). Row-vector broadcasts are spelled out with add_bias.

#include <optional>
#include <span>
#include <vector>

#include "prefmod/core/tape.hpp"

namespace prefmod::ops {

inline constexpr double kLayerNormEps = 1e-6;

// a[m x k] * b[k x n]
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var silu(const Var& x);

// Reductions over all elements to a rank-0 scalar.
Var sum(const Var& x);
Var mean(const Var& x);
Var logsumexp(const Var& x);

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);  // rank 2 only
Var concat(std::span<const Var> parts, std::size_t axis);
std::vector<Var> split(const Var& x, std::size_t axis, std::span<const std::size_t> sizes);

// x[m x n] + bias[n] on every row.
Var add_bias(const Var& x, const Var& bias);
// out[i, :] = x[rows[i], :]
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
// out.flat[i] = x.flat[index[i]]
Var gather(const Var& x, std::span<const std::size_t> index, Shape out_shape);

Var softmax_rows(const Var& x);
// Normalizes over the last axis, then applies the optional per-feature affine.
Var layer_norm(const Var& x, const std::optional<Var>& gain = std::nullopt,
               const std::optional<Var>& bias = std::nullopt, double eps = kLayerNormEps);
Var l2_distance(const Var& a, const Var& b);
// Each row divided by sqrt(||row||^2 + eps).
Var normalize_rows(const Var& x, double eps = 1e-12);

// Multi-head scaled dot-product attention over n_seq independent sequences.
// q is (n_seq*Lq) x D, k and v are (n_seq*Lk) x D; rows of one sequence are
// contiguous. No masking.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t n_seq);

}  // namespace prefmod::ops
