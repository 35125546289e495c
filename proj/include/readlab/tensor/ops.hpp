#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "readlab/tensor/tensor.hpp"

namespace readlab::tensor {

// Elementwise. Binary ops require identical shapes; there is no general
// broadcasting beyond add_row() and mul_scalar().
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor neg(const Tensor& a);
/// a * s for a one-element tensor s.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
/// a[..., n] + bias[n], bias repeated over every row.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor exp(const Tensor& a);
/// Rejects any non-positive entry.
Tensor log(const Tensor& a);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

// Reductions. sum() and mean() add terms in ascending-value order so the
// result does not depend on the order of the entries.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the last axis, in index order.
Tensor sum_last(const Tensor& a);

// Linear algebra. Every output entry accumulates over the inner dimension in
// ascending index order, independent of its row or column position.
/// a[..., k] x b[k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[N, m, k] x b[N, k, n] -> [N, m, n]; with transpose_b, b is [N, n, k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& a);

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
/// Concatenation along axis 0; trailing dimensions must agree.
Tensor concat(std::span<const Tensor> parts);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows of a selected by index along axis 0 (repeats allowed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// table[V, d] looked up by ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
/// out[i] = a[i, index[i]] for a of shape [n, c].
Tensor pick(const Tensor& a, std::span<const std::size_t> index);
/// Entries where mask is nonzero are replaced by `value` and receive no gradient.
Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value);

// Normalization.
/// Log-probabilities along `axis` (negative counts from the back), computed
/// with max subtraction.
Tensor log_softmax(const Tensor& a, int axis = -1);
/// Probabilities along the last axis, computed with max subtraction.
Tensor softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Each row along the last axis scaled to unit L2 norm. Zero rows are rejected.
Tensor l2_normalize(const Tensor& a);
/// Cosine of two equal-length vectors, returned as a scalar tensor.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// Sum of values in ascending order; bit-identical under any permutation.
double canonical_sum(std::span<const double> values);

}  // namespace readlab::tensor
