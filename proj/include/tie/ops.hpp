#ifndef TIE_OPS_HPP
#define TIE_OPS_HPP

#include "tie/rng.hpp"
#include "tie/tensor.hpp"

#include <span>
#include <vector>

namespace tie {

// Differentiable free functions over Tensor. No implicit broadcasting: the
// only shape mixing is add_bias (row vector added to every row). Every op
// rejects non-finite results with NumericError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
/// a[r, c] + bias[c]; bias has shape [cols] or [1, cols].
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor concat_last_dim(std::span<const Tensor> parts);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
/// Row gather; gradient scatters back (repeated indices accumulate).
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
/// Column gather along the last dimension; leading dimensions are kept.
Tensor gather_cols(const Tensor& a, std::span<const Index> cols);
/// Row lookup into an embedding table, with id range validation.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

enum class Mask { none, causal };
/// Row-wise softmax with max subtraction. Causal masking gives exact zero
/// weight to columns j > i.
Tensor softmax_rows(const Tensor& a, Mask mask = Mask::none);

/// Normalises each row over the last dimension, then applies gain and bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  Real eps = 1e-5);

/// Inverted dropout. A rate of 0 returns `a` unchanged.
Tensor dropout(const Tensor& a, Real rate, Rng& rng);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Flat inner product of two equally shaped tensors.
Tensor dot(const Tensor& a, const Tensor& b);

/// Mean of -[t log s(z) + (1 - t) log(1 - s(z))] over all cells, evaluated
/// as max(z, 0) - z t + log(1 + exp(-|z|)). Targets must be 0 or 1.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Pairwise biaffine scores for an n-token sentence and K channels.
///
///   out[i, j, k] = head[i]^T bilinear[:, k, :] tail[j] + pair_linear[k] . [head[i]; tail[j]]
///
/// head, tail: n x d. bilinear: shape [d, K, d]. pair_linear: K x 2d. Result has shape
/// [n, n, K] (storage n*n rows of K columns).
Tensor biaffine(const Tensor& head, const Tensor& tail, const Tensor& bilinear,
                const Tensor& pair_linear);

}  // namespace tie

#endif  // TIE_OPS_HPP
