#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "lpal/autograd.hpp"

namespace lpal {

// Differentiable ops. Every op validates shapes and throws ShapeError on mismatch.
// Reductions accumulate in double regardless of the element type.

/// Cross-correlation. input [N,C,H,W], kernel [K,C,kh,kw], bias [K] -> [N,K,H',W'].
template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, BasicVar<T> bias, int stride, int pad);

template <typename T>
BasicVar<T> relu(BasicVar<T> x);

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b);

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b);

template <typename T>
BasicVar<T> scale(BasicVar<T> x, double factor);

/// [N,C,H,W] -> [N,C]; divides by H*W.
template <typename T>
BasicVar<T> global_avg_pool(BasicVar<T> x);

/// a [M,K] x b [K,P] -> [M,P].
template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b);

/// x [N,in], weight [out,in], bias [out] -> [N,out].
template <typename T>
BasicVar<T> linear(BasicVar<T> x, BasicVar<T> weight, BasicVar<T> bias);

/// Concatenate along `axis`; all other dimensions must agree.
template <typename T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, int axis);

template <typename T>
BasicVar<T> reshape(BasicVar<T> x, Shape shape);

template <typename T>
BasicVar<T> sum(BasicVar<T> x);

template <typename T>
BasicVar<T> mean(BasicVar<T> x);

/// Per-row -log softmax(logits)[target]. logits [N,C] -> [N].
template <typename T>
BasicVar<T> cross_entropy_per_sample(BasicVar<T> logits, std::span<const int> targets);

/// Mean over rows of cross_entropy_per_sample.
template <typename T>
BasicVar<T> softmax_cross_entropy(BasicVar<T> logits, std::span<const int> targets);

/// Pairwise margin ranking loss over explicit pairs. `target` is a plain tensor
/// and therefore never receives gradient. For each pair (i,j):
///   max(0, -sign(t_i - t_j) * (p_i - p_j) + margin), averaged over pairs.
template <typename T>
BasicVar<T> margin_ranking_loss(BasicVar<T> pred, const BasicTensor<T>& target,
                                std::span<const std::pair<int, int>> pairs, double margin);

/// Mean squared difference against a detached target.
template <typename T>
BasicVar<T> mse_loss(BasicVar<T> pred, const BasicTensor<T>& target);

/// Row-wise stable softmax of a [N,C] tensor (no graph).
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

}  // namespace lpal
