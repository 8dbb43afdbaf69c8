#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "multitrans/tensor.hpp"

namespace multitrans {

enum class Activation { gelu, relu };

// Every function below records its backward rule onto Tape<T>::current()
// when a tape is installed and at least one input requires a gradient.
//
// Broadcasting is limited to two forms: identical shapes, or a rank-1
// right operand whose length equals the left operand's last dimension
// (one row vector added to / multiplied into every row).

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Mean of all elements, shape [1].
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Rank-2 transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

/// All parts must agree on every dimension except `axis`.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// `length` entries along `axis` starting at `start`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Row `i` of a rank-2 tensor as a rank-1 tensor.
template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t i);

/// out[i] = x.flat[index[i]]; backward scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> index, Shape out_shape);

/// Numerically stable softmax along `axis`. Throws NumericError on non-finite input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Row softmax over a rank-2 tensor restricted to entries where
/// `allowed[i * cols + j]` is nonzero; excluded entries are exactly 0.
/// Every row needs at least one allowed entry.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> allowed);

/// Normalizes each row over the last dimension, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Gathers rows of a [V x d] table; out-of-range ids throw IndexError.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// Mean negative log-likelihood of `labels` under row-softmax of
/// `logits` [n x C]. With `class_weights`, a weighted mean.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::span<const T> class_weights = {});

/// Inverted dropout. Identity when `p == 0`.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng);

/// y = x W + b for x [L x in], W [in x out], b [out] (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

}  // namespace multitrans
