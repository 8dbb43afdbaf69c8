#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multitrans/ops.hpp"
#include "multitrans/parameters.hpp"

namespace multitrans {

/// Weight standard deviation for every freshly initialized projection.
inline constexpr double kInitStddev = 0.02;

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out], undefined when the layer has no bias

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
LinearParams<T> make_linear(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, bool bias, Rng& rng);

template <typename T>
struct NormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
NormParams<T> make_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t dim);

template <typename T>
struct AttentionParams {
  std::size_t model_dim = 0;
  std::size_t num_heads = 1;
  LinearParams<T> query, key, value, output;

  std::size_t head_dim() const { return model_dim / num_heads; }
};

/// Throws ConfigError unless `model_dim` is divisible by `num_heads`.
template <typename T>
AttentionParams<T> make_attention(ParameterStore<T>& store, const std::string& prefix,
                                  std::size_t model_dim, std::size_t num_heads, bool bias,
                                  Rng& rng);

/// Local attention window over the non-prefix tokens of a sequence.
struct WindowSpec {
  std::size_t window_size = 4;
  std::size_t shift = 0;
};

/// Allowed-pair mask [L x L] for windowed attention. The first `num_prefix`
/// tokens (CLS and friends) attend everywhere and are visible to everyone;
/// the remaining tokens are cyclically shifted by `shift` and grouped into
/// consecutive windows of `window_size`.
std::vector<std::uint8_t> window_mask(std::size_t seq_len, std::size_t num_prefix,
                                      const WindowSpec& window);

/// Per head: softmax(Q_h K_h^T / sqrt(d_h)) V_h; heads concatenated and
/// projected by W_o. `mask`, when nonempty, restricts attended pairs.
/// Post-softmax attention matrices are appended to `attention` if given.
template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                    std::span<const std::uint8_t> mask = {},
                                    std::vector<Tensor<T>>* attention = nullptr);

template <typename T>
Tensor<T> windowed_self_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                  const WindowSpec& window, std::size_t num_prefix = 1,
                                  std::vector<Tensor<T>>* attention = nullptr);

template <typename T>
struct TransformerBlockParams {
  NormParams<T> norm1;
  AttentionParams<T> attention;
  NormParams<T> norm2;
  LinearParams<T> mlp_in;   // d -> expansion * d
  LinearParams<T> mlp_out;  // expansion * d -> d
  Activation activation = Activation::gelu;
  double norm_eps = 1e-5;
};

struct BlockOptions {
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;
  std::size_t mlp_expansion = 4;
  bool attention_bias = true;
  Activation activation = Activation::gelu;
  double norm_eps = 1e-5;
};

template <typename T>
TransformerBlockParams<T> make_block(ParameterStore<T>& store, const std::string& prefix,
                                     const BlockOptions& options, Rng& rng);

/// Global attention when `window` is empty.
struct AttentionKind {
  std::optional<WindowSpec> window;
  std::size_t num_prefix = 1;
};

/// Pre-norm residual block: y = x + Attn(LN1(x)); out = y + MLP(LN2(y)).
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& params,
                            const AttentionKind& kind = {},
                            std::vector<Tensor<T>>* attention = nullptr);

}  // namespace multitrans
