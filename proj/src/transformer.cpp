#include "multitrans/transformer.hpp"

#include <cmath>

namespace multitrans {

template <typename T>
LinearParams<T> make_linear(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, bool bias, Rng& rng) {
  LinearParams<T> p;
  p.weight = store.normal(prefix + ".weight", {in, out}, kInitStddev, rng);
  if (bias) p.bias = store.constant(prefix + ".bias", {out}, T(0));
  return p;
}

template <typename T>
NormParams<T> make_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t dim) {
  return {store.constant(prefix + ".gamma", {dim}, T(1)),
          store.constant(prefix + ".beta", {dim}, T(0))};
}

template <typename T>
AttentionParams<T> make_attention(ParameterStore<T>& store, const std::string& prefix,
                                  std::size_t model_dim, std::size_t num_heads, bool bias,
                                  Rng& rng) {
  if (num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  AttentionParams<T> p;
  p.model_dim = model_dim;
  p.num_heads = num_heads;
  p.query = make_linear(store, prefix + ".query", model_dim, model_dim, bias, rng);
  p.key = make_linear(store, prefix + ".key", model_dim, model_dim, bias, rng);
  p.value = make_linear(store, prefix + ".value", model_dim, model_dim, bias, rng);
  p.output = make_linear(store, prefix + ".output", model_dim, model_dim, bias, rng);
  return p;
}

std::vector<std::uint8_t> window_mask(std::size_t seq_len, std::size_t num_prefix,
                                      const WindowSpec& window) {
  if (seq_len <= num_prefix) throw ShapeError("window_mask: no tokens outside the prefix");
  const auto n = seq_len - num_prefix;
  const auto w = window.window_size;
  if (w == 0 || n % w != 0) {
    throw ShapeError("windowed attention: " + std::to_string(n) +
                     " tokens not divisible by window size " + std::to_string(w));
  }
  if (window.shift >= w) throw ShapeError("windowed attention: shift must be below window size");
  auto window_of = [&](std::size_t t) { return ((t + n - window.shift) % n) / w; };
  std::vector<std::uint8_t> mask(seq_len * seq_len, 0);
  for (std::size_t i = 0; i < seq_len; ++i) {
    for (std::size_t j = 0; j < seq_len; ++j) {
      const bool global = i < num_prefix || j < num_prefix;
      mask[i * seq_len + j] =
          global || window_of(i - num_prefix) == window_of(j - num_prefix) ? 1 : 0;
    }
  }
  return mask;
}

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                    std::span<const std::uint8_t> mask,
                                    std::vector<Tensor<T>>* attention) {
  if (x.rank() != 2 || x.dim(1) != params.model_dim) {
    throw ShapeError("attention: input " + shape_str(x.shape()) + " for model_dim " +
                     std::to_string(params.model_dim));
  }
  const auto heads = params.num_heads;
  const auto dh = params.head_dim();
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto q = params.query(x);
  auto k = params.key(x);
  auto v = params.value(x);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    auto kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    auto vh = heads == 1 ? v : slice(v, 1, h * dh, dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_scale);
    auto weights = mask.empty() ? softmax(scores, 1) : masked_softmax(scores, mask);
    if (attention != nullptr) attention->push_back(weights);
    outputs.push_back(matmul(weights, vh));
  }
  auto merged = heads == 1 ? outputs.front() : concat(outputs, 1);
  return params.output(merged);
}

template <typename T>
Tensor<T> windowed_self_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                  const WindowSpec& window, std::size_t num_prefix,
                                  std::vector<Tensor<T>>* attention) {
  if (x.rank() != 2) throw ShapeError("windowed attention: input must be rank 2");
  const auto mask = window_mask(x.dim(0), num_prefix, window);
  return multi_head_self_attention(x, params, mask, attention);
}

template <typename T>
TransformerBlockParams<T> make_block(ParameterStore<T>& store, const std::string& prefix,
                                     const BlockOptions& options, Rng& rng) {
  const auto d = options.model_dim;
  TransformerBlockParams<T> p;
  p.norm1 = make_norm(store, prefix + ".norm1", d);
  p.attention =
      make_attention(store, prefix + ".attn", d, options.num_heads, options.attention_bias, rng);
  p.norm2 = make_norm(store, prefix + ".norm2", d);
  p.mlp_in = make_linear(store, prefix + ".mlp_in", d, options.mlp_expansion * d, true, rng);
  p.mlp_out = make_linear(store, prefix + ".mlp_out", options.mlp_expansion * d, d, true, rng);
  p.activation = options.activation;
  p.norm_eps = options.norm_eps;
  return p;
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerBlockParams<T>& params,
                            const AttentionKind& kind, std::vector<Tensor<T>>* attention) {
  const T eps = static_cast<T>(params.norm_eps);
  auto h = layer_norm(x, params.norm1.gamma, params.norm1.beta, eps);
  auto attended = kind.window
                      ? windowed_self_attention(h, params.attention, *kind.window,
                                                kind.num_prefix, attention)
                      : multi_head_self_attention(h, params.attention, {}, attention);
  auto y = add(x, attended);
  auto m = layer_norm(y, params.norm2.gamma, params.norm2.beta, eps);
  m = params.mlp_out(activate(params.mlp_in(m), params.activation));
  return add(y, m);
}

#define MULTITRANS_INSTANTIATE_TRANSFORMER(T)                                                  \
  template LinearParams<T> make_linear(ParameterStore<T>&, const std::string&, std::size_t,    \
                                       std::size_t, bool, Rng&);                               \
  template NormParams<T> make_norm(ParameterStore<T>&, const std::string&, std::size_t);       \
  template AttentionParams<T> make_attention(ParameterStore<T>&, const std::string&,           \
                                             std::size_t, std::size_t, bool, Rng&);            \
  template Tensor<T> multi_head_self_attention(const Tensor<T>&, const AttentionParams<T>&,    \
                                               std::span<const std::uint8_t>,                  \
                                               std::vector<Tensor<T>>*);                       \
  template Tensor<T> windowed_self_attention(const Tensor<T>&, const AttentionParams<T>&,      \
                                             const WindowSpec&, std::size_t,                   \
                                             std::vector<Tensor<T>>*);                         \
  template TransformerBlockParams<T> make_block(ParameterStore<T>&, const std::string&,        \
                                                const BlockOptions&, Rng&);                    \
  template Tensor<T> transformer_block(const Tensor<T>&, const TransformerBlockParams<T>&,     \
                                       const AttentionKind&, std::vector<Tensor<T>>*);

MULTITRANS_INSTANTIATE_TRANSFORMER(float)
MULTITRANS_INSTANTIATE_TRANSFORMER(double)

}  // namespace multitrans
