#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "multitrans/fusion.hpp"
#include "multitrans/parameters.hpp"
#include "multitrans/tensor.hpp"

namespace testing {

using multitrans::Rng;
using multitrans::Shape;
using multitrans::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::vector<T> v(multitrans::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Small but complete model config for fast tests.
inline multitrans::ModelConfig tiny_model(std::size_t vocab = 16) {
  multitrans::ModelConfig c;
  c.text.vocab_size = vocab;
  c.text.max_seq_len = 12;
  c.text.model_dim = 8;
  c.text.depth = 2;
  c.text.num_heads = 2;
  c.text.mlp_expansion = 2;
  c.image.height = 8;
  c.image.width = 8;
  c.image.patch_size = 4;
  c.image.model_dim = 8;
  c.image.depth = 2;
  c.image.num_heads = 2;
  c.image.mlp_expansion = 2;
  c.image.window = {2, 1};
  c.fusion.num_heads = 2;
  return c;
}

inline multitrans::Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  multitrans::Image img{h, w, 1, std::vector<float>(h * w)};
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace testing
