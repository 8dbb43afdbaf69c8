#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "multitrans/tensor.hpp"

namespace multitrans {

/// Seeded source for parameter initialization and data generation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  /// Fisher-Yates over any random-access container.
  template <typename V>
  void shuffle(V& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(integer(0, static_cast<std::int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Ordered, named collection of trainable tensors. Registration order is
/// the serialization and optimizer order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T> add(std::string name, Tensor<T> tensor) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ConfigError("duplicate parameter name " + name);
    }
    tensor.set_requires_grad(true);
    entries_.push_back({std::move(name), tensor});
    return tensor;
  }

  /// Values drawn at double precision so float and double models built
  /// from one seed start from the same point.
  Tensor<T> normal(std::string name, Shape shape, double stddev, Rng& rng) {
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
    return add(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
  }

  Tensor<T> constant(std::string name, Shape shape, T value) {
    return add(std::move(name), Tensor<T>::full(std::move(shape), value));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total scalar count of parameters whose name starts with `prefix`.
  std::size_t count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (std::string_view(e.name).starts_with(prefix)) n += e.tensor.numel();
    }
    return n;
  }

  Tensor<T> find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e.tensor;
    }
    throw ConfigError("no parameter named " + std::string(name));
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) out.push_back(e.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace multitrans
