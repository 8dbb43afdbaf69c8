#include "multitrans/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace multitrans {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd_momentum" || s == "momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (sgd, sgd_momentum, adam)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be a finite non-negative number");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(weight_decay >= 0.0) || weight_decay * learning_rate >= 1.0) {
    throw ConfigError("train.weight_decay must be non-negative and below 1 / learning_rate");
  }
  if (!(encoder_lr_scale >= 0.0)) throw ConfigError("train.encoder_lr_scale must be non-negative");
  if (ratios.train + ratios.val + ratios.test != 10) {
    throw ConfigError("split ratios must add up to 10");
  }
  if (ratios.train == 0) throw ConfigError("split needs a non-empty training part");
}

namespace {

void split_group(std::vector<std::size_t> group, const SplitRatios& ratios, Rng& rng,
                 DataSplit& out) {
  rng.shuffle(group);
  const auto n = group.size();
  const auto n_train = n * ratios.train / 10;
  const auto n_val = n * ratios.val / 10;
  auto it = group.begin();
  out.train.insert(out.train.end(), it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  out.val.insert(out.val.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
  it += static_cast<std::ptrdiff_t>(n_val);
  out.test.insert(out.test.end(), it, group.end());
}

}  // namespace

DataSplit split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed,
                        std::span<const std::int32_t> labels) {
  if (ratios.train + ratios.val + ratios.test != 10) {
    throw ConfigError("split ratios must add up to 10");
  }
  if (n < 10) throw DataError("split needs at least 10 samples, got " + std::to_string(n));
  if (!labels.empty() && labels.size() != n) {
    throw DataError("split: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " samples");
  }
  Rng rng(seed);
  DataSplit out;
  if (labels.empty()) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    split_group(std::move(all), ratios, rng, out);
    return out;
  }
  std::vector<std::int32_t> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (auto c : classes) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == c) group.push_back(i);
    }
    split_group(std::move(group), ratios, rng, out);
  }
  return out;
}

DataSplit split_dataset(const std::vector<Sample>& samples, const SplitRatios& ratios,
                        std::uint64_t seed, bool stratify) {
  std::vector<std::int32_t> labels;
  if (stratify) {
    for (const auto& s : samples) labels.push_back(s.label);
  }
  return split_indices(samples.size(), ratios, seed, labels);
}

std::vector<const Sample*> select(const std::vector<Sample>& samples,
                                  std::span<const std::size_t> indices) {
  std::vector<const Sample*> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= samples.size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
    out.push_back(&samples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
Optimizer<T>::Optimizer(const TrainConfig& config, const ParameterStore<T>& store)
    : config_(config) {
  for (const auto& e : store.entries()) {
    const auto n = config_.optimizer == OptimizerKind::sgd ? 0 : e.tensor.numel();
    first_.emplace_back(n, T(0));
    second_.emplace_back(config_.optimizer == OptimizerKind::adam ? n : 0, T(0));
    const bool encoder = e.name.starts_with("text.") || e.name.starts_with("image.");
    rates_.push_back(config_.learning_rate * (encoder ? config_.encoder_lr_scale : 1.0));
  }
}

template <typename T>
void Optimizer<T>::step(ParameterStore<T>& store) {
  ++steps_;
  if (config_.learning_rate == 0.0) return;
  const auto& entries = store.entries();
  if (entries.size() != first_.size()) throw ConfigError("optimizer: parameter set changed");
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto tensor = entries[k].tensor;
    if (!tensor.has_grad()) continue;
    const double lr = rates_[k];
    if (lr == 0.0) continue;
    auto w = tensor.mutable_data();
    const auto g = tensor.grad();
    if (config_.weight_decay > 0.0) {
      const auto keep = static_cast<T>(1.0 - lr * config_.weight_decay);
      for (auto& x : w) x *= keep;
    }
    switch (config_.optimizer) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<T>(lr * g[i]);
        break;
      case OptimizerKind::sgd_momentum: {
        auto& v = first_[k];
        const auto mu = static_cast<T>(config_.momentum);
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = mu * v[i] + g[i];
          w[i] -= static_cast<T>(lr * v[i]);
        }
        break;
      }
      case OptimizerKind::adam: {
        auto& m = first_[k];
        auto& v = second_[k];
        const auto b1 = static_cast<T>(config_.beta1);
        const auto b2 = static_cast<T>(config_.beta2);
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * g[i];
          v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + config_.adam_eps));
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

template <typename T>
std::vector<std::vector<T>> snapshot(const ParameterStore<T>& store) {
  std::vector<std::vector<T>> out;
  for (const auto& e : store.entries()) {
    const auto d = e.tensor.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

template <typename T>
void restore(ParameterStore<T>& store, const std::vector<std::vector<T>>& values) {
  const auto& entries = store.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto tensor = entries[k].tensor;
    std::copy(values[k].begin(), values[k].end(), tensor.mutable_data().begin());
  }
}

std::int32_t hard_label(const Probabilities& p) {
  return p.poor > 0.5 ? kPoorOutcome : kGoodOutcome;
}

template <typename T>
double split_accuracy(const MultitransModel<T>& model, std::span<const Sample* const> samples) {
  std::size_t correct = 0;
  for (const auto* s : samples) {
    if (hard_label(model.predict(s->input())) == s->label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

template <typename T>
TrainResult train(MultitransModel<T>& model, std::span<const Sample* const> train_set,
                  std::span<const Sample* const> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  auto& store = model.parameters();
  Optimizer<T> optimizer(config, store);
  Rng order_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<T> weights;
  if (config.class_weights) {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto* s : train_set) ++counts.at(static_cast<std::size_t>(s->label));
    for (auto c : counts) {
      weights.push_back(c == 0 ? T(0)
                               : static_cast<T>(static_cast<double>(train_set.size()) /
                                                (kNumClasses * static_cast<double>(c))));
    }
  }

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<std::vector<T>> best;
  bool have_best = false;
  store.zero_grad();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      Tape<T> tape;
      typename Tape<T>::Scope scope(tape);
      std::vector<Tensor<T>> rows;
      std::vector<std::int32_t> labels;
      for (auto i = start; i < stop; ++i) {
        const auto* s = train_set[order[i]];
        rows.push_back(model.logits(s->input(), &dropout_rng));
        labels.push_back(s->label);
      }
      auto logits = concat(rows, 0);
      Tensor<T> loss;
      try {
        loss = cross_entropy(logits, labels, std::span<const T>(weights));
        if (!std::isfinite(static_cast<double>(loss.item()))) {
          throw NumericError("loss is " + std::to_string(static_cast<double>(loss.item())));
        }
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      optimizer.step(store);
      store.zero_grad();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(stop - start);
      const auto l = logits.data();
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto predicted = l[r * kNumClasses + kPoorOutcome] > l[r * kNumClasses + kGoodOutcome]
                                   ? kPoorOutcome
                                   : kGoodOutcome;
        if (predicted == labels[r]) ++correct;
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.val_accuracy = val_set.empty() ? split_accuracy(model, train_set)
                                         : split_accuracy(model, val_set);
    result.history.push_back(stats);
    if (!have_best || stats.val_accuracy > result.best_val_accuracy) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_val_accuracy = stats.val_accuracy;
      best = snapshot(store);
    }
    if (on_epoch) on_epoch(stats);
  }
  restore(store, best);
  return result;
}

template <typename T>
EvalReport evaluate(const MultitransModel<T>& model, std::span<const Sample* const> samples,
                    std::int32_t positive) {
  if (samples.empty()) throw DataError("cannot evaluate an empty split");
  if (positive != kGoodOutcome && positive != kPoorOutcome) {
    throw ConfigError("positive class must be 0 or 1");
  }
  std::vector<double> scores;
  std::vector<std::int32_t> truth;
  for (const auto* s : samples) {
    const auto p = model.predict(s->input());
    scores.push_back(positive == kPoorOutcome ? p.poor : p.good);
    truth.push_back(s->label);
  }
  return make_report(scores, truth, positive);
}

#define MULTITRANS_INSTANTIATE_TRAINING(T)                                                      \
  template class Optimizer<T>;                                                                  \
  template TrainResult train(MultitransModel<T>&, std::span<const Sample* const>,               \
                             std::span<const Sample* const>, const TrainConfig&,                \
                             const EpochCallback&);                                             \
  template EvalReport evaluate(const MultitransModel<T>&, std::span<const Sample* const>,       \
                               std::int32_t);

MULTITRANS_INSTANTIATE_TRAINING(float)
MULTITRANS_INSTANTIATE_TRAINING(double)

}  // namespace multitrans
