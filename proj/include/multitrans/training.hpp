#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "multitrans/data.hpp"
#include "multitrans/fusion.hpp"
#include "multitrans/metrics.hpp"

namespace multitrans {

enum class OptimizerKind { sgd, sgd_momentum, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view s);

/// Integer parts of the train/val/test split; they must add up to 10.
struct SplitRatios {
  std::size_t train = 7;
  std::size_t val = 2;
  std::size_t test = 1;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Decoupled weight decay applied with every update (0 disables it).
  double weight_decay = 0.0;
  /// Learning-rate multiplier for encoder parameters (names starting with
  /// "text." or "image."); fusion and heads use the base rate.
  double encoder_lr_scale = 0.1;
  std::uint64_t seed = 1;
  SplitRatios ratios;
  /// Apply the split rule within each outcome class.
  bool stratify = false;
  /// Inverse-frequency class weights in the loss.
  bool class_weights = false;

  void validate() const;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then floor(n * train / 10) and floor(n * val / 10)
/// samples for train and val, the remainder for test. With `labels`
/// (stratified), the rule runs per class and the parts are concatenated.
/// Requires n >= 10.
DataSplit split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed,
                        std::span<const std::int32_t> labels = {});

DataSplit split_dataset(const std::vector<Sample>& samples, const SplitRatios& ratios,
                        std::uint64_t seed, bool stratify = false);

std::vector<const Sample*> select(const std::vector<Sample>& samples,
                                  std::span<const std::size_t> indices);

template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const ParameterStore<T>& store);
  /// Applies one update from the accumulated gradients.
  void step(ParameterStore<T>& store);

 private:
  TrainConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::vector<double> rates_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// Accuracy of the predictions made while training on the epoch.
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch cross-entropy training. Restores the parameters of the epoch
/// with the best validation accuracy (the earliest on ties); with an empty
/// validation set the training accuracy is used instead. Throws
/// NumericError naming the epoch and batch if the loss becomes non-finite.
template <typename T>
TrainResult train(MultitransModel<T>& model, std::span<const Sample* const> train_set,
                  std::span<const Sample* const> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Forward every sample and score P(positive class). Throws DataError on an empty split.
template <typename T>
EvalReport evaluate(const MultitransModel<T>& model, std::span<const Sample* const> samples,
                    std::int32_t positive = kPoorOutcome);

}  // namespace multitrans
