#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <span>
#include <vector>

namespace multitrans {

// Binary labels are 0/1 integers; `positive` selects which of the two is
// the positive class (default 1, the poor outcome).

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

Confusion confusion(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
                    std::int32_t positive = 1);

/// Fraction of matching labels. Throws DataError on empty or unequal inputs.
double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);

/// 0 when there are no predicted positives (precision) or no actual
/// positives (recall).
double precision(const Confusion& c);
double recall(const Confusion& c);
/// Harmonic mean of precision and recall; 0 in every degenerate case.
double f1(const Confusion& c);
double f1(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
          std::int32_t positive = 1);

/// Mann-Whitney statistic: the fraction of positive/negative pairs in
/// which the positive scores higher, ties counting one half. Empty when
/// only one class is present.
std::optional<double> auc(std::span<const double> scores, std::span<const std::int32_t> truth,
                          std::int32_t positive = 1);

/// ROC polyline from (0,0) to (1,1) with one vertex per distinct score,
/// thresholds descending. Throws DataError when only one class is present.
std::vector<RocPoint> roc_points(std::span<const double> scores,
                                 std::span<const std::int32_t> truth, std::int32_t positive = 1);

/// Trapezoidal area under a ROC polyline.
double trapezoid_area(std::span<const RocPoint> points);

struct EvalReport {
  std::size_t n = 0;
  Confusion counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  std::vector<RocPoint> roc;
  std::vector<double> scores;  // score of the positive class per sample
  std::vector<std::int32_t> truth;
  std::vector<std::int32_t> predicted;
};

/// Predicts positive when score > threshold.
EvalReport make_report(std::span<const double> scores, std::span<const std::int32_t> truth,
                       std::int32_t positive = 1, double threshold = 0.5);

/// Flat `key=value` lines (split, n, acc, f1, auc, precision, recall,
/// confusion counts) followed by one `roc_point=fpr tpr` line per ROC point.
/// Reals at full precision.
std::string format_results(const std::string& split, const EvalReport& report);

}  // namespace multitrans
