#include "multitrans/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>

#include "multitrans/errors.hpp"

namespace multitrans {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a == 0) throw DataError(std::string(what) + ": empty input");
  if (a != b) {
    throw DataError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                    std::to_string(b) + ")");
  }
}

std::int32_t negative_of(std::int32_t positive) { return positive == 1 ? 0 : 1; }

}  // namespace

Confusion confusion(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
                    std::int32_t positive) {
  check_lengths(predicted.size(), truth.size(), "confusion");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == positive;
    const bool t = truth[i] == positive;
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
  check_lengths(predicted.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double precision(const Confusion& c) {
  const auto denom = c.tp + c.fp;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double recall(const Confusion& c) {
  const auto denom = c.tp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(const Confusion& c) {
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0) return 0.0;
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double f1(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
          std::int32_t positive) {
  return f1(confusion(predicted, truth, positive));
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::int32_t> truth,
                          std::int32_t positive) {
  check_lengths(scores.size(), truth.size(), "auc");
  const auto n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps every quantity an exact integer.
  double twice_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_midrank = static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] == positive) {
        twice_rank_sum += twice_midrank;
        ++positives;
      }
    }
    i = j;
  }
  const auto negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  // Twice the U statistic (wins + ties/2), an integer.
  const double twice_u = twice_rank_sum - p * (p + 1.0);
  return (twice_u / 2.0) / (p * static_cast<double>(negatives));
}

std::vector<RocPoint> roc_points(std::span<const double> scores,
                                 std::span<const std::int32_t> truth, std::int32_t positive) {
  check_lengths(scores.size(), truth.size(), "roc_points");
  const auto n = scores.size();
  std::size_t total_pos = 0;
  for (auto t : truth) total_pos += t == positive ? 1 : 0;
  const auto total_neg = n - total_pos;
  if (total_pos == 0 || total_neg == 0) {
    throw DataError("roc_points: undefined with a single class present");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (truth[order[j]] == positive) ++tp;
      else ++fp;
      ++j;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(total_neg),
                      static_cast<double>(tp) / static_cast<double>(total_pos)});
    i = j;
  }
  return points;
}

double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

EvalReport make_report(std::span<const double> scores, std::span<const std::int32_t> truth,
                       std::int32_t positive, double threshold) {
  check_lengths(scores.size(), truth.size(), "make_report");
  EvalReport r;
  r.n = scores.size();
  r.scores.assign(scores.begin(), scores.end());
  r.truth.assign(truth.begin(), truth.end());
  r.predicted.reserve(r.n);
  for (auto s : scores) r.predicted.push_back(s > threshold ? positive : negative_of(positive));
  r.counts = confusion(r.predicted, r.truth, positive);
  r.accuracy = accuracy(r.predicted, r.truth);
  r.precision = precision(r.counts);
  r.recall = recall(r.counts);
  r.f1 = f1(r.counts);
  r.auc = auc(scores, truth, positive);
  if (r.auc) r.roc = roc_points(scores, truth, positive);
  return r;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string format_results(const std::string& split, const EvalReport& r) {
  std::ostringstream out;
  out << "split=" << split << "\n";
  out << "n=" << r.n << "\n";
  out << "acc=" << num(r.accuracy) << "\n";
  out << "f1=" << num(r.f1) << "\n";
  out << "auc=" << (r.auc ? num(*r.auc) : "undefined") << "\n";
  out << "precision=" << num(r.precision) << "\n";
  out << "recall=" << num(r.recall) << "\n";
  out << "confusion_tp=" << r.counts.tp << "\n";
  out << "confusion_fp=" << r.counts.fp << "\n";
  out << "confusion_tn=" << r.counts.tn << "\n";
  out << "confusion_fn=" << r.counts.fn << "\n";
  out << "roc_points=" << r.roc.size() << "\n";
  for (const auto& p : r.roc) out << "roc_point=" << num(p.fpr) << " " << num(p.tpr) << "\n";
  return out.str();
}

}  // namespace multitrans
