#include <doctest.h>

#include <cmath>

#include "multitrans/metrics.hpp"
#include "multitrans/parameters.hpp"

using namespace multitrans;

namespace {

using Labels = std::vector<std::int32_t>;

double brute_auc(const std::vector<double>& s, const Labels& y) {
  double credit = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      credit += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return credit / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("accuracy") {
  CHECK(accuracy(Labels{1, 0, 1}, Labels{1, 0, 1}) == 1.0);
  CHECK(accuracy(Labels{0, 1}, Labels{1, 0}) == 0.0);
  CHECK(accuracy(Labels{1, 1, 1, 1, 1, 1, 1, 0, 0, 0}, Labels{1, 1, 1, 1, 1, 1, 1, 1, 1, 1}) ==
        doctest::Approx(0.7));
  CHECK_THROWS_AS(accuracy(Labels{}, Labels{}), DataError);
  CHECK_THROWS_AS(accuracy(Labels{1}, Labels{1, 0}), DataError);
}

TEST_CASE("f1") {
  CHECK(f1(Labels{1, 0, 1}, Labels{1, 0, 1}) == 1.0);
  CHECK(f1(Labels{0, 0, 0}, Labels{1, 0, 1}) == 0.0);
  // TP=2, FP=1, FN=1
  Labels pred{1, 1, 1, 0, 0}, truth{1, 1, 0, 1, 0};
  auto c = confusion(pred, truth);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);
  CHECK(precision(c) == doctest::Approx(2.0 / 3));
  CHECK(recall(c) == doctest::Approx(2.0 / 3));
  CHECK(f1(c) == doctest::Approx(2.0 / 3));
  // positive class flip
  CHECK(f1(pred, truth, 0) == doctest::Approx(f1(confusion(pred, truth, 0))));
}

TEST_CASE("auc") {
  std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  Labels y{1, 1, 0, 0};
  CHECK(*auc(s, y) == 1.0);
  std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
  CHECK(*auc(flat, y) == 0.5);
  CHECK_FALSE(auc(s, Labels{1, 1, 1, 1}).has_value());

  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> r(20);
    Labels l(20);
    for (std::size_t i = 0; i < 20; ++i) {
      r[i] = std::round(rng.uniform() * 10) / 10;  // plenty of ties
      l[i] = i < 2 ? static_cast<std::int32_t>(i) : rng.bernoulli(0.5);
    }
    CHECK(*auc(r, l) == brute_auc(r, l));
  }
}

TEST_CASE("auc symmetry and monotone invariance") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(30), neg(30), warped(30);
    Labels y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = rng.uniform();
      neg[i] = -s[i];
      warped[i] = std::exp(3.0 * s[i]);
      y[i] = i < 2 ? static_cast<std::int32_t>(i) : rng.bernoulli(0.4);
    }
    CHECK(*auc(s, y) + *auc(neg, y) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*auc(s, y) == *auc(warped, y));
  }
}

TEST_CASE("roc points") {
  std::vector<double> up{0.9, 0.1};
  Labels y{1, 0};
  auto p = roc_points(up, y);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == RocPoint{0, 0});
  CHECK(p[1] == RocPoint{0, 1});
  CHECK(p[2] == RocPoint{1, 1});
  std::vector<double> down{0.1, 0.9};
  auto q = roc_points(down, y);
  CHECK(q[1] == RocPoint{1, 0});
  CHECK_THROWS_AS(roc_points(up, Labels{1, 1}), DataError);

  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(25);
    Labels l(25);
    for (std::size_t i = 0; i < 25; ++i) {
      s[i] = std::round(rng.uniform() * 8) / 8;
      l[i] = i < 2 ? static_cast<std::int32_t>(i) : rng.bernoulli(0.5);
    }
    auto pts = roc_points(s, l);
    CHECK(pts.front() == RocPoint{0, 0});
    CHECK(pts.back() == RocPoint{1, 1});
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].fpr >= pts[i - 1].fpr);
      CHECK(pts[i].tpr >= pts[i - 1].tpr);
    }
    CHECK(std::abs(trapezoid_area(pts) - *auc(s, l)) < 1e-12);
  }
}

TEST_CASE("report fields agree with the individual metrics") {
  Rng rng(4);
  std::vector<double> s(40);
  Labels y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    s[i] = rng.uniform();
    y[i] = rng.bernoulli(0.5);
  }
  auto r = make_report(s, y);
  CHECK(r.n == 40);
  CHECK(r.counts.total() == 40);
  CHECK(r.accuracy == accuracy(r.predicted, y));
  CHECK(r.accuracy == doctest::Approx(double(r.counts.tp + r.counts.tn) / 40));
  CHECK(r.f1 == f1(r.predicted, y));
  CHECK(*r.auc == *auc(s, y));
  for (std::size_t i = 0; i < 40; ++i) CHECK(r.predicted[i] == (s[i] > 0.5 ? 1 : 0));

  std::vector<double> constant(4, 0.2);
  auto c = make_report(constant, Labels{1, 0, 1, 0});
  CHECK(c.accuracy == 0.5);
  CHECK(c.f1 == 0.0);
}
