#include <cmath>
#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "facemix/common.hpp"
#include "facemix/metrics.hpp"
#include "facemix/rng.hpp"

using namespace facemix;

namespace {

// Precision both/pred and recall both/true as exact rationals; their harmonic
// mean reduces to 2*both/(pred+true) in integers, so the only rounding left is
// one division per class and the final sum.
double brute_macro_f1(const std::vector<int>& p, const std::vector<int>& y, int K) {
  double sum = 0;
  for (int c = 0; c < K; ++c) {
    long pred_c = 0, true_c = 0, both = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      pred_c += p[i] == c;
      true_c += y[i] == c;
      both += p[i] == c && y[i] == c;
    }
    if (both == 0) continue;
    // (2 * both^2 / (pred * true)) / (both * (pred + true) / (pred * true))
    const long num = 2 * both * both * (pred_c * true_c);
    const long den = both * (pred_c + true_c) * (pred_c * true_c);
    sum += static_cast<double>(num / both) / static_cast<double>(den / both);
  }
  return sum / K;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2.
double brute_auc(const std::vector<double>& s, const std::vector<int>& y, int K, int c) {
  double num = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != c) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] == c) continue;
      const double a = s[i * K + c], b = s[j * K + c];
      num += a > b ? 1.0 : a == b ? 0.5 : 0.0;
      ++pairs;
    }
  }
  return num / static_cast<double>(pairs);
}

std::vector<double> random_softmax(Rng& rng, std::size_t n, int K, bool coarse) {
  std::vector<double> s(n * K);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0;
    for (int c = 0; c < K; ++c) {
      // Coarse scores force many ties.
      const double v = coarse ? static_cast<double>(1 + rng.below(4)) : std::exp(rng.normal());
      s[i * K + c] = v;
      z += v;
    }
    for (int c = 0; c < K; ++c) s[i * K + c] /= z;
  }
  return s;
}

}  // namespace

TEST_CASE("F1 analytic cases") {
  const std::vector<int> y = {0, 1, 0, 1, 2, 2};
  CHECK(f1_overall(y, y, 3) == 1.0);

  const std::vector<int> yb = {0, 0, 1, 1};
  const std::vector<int> p0 = {0, 0, 0, 0};
  CHECK(std::abs(f1_overall(p0, yb, 2) - 1.0 / 3.0) < 1e-15);
  // Class 2 never occurs but still counts in the mean.
  CHECK(std::abs(f1_overall(p0, yb, 3) - 2.0 / 9.0) < 1e-15);

  CHECK(f1_overall(p0, yb, 2, F1Average::micro) == 0.5);
  const std::vector<int> yw = {0, 0, 0, 1};
  const std::vector<int> pw = {0, 0, 0, 0};
  // Class 0: P 3/4, R 1 -> 6/7; weighted by support 3/4.
  CHECK(std::abs(f1_overall(pw, yw, 2, F1Average::weighted) - 0.75 * 6.0 / 7.0) < 1e-15);

  const std::vector<int> none;
  CHECK_THROWS_AS(f1_overall(none, none, 2), ShapeError);
  CHECK_THROWS_AS(f1_overall(p0, y, 3), ShapeError);
  const std::vector<int> bad = {0, 5, 0, 0};
  CHECK_THROWS_AS(f1_overall(bad, yb, 2), ShapeError);
  CHECK(parse_f1_average(to_string(F1Average::weighted)) == F1Average::weighted);
  CHECK_THROWS_AS(parse_f1_average("harmonic"), ParseError);
}

TEST_CASE("F1 matches brute-force counting on random instances") {
  Rng rng(11);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 2 + static_cast<int>(rng.below(6));
    const std::size_t n = 1 + rng.below(50);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(K));
      p[i] = rng.bernoulli(0.5) ? y[i] : static_cast<int>(rng.below(K));
    }
    mismatches += f1_overall(p, y, K) != brute_macro_f1(p, y, K);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("AUC analytic cases") {
  // Perfect separation in both columns.
  const std::vector<double> s = {0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  auto r = roc_auc_ovr(s, y, 2);
  CHECK(*r.per_class[0] == 1.0);
  CHECK(*r.per_class[1] == 1.0);
  CHECK(*r.macro == 1.0);
  CHECK_FALSE(r.any_excluded);

  const std::vector<double> flat(8, 0.5);
  r = roc_auc_ovr(flat, y, 2);
  CHECK(*r.per_class[0] == 0.5);
  CHECK(*r.macro == 0.5);

  // Class 2 has no positives: excluded and flagged.
  const std::vector<double> s3 = {0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.5, 0.4, 0.1};
  const std::vector<int> y3 = {0, 1, 0};
  r = roc_auc_ovr(s3, y3, 3);
  CHECK(r.any_excluded);
  CHECK_FALSE(r.per_class[2].has_value());
  CHECK(*r.per_class[0] == 1.0);
  CHECK(*r.macro == 1.0);

  const std::vector<int> one = {0};
  const std::vector<double> s1 = {1.0, 0.0};
  r = roc_auc_ovr(s1, one, 2);
  CHECK_FALSE(r.macro.has_value());
  CHECK_THROWS_AS(roc_auc_ovr(s3, y, 3), ShapeError);
}

TEST_CASE("AUC matches pair counting on random instances") {
  Rng rng(12);
  double worst = 0;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 2 + static_cast<int>(rng.below(5));
    const std::size_t n = 2 + rng.below(49);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(K));
    const auto s = random_softmax(rng, n, K, trial % 2 == 1);
    const auto r = roc_auc_ovr(s, y, K);
    for (int c = 0; c < K; ++c) {
      const long pos = std::count(y.begin(), y.end(), c);
      if (pos == 0 || pos == static_cast<long>(n)) {
        CHECK_FALSE(r.per_class[c].has_value());
        continue;
      }
      worst = std::max(worst, std::abs(*r.per_class[c] - brute_auc(s, y, K, c)));
      ++checked;
    }
  }
  CHECK(checked > 200);
  CHECK(worst < 1e-12);
}

TEST_CASE("confusion matrix and argmax") {
  const std::vector<int> y = {0, 1, 2, 2, 1};
  auto m = confusion(y, y, 3);
  CHECK(m == std::vector<long>{1, 0, 0, 0, 2, 0, 0, 0, 2});
  const std::vector<int> zero(5, 0);
  m = confusion(zero, y, 3);
  CHECK(m == std::vector<long>{1, 0, 0, 2, 0, 0, 2, 0, 0});
  CHECK(std::accumulate(m.begin(), m.end(), 0L) == 5);

  const std::vector<double> s = {0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(argmax_rows(s, 3) == std::vector<int>{1, 0, 0});
  CHECK_THROWS_AS(argmax_rows(s, 4), ShapeError);
}

TEST_CASE("ROC curve points") {
  const std::vector<double> s = {0.9, 0.1, 0.6, 0.4, 0.6, 0.4, 0.2, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  const auto pts = roc_curves(s, y, 2);
  std::vector<RocPoint> c0;
  for (const auto& p : pts)
    if (p.cls == 0) c0.push_back(p);
  REQUIRE(c0.size() == 4);
  CHECK(std::isinf(c0[0].threshold));
  CHECK(c0[1].tpr == 0.5);
  CHECK(c0[1].fpr == 0.0);
  // The tied 0.6 scores enter together.
  CHECK(c0[2].tpr == 1.0);
  CHECK(c0[2].fpr == 0.5);
  CHECK(c0.back().fpr == 1.0);
  CHECK(c0.back().tpr == 1.0);
  // Trapezoid area equals the rank statistic.
  double area = 0;
  for (std::size_t i = 1; i < c0.size(); ++i) area += (c0[i].fpr - c0[i - 1].fpr) * 0.5 * (c0[i].tpr + c0[i - 1].tpr);
  CHECK(std::abs(area - *roc_auc_ovr(s, y, 2).per_class[0]) < 1e-15);
}
