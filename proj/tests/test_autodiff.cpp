#include <cmath>

#include "doctest.h"
#include "facemix/autodiff.hpp"
#include "facemix/common.hpp"

using namespace facemix;
using namespace facemix::ad;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool rg = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v), rg);
}

// Values bounded away from zero by 0.1 with random signs.
TD away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.1, 1.0);
  return TD::from(std::move(shape), std::move(v), true);
}

// Distinct values so pooling windows have no ties.
TD tie_free(Shape shape, Rng& rng) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
  rng.shuffle(v);
  return TD::from(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("tensor construction and shape checks") {
  auto t = TD::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(TD::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(TD::zeros({0, 2}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  auto W = TD::zeros({4, 2});
  auto b = TD::zeros({2});
  CHECK_THROWS_AS(dense(t, W, b), ShapeError);
  CHECK_THROWS_AS(conv2d(TD::zeros({1, 2, 4, 4}), TD::zeros({1, 1, 3, 3})), ShapeError);
  CHECK_THROWS_AS(maxpool2(TD::zeros({1, 1, 3, 4})), ShapeError);
  CHECK_THROWS_AS(concat(TD::zeros({2, 1}), TD::zeros({3, 1})), ShapeError);
}

TEST_CASE("conv2d forward with zero padding") {
  auto x = TD::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto k = TD::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  const auto y = conv2d(x, k);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.values()[4] == 9.0);
  CHECK(y.values()[0] == 4.0);
  CHECK(y.values()[2] == 4.0);
  CHECK(y.values()[6] == 4.0);
  CHECK(y.values()[8] == 4.0);
  CHECK(y.values()[1] == 6.0);
}

TEST_CASE("maxpool2 forward and tie routing") {
  auto x = TD::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto y = maxpool2(x);
  CHECK(y.values() == std::vector<double>{4});
  auto t = TD::from({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  auto yt = maxpool2(t);
  yt.backward();
  CHECK(t.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("softmax cross-entropy values and gradient rows") {
  std::vector<int> labels(4, 2);
  auto z = TD::zeros({4, 7}, true);
  auto loss = softmax_cross_entropy<double>(z, labels);
  CHECK(loss.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  CHECK(std::abs(loss.item() - 1.9459) < 1e-4);

  Rng rng(4);
  auto l = random_tensor({5, 4}, rng, -3, 3);
  const std::vector<int> y = {0, 3, 1, 1, 2};
  const std::vector<double> w = {0.5, 2.0, 1.0, 0.1, 3.0};
  auto ce = softmax_cross_entropy<double>(l, y, w);
  ce.backward();
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += l.grad()[r * 4 + c];
    CHECK(std::abs(s) < 1e-12);
  }
  // Weighted mean of per-sample CE.
  const auto p = softmax_rows(l);
  double num = 0, den = 0;
  for (int r = 0; r < 5; ++r) {
    num += w[r] * -std::log(p[r * 4 + y[r]]);
    den += w[r];
  }
  CHECK(ce.item() == doctest::Approx(num / den).epsilon(1e-12));
  std::vector<int> bad = {0, 4, 1, 1, 2};
  CHECK_THROWS_AS(softmax_cross_entropy<double>(l, bad), ShapeError);
}

TEST_CASE("dropout semantics") {
  Rng rng(9);
  auto x = TD::from({1, 4}, {1, 2, 3, 4}, true);
  CHECK(dropout(x, 0.5, false, rng).same(x));
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ShapeError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ShapeError);
  // Expectation preserved over many masks.
  auto big = TD::from({1, 100000}, std::vector<double>(100000, 2.0));
  const auto y = dropout(big, 0.5, true, rng);
  double mean = 0;
  for (double v : y.values()) mean += v;
  mean /= 100000;
  CHECK(std::abs(mean - 2.0) <= 0.02);
  bool two_valued = true;
  for (double v : y.values()) two_valued = two_valued && (v == 0.0 || v == 4.0);
  CHECK(two_valued);
  // Deterministic given the seed.
  Rng r1(77), r2(77);
  CHECK(dropout(big, 0.3, true, r1).values() == dropout(big, 0.3, true, r2).values());
}

TEST_CASE("contrastive alignment values") {
  const std::vector<int> a = {0}, b = {1}, c = {0};
  auto z0 = TD::from({1, 2}, {0, 0}, true);
  auto z1 = TD::from({1, 2}, {0, 0}, true);
  auto diff = contrastive_alignment<double>(z0, a, z1, b, 1.0);
  CHECK(diff.item() == doctest::Approx(0.5));
  diff.backward();
  CHECK(z0.grad() == std::vector<double>{0, 0});
  auto z2 = TD::from({1, 2}, {2, 0});
  CHECK(contrastive_alignment<double>(z0, a, z2, c, 1.0).item() == doctest::Approx(2.0));
  // Same-class identical, different-class far apart.
  auto s = TD::from({2, 2}, {0, 0, 5, 5});
  auto t = TD::from({2, 2}, {0, 0, 5, 5});
  const std::vector<int> ys = {0, 1}, yt = {0, 1};
  CHECK(contrastive_alignment<double>(s, ys, t, yt, 1.0).item() == 0.0);
  // Only one pair kind present: the missing kind contributes 0.
  const std::vector<int> all0 = {0, 0};
  CHECK(contrastive_alignment<double>(s, all0, t, all0, 1.0).item() == doctest::Approx(0.5 * 50 / 2));
}

TEST_CASE("grad_check passes for every op") {
  Rng rng(123);
  SUBCASE("dense") {
    const double e = grad_check([](const auto& in) { return dense(in[0], in[1], in[2]); },
                                {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng)}, 1);
    CHECK(e <= 1e-4);
  }
  SUBCASE("relu away from zero") {
    const double e = grad_check([](const auto& in) { return relu(in[0]); }, {away_from_zero({3, 7}, rng)}, 2);
    CHECK(e <= 1e-6);
  }
  SUBCASE("conv2d") {
    const double e = grad_check([](const auto& in) { return conv2d(in[0], in[1]); },
                                {random_tensor({2, 2, 5, 4}, rng), random_tensor({3, 2, 3, 3}, rng)}, 3);
    CHECK(e <= 1e-4);
  }
  SUBCASE("maxpool2") {
    const double e = grad_check([](const auto& in) { return maxpool2(in[0]); }, {tie_free({2, 3, 4, 6}, rng)}, 4);
    CHECK(e <= 1e-4);
  }
  SUBCASE("conv2d + maxpool2 composite") {
    // Weights and inputs are scaled so conv outputs are well separated within windows.
    const double e = grad_check([](const auto& in) { return maxpool2(conv2d(in[0], in[1])); },
                                {tie_free({1, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng)}, 5);
    CHECK(e <= 1e-4);
  }
  SUBCASE("concat and flatten") {
    const double e = grad_check([](const auto& in) { return concat(flatten(in[0]), in[1]); },
                                {random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 3}, rng)}, 6);
    CHECK(e <= 1e-4);
  }
  SUBCASE("dropout with a fixed mask") {
    const double e = grad_check(
        [](const auto& in) {
          Rng local(42);
          return dropout(in[0], 0.4, true, local);
        },
        {random_tensor({3, 8}, rng)}, 7);
    CHECK(e <= 1e-4);
  }
  SUBCASE("softmax cross-entropy") {
    const std::vector<int> y = {2, 0, 1};
    const std::vector<double> w = {1.0, 0.3, 2.0};
    const double e = grad_check([&](const auto& in) { return softmax_cross_entropy<double>(in[0], y, w); },
                                {random_tensor({3, 4}, rng, -2, 2)}, 8);
    CHECK(e <= 1e-4);
  }
  SUBCASE("contrastive alignment") {
    const std::vector<int> ys = {0, 1, 2}, yt = {1, 0, 0, 2};
    const double e = grad_check([&](const auto& in) { return contrastive_alignment<double>(in[0], ys, in[1], yt, 1.0); },
                                {random_tensor({3, 4}, rng, -0.3, 0.3), random_tensor({4, 4}, rng, -0.3, 0.3)}, 9);
    CHECK(e <= 1e-4);
  }
  SUBCASE("softmax_select, add, scale, sum") {
    const std::vector<int> c = {1, 0};
    const double e = grad_check(
        [&](const auto& in) { return add(scale(sum(softmax_select<double>(in[0], c)), 2.5), sum(in[1])); },
        {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}, 10);
    CHECK(e <= 1e-4);
  }
}

TEST_CASE("shared subexpressions accumulate gradients") {
  auto x = TD::from({1, 2}, {1.5, -2.0}, true);
  auto y = add(x, x);
  sum(y).backward();
  CHECK(x.grad() == std::vector<double>{2, 2});
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("no-grad guard records nothing") {
  auto x = TD::from({1, 2}, {1, 2}, true);
  {
    NoGradGuard g;
    auto y = relu(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(relu(x).requires_grad());
}

TEST_CASE("adam update rule") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<TD> p = {TD::from({2}, {1.0, -3.0}, true)};
    p[0].grad();  // materialize zeros
    AdamState<double> st;
    adam_step<double>(p, st, 0.01);
    CHECK(p[0].values() == std::vector<double>{1.0, -3.0});
  }
  SUBCASE("first step moves by lr") {
    std::vector<TD> p = {TD::scalar(0.5, true)};
    p[0].grad()[0] = 1.0;
    AdamState<double> st;
    adam_step<double>(p, st, 0.001);
    CHECK(p[0].item() == doctest::Approx(0.5 - 0.001).epsilon(1e-9));
    CHECK_THROWS_AS(adam_step<double>(p, st, 0.0), NumericError);
  }
  SUBCASE("minimizes x^2") {
    std::vector<TD> p = {TD::scalar(1.0, true)};
    AdamState<double> st;
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
      p[0].zero_grad();
      p[0].grad()[0] = 2 * p[0].item();
      adam_step<double>(p, st, 0.05);
      CHECK(std::abs(p[0].item()) < prev);
      prev = std::abs(p[0].item());
    }
  }
}

TEST_CASE("triangular learning rate") {
  LrSchedule s{1e-5, 1e-3, 100};
  CHECK(triangular_lr(0, s) == doctest::Approx(1e-5));
  CHECK(triangular_lr(100, s) == doctest::Approx(1e-3));
  CHECK(triangular_lr(50, s) == doctest::Approx(5.05e-4));
  CHECK(triangular_lr(200, s) == doctest::Approx(1e-5));
  bool bounded = true, periodic = true;
  for (int i = 0; i < 1000; ++i) {
    const double v = triangular_lr(i, s);
    bounded = bounded && v >= 1e-5 - 1e-18 && v <= 1e-3 + 1e-18;
    periodic = periodic && v == triangular_lr(i + 200, s);
  }
  CHECK(bounded);
  CHECK(periodic);
  LrSchedule odd{1e-5, 1e-3, 7};
  CHECK(triangular_lr(7, odd) == doctest::Approx(1e-3));
}
