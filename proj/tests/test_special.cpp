#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>

#include "doctest.h"
#include "facemix/common.hpp"
#include "facemix/rng.hpp"
#include "facemix/special.hpp"

using namespace facemix;

namespace {
constexpr double kEuler = 0.57721566490153286061;
}

TEST_CASE("digamma known values") {
  CHECK(std::abs(digamma(1.0) + kEuler) < 1e-12);
  CHECK(std::abs(digamma(2.0) - (1.0 - kEuler)) < 1e-12);
  CHECK(std::abs(digamma(0.5) - (-kEuler - 2.0 * std::log(2.0))) < 1e-12);
  CHECK_THROWS_AS(digamma(0.0), NumericError);
  CHECK_THROWS_AS(digamma(-1.0), NumericError);
}

TEST_CASE("digamma and trigamma match boost on a log grid") {
  double worst = 0.0, worst_tri = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    const double x = std::pow(10.0, -3.0 + 9.0 * i / 2000.0);
    worst = std::max(worst, std::abs(digamma(x) - boost::math::digamma(x)));
    const double t = boost::math::trigamma(x);
    worst_tri = std::max(worst_tri, std::abs(trigamma(x) - t) / std::max(1.0, t));
  }
  CHECK(worst <= 1e-10);
  CHECK(worst_tri <= 1e-10);
}

TEST_CASE("solve_alpha_beta recovers parameters from forward targets") {
  auto targets = [](double a, double b) {
    return std::pair{digamma(a) - digamma(a + b), digamma(b) - digamma(a + b)};
  };
  {
    const auto [g1, g2] = targets(2.0, 5.0);
    const auto r = solve_alpha_beta(g1, g2);
    CHECK(std::abs(r.alpha - 2.0) < 1e-6);
    CHECK(std::abs(r.beta - 5.0) < 1e-6);
  }
  {
    const auto r = solve_alpha_beta(-1.0, -1.0);
    CHECK(std::abs(r.alpha - 1.0) < 1e-6);
    CHECK(std::abs(r.beta - 1.0) < 1e-6);
  }
  {
    const auto r = solve_alpha_beta(-1.7, -1.7);
    CHECK(std::abs(r.alpha - r.beta) < 1e-8);
  }
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double a = std::exp(rng.uniform(std::log(0.05), std::log(500.0)));
    const double b = std::exp(rng.uniform(std::log(0.05), std::log(500.0)));
    const auto [g1, g2] = targets(a, b);
    const auto r = solve_alpha_beta(g1, g2);
    const auto [h1, h2] = targets(r.alpha, r.beta);
    CHECK(std::abs(h1 - g1) < 1e-9);
    CHECK(std::abs(h2 - g2) < 1e-9);
  }
}

TEST_CASE("solve_alpha_beta rejects impossible targets") {
  CHECK_THROWS_AS(solve_alpha_beta(0.1, -1.0), NumericError);
  // exp(g1) + exp(g2) must be below 1 for any Beta law.
  CHECK_THROWS_AS(solve_alpha_beta(-0.1, -0.1), NumericError);
}

TEST_CASE("solve_s inverts the null-law equation") {
  auto f = [](double s) { return digamma((s - 1) / 2) - digamma(s / 2); };
  {
    const auto r = solve_s(digamma(19.5) - digamma(20.0), 40);
    CHECK(std::abs(r.s - 40.0) < 1e-6);
  }
  {
    const auto r = solve_s(digamma(0.5) - digamma(1.0), 40);
    CHECK(std::abs(r.s - 2.0) < 1e-6);
    CHECK_FALSE(r.clamped);
  }
  for (double s : {1.5, 3.0, 17.25, 99.0, 999.0}) {
    const auto r = solve_s(f(s), 1000);
    CHECK(std::abs(r.s - s) < 1e-6 * s);
  }
  {
    // Root beyond N clamps to N.
    const auto r = solve_s(f(200.0), 50);
    CHECK(r.s == 50.0);
    CHECK(r.clamped);
  }
  CHECK_THROWS_AS(solve_s(0.0, 40), NumericError);
  CHECK_THROWS_AS(solve_s(0.3, 40), NumericError);
}
