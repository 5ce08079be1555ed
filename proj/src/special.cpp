#include "facemix/special.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "facemix/common.hpp"

namespace facemix {

double digamma(double x) {
  if (!(x > 0.0)) throw NumericError("digamma requires x > 0, got " + std::to_string(x));
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  // B_2k / (2k) coefficients: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760, 1/12
  const double series =
      r2 * (1.0 / 12 -
            r2 * (1.0 / 120 -
                  r2 * (1.0 / 252 -
                        r2 * (1.0 / 240 - r2 * (1.0 / 132 - r2 * (691.0 / 32760 - r2 / 12))))));
  return acc + std::log(x) - 0.5 * r - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw NumericError("trigamma requires x > 0, got " + std::to_string(x));
  double acc = 0.0;
  while (x < 6.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 + r * (0.5 + r * (1.0 / 6 -
                                 r2 * (1.0 / 30 -
                                       r2 * (1.0 / 42 -
                                             r2 * (1.0 / 30 -
                                                   r2 * (5.0 / 66 -
                                                         r2 * (691.0 / 2730 - r2 * 7.0 / 6))))))));
  return acc + series;
}

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

namespace {

constexpr double kLo = 1e-6;
constexpr double kHi = 1e6;
constexpr double kResidual = 1e-9;

struct Residual {
  double f1, f2;
  double norm() const { return std::max(std::abs(f1), std::abs(f2)); }
};

Residual beta_residual(double a, double b, double g1, double g2) {
  const double pab = digamma(a + b);
  return {digamma(a) - pab - g1, digamma(b) - pab - g2};
}

// Increasing in b: psi(b) - psi(a + b).
double solve_beta_given_alpha(double a, double g2, bool& ok) {
  auto f = [&](double b) { return digamma(b) - digamma(a + b) - g2; };
  double lo = std::log(kLo), hi = std::log(kHi);
  if (f(std::exp(lo)) > 0 || f(std::exp(hi)) < 0) {
    ok = false;
    return f(std::exp(lo)) > 0 ? kLo : kHi;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(std::exp(mid)) < 0 ? lo : hi) = mid;
  }
  ok = true;
  return std::exp(0.5 * (lo + hi));
}

AlphaBeta nested_bisection(double g1, double g2) {
  bool ok = true;
  auto h = [&](double a) {
    const double b = solve_beta_given_alpha(a, g2, ok);
    return digamma(a) - digamma(a + b) - g1;
  };
  double lo = std::log(kLo), hi = std::log(kHi);
  const double hlo = h(std::exp(lo)), hhi = h(std::exp(hi));
  if (!ok || (hlo > 0) == (hhi > 0)) {
    throw NumericError("alpha/beta bracket [1e-6, 1e6] exhausted");
  }
  const bool increasing = hlo < 0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    const bool below = h(std::exp(mid)) < 0;
    (below == increasing ? lo : hi) = mid;
  }
  AlphaBeta r;
  r.alpha = std::exp(0.5 * (lo + hi));
  r.beta = solve_beta_given_alpha(r.alpha, g2, ok);
  r.used_bisection = true;
  r.iterations = 200;
  if (!ok || beta_residual(r.alpha, r.beta, g1, g2).norm() > kResidual) {
    throw NumericError("alpha/beta bisection did not reach the residual tolerance");
  }
  return r;
}

}  // namespace

AlphaBeta solve_alpha_beta(double g1, double g2) {
  if (!(g1 < 0.0) || !(g2 < 0.0) || !std::isfinite(g1) || !std::isfinite(g2)) {
    throw NumericError("weighted log means must be finite and negative");
  }
  // Moment-style start from psi(x) ~ log(x - 1/2).
  const double e1 = std::exp(g1), e2 = std::exp(g2);
  double a = 1.0, b = 1.0;
  if (1.0 - e1 - e2 > 1e-12) {
    a = std::clamp(0.5 * (1.0 - e2) / (1.0 - e1 - e2), 1e-3, 1e5);
    b = std::clamp(0.5 * (1.0 - e1) / (1.0 - e1 - e2), 1e-3, 1e5);
  }
  double u = std::log(a), v = std::log(b);
  Residual res = beta_residual(a, b, g1, g2);
  for (int it = 1; it <= 200; ++it) {
    if (res.norm() < 1e-13) return {a, b, it, false};
    const double tab = trigamma(a + b);
    const double j11 = a * (trigamma(a) - tab), j12 = -b * tab;
    const double j21 = -a * tab, j22 = b * (trigamma(b) - tab);
    const double det = j11 * j22 - j12 * j21;
    if (!(std::abs(det) > 0.0) || !std::isfinite(det)) break;
    double du = -(j22 * res.f1 - j12 * res.f2) / det;
    double dv = -(-j21 * res.f1 + j11 * res.f2) / det;
    // Cap the log-step so a single update changes a parameter by <= e^2.
    const double cap = std::max(std::abs(du), std::abs(dv));
    if (cap > 2.0) {
      du *= 2.0 / cap;
      dv *= 2.0 / cap;
    }
    double step = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      const double nu = std::clamp(u + step * du, std::log(kLo), std::log(kHi));
      const double nv = std::clamp(v + step * dv, std::log(kLo), std::log(kHi));
      const Residual nr = beta_residual(std::exp(nu), std::exp(nv), g1, g2);
      if (nr.norm() < res.norm()) {
        u = nu;
        v = nv;
        a = std::exp(u);
        b = std::exp(v);
        res = nr;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (res.norm() <= kResidual) return {a, b, 200, false};
  return nested_bisection(g1, g2);
}

EffectiveSize solve_s(double g, double N) {
  if (!(g < 0.0)) throw NumericError("solve_s requires a negative mean log lambda");
  if (!(N > 1.0)) throw NumericError("solve_s requires N > 1");
  auto f = [](double s) { return digamma(0.5 * (s - 1.0)) - digamma(0.5 * s); };
  const double fN = f(N);
  if (g >= fN - 1e-15) return {N, g - fN > kResidual};
  double lo = 1.0 + 1e-12, hi = N;
  if (f(lo) >= g) return {lo, true};
  double s = 0.5 * (lo + hi);
  for (int it = 0; it < 300; ++it) {
    const double fs = f(s) - g;
    if (std::abs(fs) < 1e-14) break;
    (fs < 0 ? lo : hi) = s;
    const double d = 0.5 * (trigamma(0.5 * (s - 1.0)) - trigamma(0.5 * s));
    double next = s - fs / d;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-15 * hi) break;
    s = next;
  }
  return {s, false};
}

}  // namespace facemix
