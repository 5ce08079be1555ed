#pragma once

namespace facemix {

/// Digamma psi(x) for x > 0: upward recurrence to x >= 6, then the
/// Bernoulli asymptotic series. Absolute error below 1e-12 on [1e-3, 1e6].
double digamma(double x);
/// Trigamma psi'(x) for x > 0, same scheme.
double trigamma(double x);
/// log B(a, b) via lgamma.
double log_beta(double a, double b);

struct AlphaBeta {
  double alpha = 1.0;
  double beta = 1.0;
  int iterations = 0;
  bool used_bisection = false;
};

/// Solves psi(a) - psi(a+b) = mean_log_l and psi(b) - psi(a+b) = mean_log_1ml
/// (the weighted Beta likelihood equations). Newton in log-parameters with
/// backtracking, falling back to nested bisection over [1e-6, 1e6].
/// Throws NumericError when no root lies inside the bracket.
AlphaBeta solve_alpha_beta(double mean_log_l, double mean_log_1ml);

struct EffectiveSize {
  double s = 0.0;
  /// Set when no root exists in (1, N] and s is an endpoint.
  bool clamped = false;
};

/// Solves psi((s-1)/2) - psi(s/2) = mean_log_l for s in (1, N]. The left side
/// is strictly increasing in s. Throws NumericError for mean_log_l >= 0.
EffectiveSize solve_s(double mean_log_l, double N);

}  // namespace facemix
