#include "facemix/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "facemix/common.hpp"

namespace facemix {

const char* to_string(F1Average a) {
  switch (a) {
    case F1Average::macro: return "macro";
    case F1Average::micro: return "micro";
    case F1Average::weighted: return "weighted";
  }
  return "?";
}

F1Average parse_f1_average(const std::string& s) {
  if (s == "macro") return F1Average::macro;
  if (s == "micro") return F1Average::micro;
  if (s == "weighted") return F1Average::weighted;
  throw ParseError("unknown F1 averaging '" + s + "'");
}

namespace {

void check_aligned(std::span<const int> p, std::span<const int> y, int K) {
  if (p.empty()) throw ShapeError("metrics need at least one sample");
  if (p.size() != y.size()) throw ShapeError("predictions and labels differ in length");
  if (K < 1) throw ShapeError("K must be positive");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || p[i] >= K || y[i] < 0 || y[i] >= K) throw ShapeError("class index out of range");
  }
}

}  // namespace

std::vector<double> per_class_f1(std::span<const int> p, std::span<const int> y, int K) {
  check_aligned(p, y, K);
  std::vector<long> tp(K, 0), fp(K, 0), fn(K, 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == y[i]) {
      ++tp[p[i]];
    } else {
      ++fp[p[i]];
      ++fn[y[i]];
    }
  }
  std::vector<double> f1(K, 0.0);
  for (int c = 0; c < K; ++c) {
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    f1[c] = denom ? 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
  }
  return f1;
}

double f1_overall(std::span<const int> p, std::span<const int> y, int K, F1Average average) {
  const auto f1 = per_class_f1(p, y, K);
  switch (average) {
    case F1Average::macro: return std::accumulate(f1.begin(), f1.end(), 0.0) / K;
    case F1Average::micro: {
      // Single-label micro F1 equals accuracy.
      long hit = 0;
      for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == y[i];
      return static_cast<double>(hit) / static_cast<double>(p.size());
    }
    case F1Average::weighted: {
      std::vector<long> support(K, 0);
      for (int v : y) ++support[v];
      double s = 0;
      for (int c = 0; c < K; ++c) s += f1[c] * static_cast<double>(support[c]);
      return s / static_cast<double>(y.size());
    }
  }
  return 0.0;
}

std::vector<long> confusion(std::span<const int> p, std::span<const int> y, int K) {
  check_aligned(p, y, K);
  std::vector<long> m(static_cast<std::size_t>(K) * K, 0);
  for (std::size_t i = 0; i < p.size(); ++i) ++m[static_cast<std::size_t>(y[i]) * K + p[i]];
  return m;
}

std::vector<int> argmax_rows(std::span<const double> s, int K) {
  if (K < 1 || s.size() % static_cast<std::size_t>(K)) throw ShapeError("score matrix is not N x K");
  std::vector<int> out(s.size() / K);
  for (std::size_t r = 0; r < out.size(); ++r) {
    int best = 0;
    for (int c = 1; c < K; ++c)
      if (s[r * K + c] > s[r * K + best]) best = c;
    out[r] = best;
  }
  return out;
}

AucResult roc_auc_ovr(std::span<const double> s, std::span<const int> y, int K) {
  if (K < 1 || s.size() != y.size() * static_cast<std::size_t>(K)) throw ShapeError("scores must be N x K");
  if (y.empty()) throw ShapeError("metrics need at least one sample");
  const std::size_t N = y.size();
  AucResult res;
  res.per_class.resize(K);
  double sum = 0;
  int defined = 0;
  std::vector<std::size_t> order(N);
  for (int c = 0; c < K; ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a * K + c] < s[b * K + c]; });
    // Midranks over tie groups.
    double pos_rank_sum = 0;
    long npos = 0;
    for (std::size_t i = 0; i < N;) {
      std::size_t j = i;
      while (j < N && s[order[j] * K + c] == s[order[i] * K + c]) ++j;
      const double midrank = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t t = i; t < j; ++t) {
        if (y[order[t]] == c) {
          pos_rank_sum += midrank;
          ++npos;
        }
      }
      i = j;
    }
    const long nneg = static_cast<long>(N) - npos;
    if (npos == 0 || nneg == 0) {
      res.any_excluded = true;
      continue;
    }
    const double u = pos_rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
    const double auc = u / (static_cast<double>(npos) * static_cast<double>(nneg));
    res.per_class[c] = auc;
    sum += auc;
    ++defined;
  }
  if (defined) res.macro = sum / defined;
  return res;
}

std::vector<RocPoint> roc_curves(std::span<const double> s, std::span<const int> y, int K) {
  if (K < 1 || s.size() != y.size() * static_cast<std::size_t>(K)) throw ShapeError("scores must be N x K");
  const std::size_t N = y.size();
  std::vector<RocPoint> out;
  std::vector<std::size_t> order(N);
  for (int c = 0; c < K; ++c) {
    long npos = 0;
    for (int v : y) npos += v == c;
    const long nneg = static_cast<long>(N) - npos;
    if (npos == 0 || nneg == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a * K + c] > s[b * K + c]; });
    long tp = 0, fp = 0;
    out.push_back({c, 0.0, 0.0, std::numeric_limits<double>::infinity()});
    for (std::size_t i = 0; i < N;) {
      const double thr = s[order[i] * K + c];
      while (i < N && s[order[i] * K + c] == thr) {
        (y[order[i]] == c ? tp : fp)++;
        ++i;
      }
      out.push_back({c, static_cast<double>(fp) / nneg, static_cast<double>(tp) / npos, thr});
    }
  }
  return out;
}

}  // namespace facemix
