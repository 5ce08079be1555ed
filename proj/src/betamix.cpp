#include "facemix/betamix.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "facemix/special.hpp"

namespace facemix::betamix {

namespace {

DesignMatrix assemble(std::size_t P, std::size_t N, std::span<const FactorCodes> codes,
                      const std::function<double(std::size_t, std::size_t)>& value) {
  if (codes.size() != N) throw ShapeError("factor codes must match the sample count");
  DesignMatrix m;
  m.P = P;
  m.N = N;
  m.rows.resize((P + 3) * N);
  for (std::size_t f = 0; f < P; ++f) {
    for (std::size_t j = 0; j < N; ++j) m.rows[f * N + j] = value(f, j);
  }
  for (std::size_t j = 0; j < N; ++j) {
    m.rows[P * N + j] = codes[j].expression;
    m.rows[(P + 1) * N + j] = codes[j].domain;
    m.rows[(P + 2) * N + j] = codes[j].identity;
  }
  for (double v : m.rows) {
    if (!std::isfinite(v)) throw ShapeError("design matrix entries must be finite");
  }
  m.row_kinds.assign(P, RowKind::predictor);
  m.row_kinds.push_back(RowKind::expression);
  m.row_kinds.push_back(RowKind::domain);
  m.row_kinds.push_back(RowKind::identity);
  return m;
}

}  // namespace

DesignMatrix build_design_matrix(const FeatureMatrix& features, std::span<const FactorCodes> codes) {
  return assemble(features.P, features.N, codes,
                  [&](std::size_t f, std::size_t j) { return features.at(f, j); });
}

DesignMatrix build_design_matrix(const std::vector<std::vector<double>>& per_sample,
                                 std::span<const FactorCodes> codes) {
  const std::size_t P = per_sample.empty() ? 0 : per_sample.front().size();
  for (const auto& v : per_sample) {
    if (v.size() != P) throw ShapeError("inconsistent feature count across samples");
  }
  return assemble(P, per_sample.size(), codes,
                  [&](std::size_t f, std::size_t j) { return per_sample[j][f]; });
}

PairStat PairStats::at(std::size_t k) const {
  // Invert the row-major upper-triangle index.
  std::size_t a = 0, first = 0;
  while (first + (node_count - a - 1) <= k) {
    first += node_count - a - 1;
    ++a;
  }
  const std::size_t b = a + 1 + (k - first);
  return {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), lambda[k]};
}

std::size_t PairStats::index(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  return a * node_count - a * (a + 1) / 2 + (b - a - 1);
}

double abs_correlation(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy));
}

PairStats pairwise_lambda(const DesignMatrix& m) {
  if (m.N < 3) throw ShapeError("pairwise_lambda needs at least 3 samples");
  const std::size_t R = m.row_count(), N = m.N;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat X(static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(N));
  std::vector<char> constant(R, 0);
  for (std::size_t r = 0; r < R; ++r) {
    const auto row = m.row(r);
    double mean = 0, scale = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(N);
    double ss = 0;
    for (double v : row) {
      ss += (v - mean) * (v - mean);
      scale += v * v;
    }
    if (ss <= 1e-24 * (1.0 + scale)) {
      constant[r] = 1;
      X.row(static_cast<Eigen::Index>(r)).setZero();
      continue;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < N; ++j) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = (row[j] - mean) * inv;
  }

  PairStats out;
  out.node_count = R;
  out.sample_count = N;
  out.lambda.resize(R * (R - 1) / 2);
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (R + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t blk = b0; blk < b1; ++blk) {
      const std::size_t r0 = blk * kBlock, rn = std::min(kBlock, R - r0);
      const Eigen::Index tail = static_cast<Eigen::Index>(R - r0);
      RowMat G = X.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(rn)) *
                 X.bottomRows(tail).transpose();
      for (std::size_t i = 0; i < rn; ++i) {
        const std::size_t a = r0 + i;
        std::size_t k = out.index(a, a + 1);
        for (std::size_t bcol = a + 1; bcol < R; ++bcol, ++k) {
          double lam;
          if (constant[a] || constant[bcol]) {
            lam = 1.0 - kLambdaEps;
          } else {
            const double rho = std::min(1.0, std::abs(G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(bcol - r0))));
            lam = std::clamp(1.0 - rho * rho, kLambdaEps, 1.0 - kLambdaEps);
          }
          out.lambda[k] = lam;
        }
      }
    }
  });
  return out;
}

double log_null_density(double lambda, double s) {
  const double a0 = 0.5 * (s - 1.0);
  return (a0 - 1.0) * std::log(lambda) - 0.5 * std::log1p(-lambda) - log_beta(a0, 0.5);
}

double log_beta_density(double lambda, double alpha, double beta) {
  return (alpha - 1.0) * std::log(lambda) + (beta - 1.0) * std::log1p(-lambda) - log_beta(alpha, beta);
}

namespace {

constexpr std::size_t kChunk = 1 << 15;

struct Params {
  double p0, s, alpha, beta;
};

struct ChunkSums {
  long double ll = 0, w_null = 0, w_null_l1 = 0, w_alt_l1 = 0, w_alt_l2 = 0;
};

class EStep {
 public:
  EStep(std::span<const double> lambdas) : n_(lambdas.size()), l1_(n_), l2_(n_) {
    for (std::size_t k = 0; k < n_; ++k) {
      const double lam = std::clamp(lambdas[k], kLambdaEps, 1.0 - kLambdaEps);
      l1_[k] = std::log(lam);
      l2_[k] = std::log1p(-lam);
    }
  }

  // Computes posteriors into `post` and returns the per-chunk sums reduced in
  // chunk order, so the result does not depend on the thread count.
  ChunkSums run(const Params& p, std::vector<double>& post) const {
    post.resize(n_);
    const std::size_t chunks = (n_ + kChunk - 1) / kChunk;
    std::vector<ChunkSums> partial(chunks);
    const double a0 = 0.5 * (p.s - 1.0);
    const double lb0 = log_beta(a0, 0.5), lb1 = log_beta(p.alpha, p.beta);
    const double lp0 = std::log(p.p0), lp1 = std::log1p(-p.p0);
    parallel_for(chunks, [&](std::size_t c0, std::size_t c1) {
      for (std::size_t c = c0; c < c1; ++c) {
        // Double accumulators within a chunk; chunks are combined in long double.
        double ll_sum = 0, wn = 0, wn1 = 0, wa1 = 0, wa2 = 0;
        const std::size_t end = std::min(n_, (c + 1) * kChunk);
        for (std::size_t k = c * kChunk; k < end; ++k) {
          const double ln0 = lp0 + (a0 - 1.0) * l1_[k] - 0.5 * l2_[k] - lb0;
          const double ln1 = lp1 + (p.alpha - 1.0) * l1_[k] + (p.beta - 1.0) * l2_[k] - lb1;
          // log(e^ln0 + e^ln1) and e^(ln0 - ll) from a single exponential.
          const double d = ln1 - ln0;
          double iota, ll;
          if (d <= 0) {
            const double e = std::exp(d);
            iota = 1.0 / (1.0 + e);
            ll = ln0 + std::log1p(e);
          } else {
            const double e = std::exp(-d);
            iota = e / (1.0 + e);
            ll = ln1 + std::log1p(e);
          }
          post[k] = iota;
          ll_sum += ll;
          wn += iota;
          wn1 += iota * l1_[k];
          wa1 += (1.0 - iota) * l1_[k];
          wa2 += (1.0 - iota) * l2_[k];
        }
        ChunkSums acc;
        acc.ll = ll_sum;
        acc.w_null = wn;
        acc.w_null_l1 = wn1;
        acc.w_alt_l1 = wa1;
        acc.w_alt_l2 = wa2;
        partial[c] = acc;
      }
    });
    ChunkSums total;
    for (const auto& c : partial) {
      total.ll += c.ll;
      total.w_null += c.w_null;
      total.w_null_l1 += c.w_null_l1;
      total.w_alt_l1 += c.w_alt_l1;
      total.w_alt_l2 += c.w_alt_l2;
    }
    return total;
  }

  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> l1_, l2_;
};

double rel_change(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

FittedBetaMix run_em(std::span<const double> lambdas, std::size_t N, const EmConfig& cfg) {
  if (lambdas.size() < 10) throw NumericError("BetaMix needs at least 10 pairs");
  if (N < 2) throw NumericError("BetaMix needs N >= 2");
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) throw NumericError("tau must lie in (0, 1)");
  const EStep estep(lambdas);
  const double Nd = static_cast<double>(N);
  Params p{cfg.init_p0, cfg.init_s > 1.0 ? std::min(cfg.init_s, Nd) : Nd, cfg.init_alpha, cfg.init_beta};

  FittedBetaMix fit;
  fit.tau = cfg.tau;
  fit.sample_count = N;
  std::vector<double>& post = fit.posteriors;
  const double n = static_cast<double>(lambdas.size());

  for (int it = 1; it <= cfg.max_iter; ++it) {
    const ChunkSums sums = estep.run(p, post);
    fit.log_likelihood_trace.push_back(static_cast<double>(sums.ll));
    fit.iterations = it;

    Params next = p;
    next.p0 = static_cast<double>(sums.w_null) / n;
    const long double w_alt = static_cast<long double>(n) - sums.w_null;
    if (w_alt > 1e-9L) {
      try {
        const auto ab = solve_alpha_beta(static_cast<double>(sums.w_alt_l1 / w_alt),
                                         static_cast<double>(sums.w_alt_l2 / w_alt));
        next.alpha = ab.alpha;
        next.beta = ab.beta;
      } catch (const NumericError&) {
        // Degenerate alternative component; keep the previous shape.
      }
    }
    if (sums.w_null > 1e-9L) {
      const auto es = solve_s(static_cast<double>(sums.w_null_l1 / sums.w_null), Nd);
      next.s = es.s;
      fit.s_clamped = es.clamped;
    }
    const double change = std::max({rel_change(next.alpha, p.alpha), rel_change(next.beta, p.beta),
                                    rel_change(next.s, p.s), rel_change(next.p0, p.p0)});
    p = next;
    if (change < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  const ChunkSums final_sums = estep.run(p, post);
  fit.log_likelihood_trace.push_back(static_cast<double>(final_sums.ll));
  fit.p0 = p.p0;
  fit.s = p.s;
  fit.alpha = p.alpha;
  fit.beta = p.beta;

  double q = -1.0;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (post[k] < cfg.tau) q = std::max(q, std::clamp(lambdas[k], kLambdaEps, 1.0 - kLambdaEps));
  }
  if (q >= 0.0) {
    fit.Q = q;
    fit.rho_min = rho_from_q(q);
  }
  return fit;
}

}  // namespace

double mixture_log_likelihood(std::span<const double> lambdas, double p0, double s, double alpha,
                              double beta) {
  const EStep estep(lambdas);
  std::vector<double> post;
  return static_cast<double>(estep.run({p0, s, alpha, beta}, post).ll);
}

FittedBetaMix betamix_em(const PairStats& stats, const EmConfig& config) {
  FittedBetaMix fit = run_em(stats.lambda, stats.sample_count, config);
  fit.node_count = stats.node_count;
  return fit;
}

FittedBetaMix betamix_em(std::span<const double> lambdas, std::size_t N, const EmConfig& config) {
  return run_em(lambdas, N, config);
}

double rho_from_q(double Q) { return std::sqrt(std::max(0.0, 1.0 - Q)); }

void FeatureGraph::add_edge(std::size_t a, std::size_t b, double lambda, double posterior_null) {
  if (a == b) throw ShapeError("self loops are not allowed");
  if (a > b) std::swap(a, b);
  if (b >= node_count()) throw ShapeError("edge endpoint out of range");
  const auto key = std::make_pair(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b));
  if (!index_.insert(key).second) return;
  edges_.push_back({key.first, key.second, lambda, posterior_null});
}

bool FeatureGraph::has_edge(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  return index_.count({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)}) > 0;
}

std::vector<GraphEdge> FeatureGraph::edges() const {
  auto out = edges_;
  std::sort(out.begin(), out.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  return out;
}

FeatureGraph build_graph(const FittedBetaMix& fit, double tau, const PairStats* stats) {
  if (fit.node_count < 3) throw ShapeError("fit carries no pair structure");
  FeatureGraph g(fit.node_count - 3);
  std::size_t k = 0;
  for (std::size_t a = 0; a < fit.node_count; ++a) {
    for (std::size_t b = a + 1; b < fit.node_count; ++b, ++k) {
      if (fit.posteriors[k] < tau) g.add_edge(a, b, stats ? stats->lambda[k] : 0.0, fit.posteriors[k]);
    }
  }
  return g;
}

std::set<int> factor_subgraph(const FeatureGraph& g, Factor factor) {
  const std::size_t node = g.factor_node(factor);
  std::set<int> out;
  for (const auto& e : g.edges()) {
    const std::size_t other = e.a == node ? e.b : (e.b == node ? e.a : g.node_count());
    if (other < g.predictor_count()) out.insert(static_cast<int>(other));
  }
  return out;
}

std::set<int> select_expression_features(const FeatureGraph& g) {
  std::set<int> out = factor_subgraph(g, Factor::expression);
  for (int f : factor_subgraph(g, Factor::domain)) out.erase(f);
  for (int f : factor_subgraph(g, Factor::identity)) out.erase(f);
  if (out.empty()) std::clog << "warning: BetaMix selected no expression-only features\n";
  return out;
}

std::vector<SweepEntry> threshold_sweep(const DesignMatrix& m, std::span<const double> thresholds) {
  const auto expr = m.row(m.factor_node(Factor::expression));
  std::vector<double> rho(m.P);
  for (std::size_t f = 0; f < m.P; ++f) rho[f] = abs_correlation(m.row(f), expr);
  std::vector<SweepEntry> out;
  for (double t : thresholds) {
    SweepEntry e{t, {}};
    for (std::size_t f = 0; f < m.P; ++f) {
      if (rho[f] >= t - kSweepSlack) e.features.push_back(static_cast<int>(f));
    }
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::json fit_to_json(const FittedBetaMix& fit) {
  nlohmann::json j;
  j["alpha"] = fit.alpha;
  j["beta"] = fit.beta;
  j["s"] = fit.s;
  j["p0"] = fit.p0;
  j["tau"] = fit.tau;
  j["Q"] = fit.Q ? nlohmann::json(*fit.Q) : nlohmann::json(nullptr);
  j["rho_min"] = fit.rho_min ? nlohmann::json(*fit.rho_min) : nlohmann::json(nullptr);
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  return j;
}

void write_edges_csv(const std::filesystem::path& path, const FeatureGraph& g) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "node_a,node_b,lambda,posterior_null\n";
  for (const auto& e : g.edges()) {
    out << e.a << ',' << e.b << ',' << e.lambda << ',' << e.posterior_null << '\n';
  }
}

FeatureGraph read_edges_csv(const std::filesystem::path& path, std::size_t predictor_count) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "node_a,node_b,lambda,posterior_null") throw ParseError("bad edge file header");
  FeatureGraph g(predictor_count);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::size_t a, b;
    double lam, post;
    if (!(ls >> a >> b >> lam >> post)) throw ParseError("malformed edge", row);
    g.add_edge(a, b, lam, post);
  }
  return g;
}

nlohmann::json selection_to_json(const std::set<int>& selection,
                                 const std::vector<FeatureDescriptor>& descriptors) {
  nlohmann::json arr = nlohmann::json::array();
  for (int idx : selection) {
    nlohmann::json j = idx < static_cast<int>(descriptors.size())
                           ? descriptor_to_json(descriptors[static_cast<std::size_t>(idx)])
                           : nlohmann::json::object();
    j["index"] = idx;
    arr.push_back(j);
  }
  return arr;
}

std::vector<int> selection_from_json(const nlohmann::json& j) {
  std::vector<int> out;
  for (const auto& e : j) out.push_back(e.at("index").get<int>());
  return out;
}

}  // namespace facemix::betamix
