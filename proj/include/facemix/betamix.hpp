#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "facemix/feature_matrix.hpp"
#include "facemix/json_io.hpp"

namespace facemix::betamix {

enum class Factor { expression = 0, domain = 1, identity = 2 };

/// Integer codes of the three factors for one sample.
struct FactorCodes {
  int expression = 0;
  int domain = 0;
  int identity = 0;
};

enum class RowKind { predictor, expression, domain, identity };

/// (P + 3) x N: predictor rows, then expression, domain and identity rows.
struct DesignMatrix {
  std::size_t P = 0;
  std::size_t N = 0;
  std::vector<double> rows;  // row-major (P + 3) x N
  std::vector<RowKind> row_kinds;

  std::size_t row_count() const { return P + 3; }
  std::span<const double> row(std::size_t r) const { return {rows.data() + r * N, N}; }
  std::size_t factor_node(Factor f) const { return P + static_cast<std::size_t>(f); }
};

DesignMatrix build_design_matrix(const FeatureMatrix& features, std::span<const FactorCodes> codes);
DesignMatrix build_design_matrix(const std::vector<std::vector<double>>& per_sample,
                                 std::span<const FactorCodes> codes);

inline constexpr double kLambdaEps = 1e-12;

struct PairStat {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double lambda = 0.0;
};

/// lambda for every unordered row pair (a < b), stored in row-major upper
/// triangle order: (0,1), (0,2), ..., (1,2), ...
struct PairStats {
  std::size_t node_count = 0;
  std::size_t sample_count = 0;
  std::vector<double> lambda;

  std::size_t size() const { return lambda.size(); }
  PairStat at(std::size_t k) const;
  /// Index of pair (a, b) in either argument order.
  std::size_t index(std::size_t a, std::size_t b) const;
};

/// rho = |Pearson correlation|, lambda = sin^2(acos rho) = 1 - rho^2, clamped to
/// [eps, 1 - eps]. Constant rows pair with everything at lambda = 1 - eps.
PairStats pairwise_lambda(const DesignMatrix& m);

/// |Pearson correlation| between two equal-length series; 0 if either is constant.
double abs_correlation(std::span<const double> x, std::span<const double> y);

struct EmConfig {
  double tau = 0.05;
  int max_iter = 1000;
  double tol = 1e-6;
  double init_p0 = 0.9;
  double init_alpha = 1.0;
  double init_beta = 1.0;
  /// Initial effective sample size; non-positive means N.
  double init_s = 0.0;
};

struct FittedBetaMix {
  double alpha = 1.0;
  double beta = 1.0;
  double s = 0.0;
  double p0 = 0.0;
  double tau = 0.05;
  std::size_t node_count = 0;
  std::size_t sample_count = 0;
  /// Posterior null probability per pair, in PairStats order.
  std::vector<double> posteriors;
  std::optional<double> Q;
  std::optional<double> rho_min;
  std::vector<double> log_likelihood_trace;
  bool converged = false;
  int iterations = 0;
  bool s_clamped = false;
};

/// Log density of the null law Beta((s-1)/2, 1/2) and of Beta(alpha, beta).
double log_null_density(double lambda, double s);
double log_beta_density(double lambda, double alpha, double beta);

/// Observed-data log-likelihood of the two-component mixture.
double mixture_log_likelihood(std::span<const double> lambdas, double p0, double s, double alpha,
                              double beta);

/// EM over the pair statistics. The trace holds the log-likelihood at every
/// E-step, including the final one that produces `posteriors`.
FittedBetaMix betamix_em(const PairStats& stats, const EmConfig& config = {});
/// Same, over raw lambda values (no pair structure; node_count stays 0).
FittedBetaMix betamix_em(std::span<const double> lambdas, std::size_t N, const EmConfig& config = {});

/// sqrt(1 - Q): the smallest |rho| whose lambda passes the screening rule.
double rho_from_q(double Q);

struct GraphEdge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double lambda = 0.0;
  double posterior_null = 0.0;
};

/// Undirected graph over P predictors + 3 factor nodes.
class FeatureGraph {
 public:
  FeatureGraph() = default;
  FeatureGraph(std::size_t predictor_count) : P_(predictor_count) {}

  void add_edge(std::size_t a, std::size_t b, double lambda = 0.0, double posterior_null = 0.0);
  bool has_edge(std::size_t a, std::size_t b) const;
  std::size_t node_count() const { return P_ + 3; }
  std::size_t predictor_count() const { return P_; }
  std::size_t factor_node(Factor f) const { return P_ + static_cast<std::size_t>(f); }
  /// Sorted by (a, b) with a < b.
  std::vector<GraphEdge> edges() const;
  std::size_t edge_count() const { return edges_.size(); }

 private:
  std::size_t P_ = 0;
  std::vector<GraphEdge> edges_;
  std::set<std::pair<std::uint32_t, std::uint32_t>> index_;
};

/// Edge (a, b) iff posterior null < tau. Lambdas are attached when `stats` is given.
FeatureGraph build_graph(const FittedBetaMix& fit, double tau, const PairStats* stats = nullptr);

std::set<int> factor_subgraph(const FeatureGraph& g, Factor factor);

/// Expression subgraph minus the domain and identity subgraphs.
std::set<int> select_expression_features(const FeatureGraph& g);

struct SweepEntry {
  double threshold = 0.0;
  std::vector<int> features;
};

/// Absolute slack when comparing |rho| against a threshold, so that
/// exactly collinear rows pass t = 1 despite rounding.
inline constexpr double kSweepSlack = 1e-12;

/// For each threshold t, predictors whose |rho| with the expression row is >= t.
std::vector<SweepEntry> threshold_sweep(const DesignMatrix& m, std::span<const double> thresholds);

nlohmann::json fit_to_json(const FittedBetaMix& fit);
/// CSV `node_a,node_b,lambda,posterior_null`, nonnull pairs only.
void write_edges_csv(const std::filesystem::path& path, const FeatureGraph& g);
FeatureGraph read_edges_csv(const std::filesystem::path& path, std::size_t predictor_count);
/// JSON array of {"index", "kind", "indices", ["vertex"]}.
nlohmann::json selection_to_json(const std::set<int>& selection,
                                 const std::vector<FeatureDescriptor>& descriptors);
std::vector<int> selection_from_json(const nlohmann::json& j);

}  // namespace facemix::betamix
