#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "facemix/metrics.hpp"
#include "facemix/pipeline.hpp"

namespace facemix {

/// Assignment of subjects to k folds.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;

  int fold_of(const std::string& subject) const;
  /// Subject count per fold.
  std::vector<int> fold_sizes() const;
};

/// Distinct subjects are sorted, shuffled with `seed` and dealt round-robin.
/// Throws ShapeError when there are fewer subjects than folds or k < 2.
FoldPlan subject_disjoint_folds(std::span<const std::string> subject_ids, int k, std::uint64_t seed);
FoldPlan subject_disjoint_folds(const Dataset& data, int k, std::uint64_t seed);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Sample indices whose subject lies outside / inside `fold`.
FoldSplit split_fold(const FoldPlan& plan, std::span<const std::string> subject_ids, int fold);

/// Held-out metrics of one model on one set.
struct TestMetrics {
  std::size_t n = 0;
  double f1 = 0;
  std::vector<double> per_class_f1;
  AucResult auc;
  std::vector<long> confusion;
  std::vector<RocPoint> roc;
};

TestMetrics evaluate(const Network<float>& model, const TrainSet& data, F1Average average = F1Average::macro);
nlohmann::json test_metrics_to_json(const TestMetrics& m, int K);

struct FoldResult {
  int fold = 0;
  /// Empty when the mode has no xi.
  std::optional<double> xi;
  /// Mean inner-validation F1 per grid value (adapt only).
  std::vector<double> xi_scores;
  std::size_t n_train_source = 0;
  std::size_t n_train_target = 0;
  int feature_count = 0;
  /// Target-domain test fold.
  TestMetrics target;
  /// Source-domain test fold, when the source has samples there.
  std::optional<TestMetrics> source;
};

struct EvalReport {
  int K = 0;
  F1Average average = F1Average::macro;
  std::string mode;
  std::string model;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  double mean_f1 = 0;
  double sd_f1 = 0;
  std::vector<double> mean_per_class_f1;
  /// Mean over the folds where the class AUC is defined.
  std::vector<std::optional<double>> mean_per_class_auc;
  std::optional<double> mean_macro_auc;
  /// Sum of the fold confusion matrices.
  std::vector<long> confusion;
  std::optional<double> mean_source_f1;
};

/// Fills the aggregate fields from `folds`.
void aggregate(EvalReport& r);
nlohmann::json report_to_json(const EvalReport& r);

/// CSV `class,fpr,tpr,threshold`.
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> points);

/// Subject-disjoint nested cross-validation. Source and target folds are drawn
/// independently and paired by index. Inside each outer fold the feature
/// stage is fitted on outer-train only; in adapt mode xi is chosen by the mean
/// target F1 over the inner validation folds, then the model is retrained on
/// all of outer-train and scored on the held-out target fold.
EvalReport nested_cv(const PipelineConfig& config, const PipelineData& data, const LineageObserver& observer = {});

}  // namespace facemix
