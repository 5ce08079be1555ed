#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facemix {

enum class F1Average { macro, micro, weighted };
const char* to_string(F1Average a);
F1Average parse_f1_average(const std::string& s);

/// Per-class F1; a class absent from both predictions and labels scores 0.
std::vector<double> per_class_f1(std::span<const int> predictions, std::span<const int> labels, int K);

/// Macro F1 by default: the unweighted mean over all K classes. Throws on empty input.
double f1_overall(std::span<const int> predictions, std::span<const int> labels, int K,
                  F1Average average = F1Average::macro);

/// K x K row-major counts, entry (t, p) = samples of true class t predicted p.
std::vector<long> confusion(std::span<const int> predictions, std::span<const int> labels, int K);

/// Row-wise argmax of N x K scores; ties go to the lowest class index.
std::vector<int> argmax_rows(std::span<const double> scores, int K);

struct AucResult {
  /// Empty for classes without both positives and negatives.
  std::vector<std::optional<double>> per_class;
  /// Mean over the defined classes; empty if none is defined.
  std::optional<double> macro;
  bool any_excluded = false;
};

/// One-vs-rest Mann-Whitney AUC of column c against label == c, ties counting 1/2.
AucResult roc_auc_ovr(std::span<const double> scores, std::span<const int> labels, int K);

struct RocPoint {
  int cls = 0;
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;
};

/// ROC curve points for every defined class, thresholds descending.
std::vector<RocPoint> roc_curves(std::span<const double> scores, std::span<const int> labels, int K);

}  // namespace facemix
