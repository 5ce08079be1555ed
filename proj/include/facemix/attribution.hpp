#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "facemix/adapt.hpp"
#include "facemix/landmark_features.hpp"
#include "facemix/models.hpp"
#include "facemix/rng.hpp"

namespace facemix {

/// One model input: an S x S image and/or a feature vector.
struct InputPoint {
  std::vector<double> image;
  std::vector<double> features;
};

InputPoint input_of(const TrainSet& data, std::size_t index);

/// `count` rows drawn uniformly without replacement (all rows if fewer).
std::vector<InputPoint> sample_baselines(const TrainSet& data, int count, Rng& rng);

struct Attribution {
  int class_index = 0;
  int n_samples = 0;
  int image_size = 0;
  /// Shaped like the input; empty for an absent modality.
  std::vector<double> image;
  std::vector<double> features;
};

/// Softmax probability of `class_index` at `x`, in double precision.
double model_output(const Network<float>& model, const InputPoint& x, int class_index);

/// Expected gradients of the class probability: the mean over n_samples of
/// (x - b) * grad f(b + alpha (x - b)). Baselines are used in equal shares
/// (sample m takes baseline m mod |B|) and each baseline's alphas are
/// stratified over [0, 1), which keeps the completeness gap small.
/// Attributes the predicted class unless `class_index` is given.
Attribution expected_gradients(const Network<float>& model, const InputPoint& x, std::span<const InputPoint> baselines,
                               std::optional<int> class_index, int n_samples, Rng& rng);

/// f(x) with its gradient written into `grad`.
using ScalarGradFn = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// The same estimator for an arbitrary differentiable scalar function.
std::vector<double> expected_gradients(const ScalarGradFn& f, std::span<const double> x,
                                       const std::vector<std::vector<double>>& baselines, int n_samples, Rng& rng);

struct RankedFeature {
  int index = 0;
  FeatureDescriptor descriptor;
  double mean_abs = 0;
};

/// Features by mean |attribution| over the samples, descending; ties keep
/// index order. `descriptors` label the attributed feature vector.
std::vector<RankedFeature> rank_landmark_features(std::span<const Attribution> attributions,
                                                  std::span<const FeatureDescriptor> descriptors);

/// {"class_index", "n_samples", "features": [{descriptor, value}], "image_size"}.
nlohmann::json attribution_to_json(const Attribution& a, std::span<const FeatureDescriptor> descriptors);
nlohmann::json ranking_to_json(std::span<const RankedFeature> ranking);

/// Image attribution as an 8-bit PGM, values mapped affinely onto [0, 1]
/// (a constant map becomes mid-gray).
void write_attribution_heatmap(const std::filesystem::path& path, const Attribution& a);

}  // namespace facemix
