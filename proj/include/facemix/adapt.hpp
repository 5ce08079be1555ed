#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "facemix/autodiff.hpp"
#include "facemix/models.hpp"

namespace facemix {

/// In-memory training data: aligned images and/or selected features per sample.
struct TrainSet {
  int image_size = 0;   // 0 when there are no images
  int feature_dim = 0;  // 0 when there are no features
  int K = 0;
  std::vector<float> images;    // N x S x S
  std::vector<float> features;  // N x P
  std::vector<int> labels;
  std::vector<std::string> sample_ids;
  std::vector<std::string> subject_ids;

  std::size_t size() const { return labels.size(); }
  ModelInput<float> batch(std::span<const std::size_t> idx) const;
  TrainSet subset(std::span<const std::size_t> idx) const;
  /// Per-class counts over the whole set.
  std::vector<long> class_counts() const;
  /// Throws ShapeError on inconsistent buffers.
  void validate() const;
};

/// a then b; both must agree on image size, feature width and K.
TrainSet concat(const TrainSet& a, const TrainSet& b);

enum class TrainMode { source_only, target_only, finetune, finetune_mixed, adapt };
const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::adapt;
  double xi = 0.3;
  double margin = 1.0;
  int batch = 32;
  int epochs = 30;
  double zeta_min = 1e-5;
  double zeta_max = 1e-3;
  /// Iterations per half cycle; 0 means four epochs' worth.
  std::int64_t step_size = 0;
  std::uint64_t seed = 1;
  bool class_weighting = true;
  /// finetune only: start from fresh classifier weights.
  bool reinit_classifier = false;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct IterRecord {
  std::int64_t iter = 0;
  double l_cs = 0;
  double l_ct = 0;
  double l_da = 0;
  double total = 0;
  double lr = 0;
};

struct EpochRecord {
  int epoch = 0;
  double val_f1 = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<IterRecord> iterations;
  std::vector<EpochRecord> epochs;
};

/// CSV `iter,l_cs,l_ct,l_da,total,lr`.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

/// Per-sample weights 1/count[y], rescaled to mean 1 over the batch.
std::vector<float> inverse_frequency_weights(std::span<const int> labels, std::span<const long> class_counts);

/// Weighted mean of -log softmax at the true class with inverse-frequency weights.
ad::Tensor<float> weighted_cross_entropy(const ad::Tensor<float>& logits, std::span<const int> labels,
                                         std::span<const long> class_counts);

ad::Tensor<float> contrastive_alignment_loss(const ad::Tensor<float>& zs, std::span<const int> ys,
                                             const ad::Tensor<float>& zt, std::span<const int> yt, double margin);

/// (L_CS + L_CT) + xi * L_DA.
ad::Tensor<float> total_loss(const ad::Tensor<float>& l_cs, const ad::Tensor<float>& l_ct,
                             const ad::Tensor<float>& l_da, double xi);
double total_loss(double l_cs, double l_ct, double l_da, double xi);

/// Index batches for one epoch of paired training. The longer domain is
/// permuted and cut into batches of n (the last may be shorter); the other
/// domain supplies equally sized batches from a cyclic stream that is
/// reshuffled whenever it runs out.
class BatchPairer {
 public:
  BatchPairer(std::size_t n_source, std::size_t n_target, int n, Rng rng);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> next_epoch();
  std::size_t steps_per_epoch() const;

 private:
  std::vector<std::size_t> draw_cyclic(std::size_t count);
  std::size_t ns_, nt_;
  int n_;
  Rng rng_;
  bool source_drives_;
  std::vector<std::size_t> stream_;
  std::size_t stream_pos_ = 0;
};

/// Plain permuted batches over one set.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, Rng& rng);

struct LossParts {
  double l_cs = 0;
  double l_ct = 0;
  double l_da = 0;
  double total = 0;
};

/// Loss of one optimization step for the given mode. Source-side modes use
/// `src_idx` on `src`, target-side modes `tgt_idx` on `tgt`; finetune_mixed
/// concatenates both batches; adapt combines both streams with L_DA.
ad::Tensor<float> step_loss(const TrainConfig& cfg, const Network<float>& model, const TrainSet& src,
                            std::span<const std::size_t> src_idx, const TrainSet& tgt,
                            std::span<const std::size_t> tgt_idx, Rng& dropout_rng, LossParts* parts = nullptr);

/// Trains `model` in place. Only the sets the mode needs must be non-empty.
/// Throws NumericError if the total loss becomes non-finite.
TrainHistory train(const TrainConfig& cfg, Network<float>& model, const TrainSet& src, const TrainSet& tgt,
                   const TrainSet* val = nullptr);

/// N x K softmax probabilities in eval mode.
std::vector<double> predict_proba(const Network<float>& model, const TrainSet& data, int batch = 128);

}  // namespace facemix
