#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "facemix/adapt.hpp"
#include "facemix/betamix.hpp"
#include "facemix/ingest.hpp"
#include "facemix/landmark_features.hpp"
#include "facemix/metrics.hpp"
#include "facemix/models.hpp"

namespace facemix {

struct CvConfig {
  int outer_k = 5;
  int inner_k = 2;
  std::vector<double> xi_grid = {0.01, 0.3, 0.8};
  F1Average average = F1Average::macro;
};

struct BetaMixSettings {
  /// When false every feature is kept.
  bool enabled = true;
  betamix::EmConfig em;
};

/// Everything one run needs. Data comes either from a face manifest
/// (`manifest`) or from a tabular pair (`features` + `samples`).
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path manifest;
  std::filesystem::path features;
  std::filesystem::path samples;
  std::filesystem::path out_dir = "out";
  /// Side of the aligned face crop.
  int image_size = 32;
  /// z-score the selected features with training statistics.
  bool standardize = true;
  BetaMixSettings betamix;
  /// image_size, feature_dim and K are filled in from the data.
  NetworkSpec model;
  TrainConfig train;
  CvConfig cv;
};

/// Relative paths are resolved against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Identity of one sample, shared by face manifests and tabular sample tables.
struct SampleInfo {
  std::string sample_id;
  std::string subject_id;
  Domain domain = Domain::source;
  int label = 0;
};

/// Reads the leading `sample_id,subject_id,domain,label` columns of a face
/// manifest or a tabular sample table; further columns are ignored.
std::vector<SampleInfo> read_sample_table(const std::filesystem::path& path);

/// Samples of one domain after alignment. Face data fills `images` and
/// `landmarks`; tabular data fills `tabular`.
struct DomainData {
  std::vector<SampleInfo> info;
  std::vector<GrayImage> images;
  std::vector<LandmarkSet> landmarks;
  std::vector<std::vector<double>> tabular;

  std::size_t size() const { return info.size(); }
  bool has_faces() const { return !landmarks.empty(); }
  std::vector<std::string> sample_ids(std::span<const std::size_t> idx) const;
  std::vector<std::string> subject_ids() const;
};

struct PipelineData {
  int K = 0;
  int image_size = 0;
  DomainData source;
  DomainData target;
  /// Descriptors of tabular columns; empty for faces (they follow the topology).
  std::vector<FeatureDescriptor> tabular_descriptors;

  const DomainData& domain(Domain d) const { return d == Domain::source ? source : target; }
  bool has_faces() const { return source.has_faces() || target.has_faces(); }
};

/// Aligns every face to `image_size` and splits by domain.
PipelineData pipeline_data_from_faces(const Dataset& data, int image_size);
/// Joins feature columns to sample rows by sample id.
PipelineData pipeline_data_from_tabular(const FeatureMatrix& features, const std::vector<SampleInfo>& samples);
PipelineData load_pipeline_data(const PipelineConfig& config);

/// Called with the sample ids each stage reads, so tests can audit data
/// lineage. Stages: topology, betamix, standardize, inner_train, inner_val,
/// final_train, test.
using LineageObserver = std::function<void(std::string_view stage, int fold, const std::vector<std::string>& ids)>;

/// Per-domain sample indices.
struct DomainIndices {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

DomainIndices all_indices(const PipelineData& data);

/// Everything fitted on training data that turns raw samples into model inputs.
struct FeatureStage {
  std::optional<Triangulation> topology;
  /// Descriptors of all candidate features.
  std::vector<FeatureDescriptor> descriptors;
  /// Indices into `descriptors` fed to the model, ascending.
  std::vector<int> selected;
  std::vector<double> mean;
  std::vector<double> scale;
  std::optional<betamix::FittedBetaMix> fit;
  bool uses_images = false;
  bool uses_features = false;
};

/// Fits topology, BetaMix selection and standardization on `train` only.
/// Stages a model kind does not need are skipped.
FeatureStage fit_feature_stage(const PipelineConfig& config, const PipelineData& data, const DomainIndices& train,
                               const LineageObserver& observer = {}, int fold = -1);

/// All candidate feature values (unselected, unscaled) of the given samples.
std::vector<std::vector<double>> candidate_features(const PipelineData& data, const FeatureStage& stage, Domain d,
                                                    std::span<const std::size_t> idx);

/// Model inputs for the given samples of one domain.
TrainSet make_trainset(const PipelineData& data, const FeatureStage& stage, Domain d,
                       std::span<const std::size_t> idx);

/// The configured model spec with input sizes and K taken from the data.
NetworkSpec resolve_network_spec(const PipelineConfig& config, const PipelineData& data, const FeatureStage& stage);

/// Builds and trains a model. finetune pre-trains on the source set with
/// source_only first and then fine-tunes on the target set.
Network<float> fit_model(const NetworkSpec& spec, const TrainConfig& cfg, const TrainSet& src, const TrainSet& tgt,
                         TrainHistory* history = nullptr);

/// FeatureStage as JSON (topology, selection, scaling); BetaMix fit omitted.
nlohmann::json feature_stage_to_json(const FeatureStage& s);
FeatureStage feature_stage_from_json(const nlohmann::json& j);

}  // namespace facemix
