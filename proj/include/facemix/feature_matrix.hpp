#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "facemix/landmark_features.hpp"

namespace facemix {

/// P features x N samples, row = feature, column = sample.
struct FeatureMatrix {
  std::size_t P = 0;
  std::size_t N = 0;
  std::vector<double> values;  // row-major P x N
  std::vector<FeatureDescriptor> descriptors;
  std::vector<std::string> sample_ids;

  double at(std::size_t feature, std::size_t sample) const { return values[feature * N + sample]; }
  double& at(std::size_t feature, std::size_t sample) { return values[feature * N + sample]; }

  /// Feature values of one sample (a column).
  std::vector<double> column(std::size_t sample) const;
  /// Keeps only the listed rows, in the given order.
  FeatureMatrix select_rows(const std::vector<int>& rows) const;
  /// Keeps only the listed columns, in the given order.
  FeatureMatrix select_columns(const std::vector<std::size_t>& cols) const;
};

/// Builds a P x N matrix from per-sample feature values. Throws ShapeError if
/// samples disagree on P.
FeatureMatrix feature_matrix_from_samples(const std::vector<std::vector<double>>& per_sample,
                                          std::vector<FeatureDescriptor> descriptors,
                                          std::vector<std::string> sample_ids);

/// File layout: 8-byte little-endian header length L, L bytes of JSON
/// {"P", "N", "dtype": "f32le", "descriptors": [...], "sample_ids": [...]},
/// then P*N little-endian float32 values, feature-major.
void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

}  // namespace facemix
