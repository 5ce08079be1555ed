#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facemix/adapt.hpp"
#include "facemix/betamix.hpp"
#include "facemix/feature_matrix.hpp"
#include "facemix/ingest.hpp"

namespace facemix::synth {

enum class Preset { planted_correlations, two_domain_gaussians, two_domain_faces };

const char* to_string(Preset p);
Preset parse_preset(const std::string& s);

struct SynthSpec {
  Preset preset = Preset::two_domain_gaussians;
  std::uint64_t seed = 1;
  int K = 4;
  /// Samples per domain.
  int n_source = 300;
  int n_target = 120;
  /// Subjects per domain.
  int subjects_source = 30;
  int subjects_target = 12;
  /// Strength of the domain shift (meaning depends on the preset).
  double shift = 1.0;
  double noise = 1.0;

  // planted_correlations
  int P = 500;
  int expression_only = 20;
  int domain_only = 10;
  int overlap = 5;
  int identity_only = 5;

  // two_domain_gaussians
  int dim = 4;

  // two_domain_faces
  int raw_image_size = 48;
};

/// Tabular data with a known correlation structure.
struct PlantedData {
  FeatureMatrix features;
  std::vector<betamix::FactorCodes> codes;
  std::vector<int> expression_only;
  std::vector<int> domain_only;
  std::vector<int> overlap;
  std::vector<int> identity_only;
};

/// Expression-only rows are c * z(label) + e with c chosen so the population
/// |rho| is at least 0.7; domain-only rows use the domain code, overlap rows
/// both, identity-only rows the subject code; all other rows are pure noise.
PlantedData generate_planted(const SynthSpec& spec);

/// Tabular two-domain K-class task.
struct TabularSample {
  std::string sample_id;
  std::string subject_id;
  Domain domain = Domain::source;
  int label = 0;
  std::vector<double> x;
};

struct TabularTask {
  int K = 0;
  int dim = 0;
  std::vector<TabularSample> source;
  std::vector<TabularSample> target;
};

/// Class c has mean on a ring in the first two coordinates plus a random
/// offset elsewhere; noise is isotropic. Target samples pass through a
/// rotation by `shift` * 60 degrees in the class plane plus a translation of
/// `shift` * 1.5 along it, and a shift of 8 * `shift` along the third axis so
/// the domains occupy disjoint regions. shift = 0 makes them identical.
TabularTask generate_two_domain_gaussians(const SynthSpec& spec);

/// Packs tabular samples as a feature-only training set.
TrainSet to_trainset(const std::vector<TabularSample>& rows, int K);

/// Two-domain face task with complementary cues. Labels are
/// 2 * geometry_bit + texture_bit (+ more classes cycle the pattern): the
/// geometry bit changes mouth landmarks only (never rendered in the image) and
/// the texture bit changes a cheek blob rendered in the image only. Target
/// faces are rescaled (larger eyes, narrower jaw) and rendered with lower
/// contrast. Images are raw_image_size square with random pose.
Dataset generate_two_domain_faces(const SynthSpec& spec);

/// Mean 68-point face template in a unit box (eyes near y = 0.35).
std::vector<Point2> face_template();

/// Writes the preset to `dir`. Faces: manifest.csv + images/ + landmarks/.
/// Tabular presets: features.bin + samples.csv. Returns the primary file.
std::filesystem::path synth_generate(const SynthSpec& spec, const std::filesystem::path& dir);

nlohmann::json spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const nlohmann::json& j);

/// `sample_id,subject_id,domain,label` rows for tabular presets.
void write_samples_csv(const std::filesystem::path& path, const std::vector<TabularSample>& rows);
std::vector<TabularSample> read_samples_csv(const std::filesystem::path& path);

}  // namespace facemix::synth
