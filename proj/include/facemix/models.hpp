#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "facemix/autodiff.hpp"

namespace facemix {

enum class NetKind { mlp, cnn, fusion };
const char* to_string(NetKind k);
NetKind parse_net_kind(const std::string& s);

struct NetworkSpec {
  NetKind kind = NetKind::mlp;
  /// Aligned image side S (cnn, fusion); must be divisible by 8.
  int image_size = 0;
  /// Selected landmark feature count (mlp, fusion).
  int feature_dim = 0;
  std::array<int, 3> conv_channels{8, 16, 32};
  int hidden = 512;
  int K = 7;
  double dropout_p = 0.5;

  bool uses_image() const { return kind != NetKind::mlp; }
  bool uses_features() const { return kind != NetKind::cnn; }
  int latent_width() const { return kind == NetKind::fusion ? 2 * hidden : hidden; }
  /// Width after the last pooling stage of the image branch.
  int flatten_width() const;
  /// Throws ShapeError describing the first violated requirement.
  void validate() const;
};

nlohmann::json spec_to_json(const NetworkSpec& s);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

template <class T>
struct ModelInput {
  ad::Tensor<T> image;     // [B, 1, S, S]
  ad::Tensor<T> features;  // [B, P]
  int batch() const;
};

/// Feature extractor M (image branch G and/or feature branch H) followed by
/// classifier C, a single dense layer to K logits.
template <class T>
class Network {
 public:
  Network() = default;
  /// Glorot-uniform weights and zero biases, drawn from `seed`.
  Network(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<ad::Tensor<T>>& parameters() { return params_; }
  const std::vector<ad::Tensor<T>>& parameters() const { return params_; }
  const ad::Tensor<T>& param(const std::string& name) const;
  ad::Tensor<T>& param(const std::string& name);
  std::size_t parameter_count() const;
  std::size_t classifier_parameter_count() const;

  ad::Tensor<T> forward_latent(const ModelInput<T>& in, bool training, Rng& rng) const;
  ad::Tensor<T> classify(const ad::Tensor<T>& z) const;
  ad::Tensor<T> forward_logits(const ModelInput<T>& in, bool training, Rng& rng) const;
  /// Eval-mode logits without recording a graph.
  ad::Tensor<T> predict_logits(const ModelInput<T>& in) const;

  /// Image branch G alone (cnn, fusion) and feature branch H alone (mlp, fusion).
  ad::Tensor<T> image_branch(const ad::Tensor<T>& image, bool training, Rng& rng) const;
  ad::Tensor<T> feature_branch(const ad::Tensor<T>& features, bool training, Rng& rng) const;

  void zero_grad();
  /// Fresh classifier weights from `seed`.
  void reinit_classifier(std::uint64_t seed);

  /// Same architecture and values in another precision.
  template <class U>
  Network<U> cast() const;

 private:
  template <class U>
  friend class Network;
  void add_param(const std::string& name, ad::Shape shape, int fan_in, int fan_out, Rng* rng);
  int index_of(const std::string& name) const;

  NetworkSpec spec_;
  std::vector<std::string> names_;
  std::vector<ad::Tensor<T>> params_;
};

Network<float> build_mlp(const NetworkSpec& spec, std::uint64_t seed);
Network<float> build_cnn(const NetworkSpec& spec, std::uint64_t seed);
Network<float> build_fusion(const NetworkSpec& spec, std::uint64_t seed);
/// Dispatches on spec.kind.
Network<float> build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Writes `manifest.json` and `weights.bin` into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Network<float>& net,
                     const nlohmann::json& extra = nlohmann::json::object());
Network<float> load_checkpoint(const std::filesystem::path& dir);
/// The `extra` object stored by save_checkpoint.
nlohmann::json checkpoint_extra(const std::filesystem::path& dir);

}  // namespace facemix
