#include "facemix/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "facemix/common.hpp"
#include "facemix/json_io.hpp"

namespace facemix {

using ad::Tensor;

const char* to_string(NetKind k) {
  switch (k) {
    case NetKind::mlp: return "mlp";
    case NetKind::cnn: return "cnn";
    case NetKind::fusion: return "fusion";
  }
  return "?";
}

NetKind parse_net_kind(const std::string& s) {
  if (s == "mlp") return NetKind::mlp;
  if (s == "cnn") return NetKind::cnn;
  if (s == "fusion") return NetKind::fusion;
  throw ParseError("unknown network kind '" + s + "'");
}

int NetworkSpec::flatten_width() const { return (image_size / 8) * (image_size / 8) * conv_channels[2]; }

void NetworkSpec::validate() const {
  if (K < 2) throw ShapeError("network needs K >= 2 classes");
  if (hidden < 1) throw ShapeError("hidden width must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ShapeError("dropout probability must lie in [0, 1)");
  if (uses_features() && feature_dim < 1) throw ShapeError("no selected features: the feature branch needs at least one input");
  if (uses_image()) {
    if (image_size < 8 || image_size % 8 != 0) {
      throw ShapeError("image size must be a positive multiple of 8, got " + std::to_string(image_size));
    }
    for (int c : conv_channels)
      if (c < 1) throw ShapeError("conv channel counts must be positive");
  }
}

nlohmann::json spec_to_json(const NetworkSpec& s) {
  return {{"kind", to_string(s.kind)},         {"image_size", s.image_size}, {"feature_dim", s.feature_dim},
          {"conv_channels", s.conv_channels}, {"hidden", s.hidden},         {"K", s.K},
          {"dropout_p", s.dropout_p}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  if (j.contains("kind")) s.kind = parse_net_kind(j["kind"].get<std::string>());
  s.image_size = j.value("image_size", s.image_size);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  if (j.contains("conv_channels")) s.conv_channels = j["conv_channels"].get<std::array<int, 3>>();
  s.hidden = j.value("hidden", s.hidden);
  s.K = j.value("K", s.K);
  s.dropout_p = j.value("dropout_p", s.dropout_p);
  return s;
}

template <class T>
int ModelInput<T>::batch() const {
  if (image.defined()) return image.dim(0);
  if (features.defined()) return features.dim(0);
  return 0;
}

template <class T>
void Network<T>::add_param(const std::string& name, ad::Shape shape, int fan_in, int fan_out, Rng* rng) {
  const std::size_t n = ad::numel(shape);
  std::vector<T> v(n, T(0));
  if (rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& x : v) x = static_cast<T>(rng->uniform(-bound, bound));
  }
  const int idx = index_of(name);
  auto t = Tensor<T>::from(std::move(shape), std::move(v), true);
  if (idx >= 0) {
    params_[static_cast<std::size_t>(idx)] = t;
  } else {
    names_.push_back(name);
    params_.push_back(t);
  }
}

template <class T>
int Network<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return -1;
}

template <class T>
Network<T>::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  const Rng root = Rng(seed).split("init");
  auto weight = [&](const std::string& name, ad::Shape shape, int fan_in, int fan_out) {
    Rng r = root.split(name);
    add_param(name, std::move(shape), fan_in, fan_out, &r);
  };
  if (spec_.uses_image()) {
    int in = 1;
    for (int i = 0; i < 3; ++i) {
      const int out = spec_.conv_channels[static_cast<std::size_t>(i)];
      weight("G.conv" + std::to_string(i + 1), {out, in, 3, 3}, in * 9, out * 9);
      in = out;
    }
    weight("G.fc.W", {spec_.flatten_width(), spec_.hidden}, spec_.flatten_width(), spec_.hidden);
    add_param("G.fc.b", {spec_.hidden}, 0, 0, nullptr);
  }
  if (spec_.uses_features()) {
    weight("H.fc.W", {spec_.feature_dim, spec_.hidden}, spec_.feature_dim, spec_.hidden);
    add_param("H.fc.b", {spec_.hidden}, 0, 0, nullptr);
  }
  reinit_classifier(seed);
}

template <class T>
void Network<T>::reinit_classifier(std::uint64_t seed) {
  Rng r = Rng(seed).split("init").split("C.W");
  add_param("C.W", {spec_.latent_width(), spec_.K}, spec_.latent_width(), spec_.K, &r);
  add_param("C.b", {spec_.K}, 0, 0, nullptr);
}

template <class T>
const Tensor<T>& Network<T>::param(const std::string& name) const {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("network has no parameter '" + name + "'");
  return params_[static_cast<std::size_t>(i)];
}

template <class T>
Tensor<T>& Network<T>::param(const std::string& name) {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("network has no parameter '" + name + "'");
  return params_[static_cast<std::size_t>(i)];
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <class T>
std::size_t Network<T>::classifier_parameter_count() const {
  return param("C.W").size() + param("C.b").size();
}

template <class T>
Tensor<T> Network<T>::image_branch(const Tensor<T>& image, bool training, Rng& rng) const {
  if (!spec_.uses_image()) throw ShapeError("network has no image branch");
  const int S = spec_.image_size;
  if (!image.defined() || image.shape().size() != 4 || image.dim(1) != 1 || image.dim(2) != S || image.dim(3) != S) {
    throw ShapeError("image input must be [B, 1, " + std::to_string(S) + ", " + std::to_string(S) + "]");
  }
  Tensor<T> h = image;
  for (int i = 1; i <= 3; ++i) h = ad::maxpool2(ad::conv2d(h, param("G.conv" + std::to_string(i))));
  h = ad::relu(ad::dense(ad::flatten(h), param("G.fc.W"), param("G.fc.b")));
  return ad::dropout(h, spec_.dropout_p, training, rng);
}

template <class T>
Tensor<T> Network<T>::feature_branch(const Tensor<T>& features, bool training, Rng& rng) const {
  if (!spec_.uses_features()) throw ShapeError("network has no feature branch");
  if (!features.defined() || features.shape().size() != 2 || features.dim(1) != spec_.feature_dim) {
    throw ShapeError("feature input must be [B, " + std::to_string(spec_.feature_dim) + "]");
  }
  Tensor<T> h = ad::relu(ad::dense(features, param("H.fc.W"), param("H.fc.b")));
  return ad::dropout(h, spec_.dropout_p, training, rng);
}

template <class T>
Tensor<T> Network<T>::forward_latent(const ModelInput<T>& in, bool training, Rng& rng) const {
  switch (spec_.kind) {
    case NetKind::mlp: return feature_branch(in.features, training, rng);
    case NetKind::cnn: return image_branch(in.image, training, rng);
    case NetKind::fusion: {
      if (!in.image.defined() || !in.features.defined()) throw ShapeError("fusion needs image and feature inputs");
      if (in.image.dim(0) != in.features.dim(0)) throw ShapeError("image and feature batches differ");
      Tensor<T> g = image_branch(in.image, training, rng);
      Tensor<T> h = feature_branch(in.features, training, rng);
      return ad::concat(g, h);
    }
  }
  throw ShapeError("unknown network kind");
}

template <class T>
Tensor<T> Network<T>::classify(const Tensor<T>& z) const {
  return ad::dense(z, param("C.W"), param("C.b"));
}

template <class T>
Tensor<T> Network<T>::forward_logits(const ModelInput<T>& in, bool training, Rng& rng) const {
  return classify(forward_latent(in, training, rng));
}

template <class T>
Tensor<T> Network<T>::predict_logits(const ModelInput<T>& in) const {
  ad::NoGradGuard guard;
  Rng unused(0);
  return forward_logits(in, false, unused);
}

template <class T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <class T>
template <class U>
Network<U> Network<T>::cast() const {
  Network<U> out;
  out.spec_ = spec_;
  out.names_ = names_;
  for (const auto& p : params_) {
    std::vector<U> v(p.values().begin(), p.values().end());
    out.params_.push_back(Tensor<U>::from(p.shape(), std::move(v), true));
  }
  return out;
}

template struct ModelInput<float>;
template struct ModelInput<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;

Network<float> build_mlp(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkSpec s = spec;
  s.kind = NetKind::mlp;
  return Network<float>(s, seed);
}

Network<float> build_cnn(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkSpec s = spec;
  s.kind = NetKind::cnn;
  return Network<float>(s, seed);
}

Network<float> build_fusion(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkSpec s = spec;
  s.kind = NetKind::fusion;
  return Network<float>(s, seed);
}

Network<float> build_network(const NetworkSpec& spec, std::uint64_t seed) { return Network<float>(spec, seed); }

namespace {

void put_f32le(std::ostream& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                              static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float get_f32le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Network<float>& net, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + (dir / "weights.bin").string());
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& p = net.parameters()[i];
    tensors.push_back({{"name", net.names()[i]}, {"shape", p.shape()}, {"offset", offset}, {"count", p.size()}});
    for (float v : p.values()) put_f32le(bin, v);
    offset += 4 * p.size();
  }
  if (!bin) throw Error("failed writing weights");
  nlohmann::json manifest = {{"format", "facemix-checkpoint"}, {"version", 1},     {"dtype", "f32le"},
                             {"spec", spec_to_json(net.spec())}, {"tensors", tensors}, {"extra", extra}};
  write_json(dir / "manifest.json", manifest);
}

Network<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("dtype", "") != "f32le") throw ParseError("checkpoint dtype must be f32le");
  const NetworkSpec spec = network_spec_from_json(manifest.at("spec"));
  Network<float> net(spec, 0);
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw ParseError("cannot open " + (dir / "weights.bin").string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  std::size_t loaded = 0;
  for (const auto& t : manifest.at("tensors")) {
    auto& p = net.param(t.at("name").get<std::string>());
    if (t.at("shape").get<ad::Shape>() != p.shape()) throw ParseError("checkpoint tensor shape mismatch for " + t.at("name").get<std::string>());
    const std::size_t off = t.at("offset").get<std::size_t>();
    if (off + 4 * p.size() > blob.size()) throw ParseError("weights.bin is truncated");
    for (std::size_t k = 0; k < p.size(); ++k) p.values()[k] = get_f32le(blob.data() + off + 4 * k);
    ++loaded;
  }
  if (loaded != net.parameters().size()) throw ParseError("checkpoint is missing tensors");
  return net;
}

nlohmann::json checkpoint_extra(const std::filesystem::path& dir) {
  return read_json(dir / "manifest.json").value("extra", nlohmann::json::object());
}

}  // namespace facemix
