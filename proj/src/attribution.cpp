#include "facemix/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "facemix/common.hpp"
#include "facemix/ingest.hpp"
#include "facemix/json_io.hpp"

namespace facemix {

using ad::Tensor;

InputPoint input_of(const TrainSet& data, std::size_t index) {
  if (index >= data.size()) throw ShapeError("sample index out of range");
  InputPoint p;
  if (data.image_size > 0) {
    const std::size_t px = static_cast<std::size_t>(data.image_size) * data.image_size;
    p.image.assign(data.images.begin() + static_cast<std::ptrdiff_t>(index * px),
                   data.images.begin() + static_cast<std::ptrdiff_t>((index + 1) * px));
  }
  if (data.feature_dim > 0) {
    const std::size_t P = static_cast<std::size_t>(data.feature_dim);
    p.features.assign(data.features.begin() + static_cast<std::ptrdiff_t>(index * P),
                      data.features.begin() + static_cast<std::ptrdiff_t>((index + 1) * P));
  }
  return p;
}

std::vector<InputPoint> sample_baselines(const TrainSet& data, int count, Rng& rng) {
  if (count < 1) throw ShapeError("baseline count must be positive");
  auto perm = rng.permutation(data.size());
  perm.resize(std::min(perm.size(), static_cast<std::size_t>(count)));
  std::vector<InputPoint> out;
  for (std::size_t i : perm) out.push_back(input_of(data, i));
  return out;
}

namespace {

constexpr int kChunk = 64;

void check_shapes(const NetworkSpec& spec, const InputPoint& x) {
  const std::size_t px = spec.uses_image() ? static_cast<std::size_t>(spec.image_size) * spec.image_size : 0;
  const std::size_t P = spec.uses_features() ? static_cast<std::size_t>(spec.feature_dim) : 0;
  if (x.image.size() != px || x.features.size() != P) throw ShapeError("input does not match the model's inputs");
}

Network<double> frozen_double(const Network<float>& model) {
  Network<double> net = model.cast<double>();
  for (auto& p : net.parameters()) p.set_requires_grad(false);
  return net;
}

ModelInput<double> make_input(const NetworkSpec& spec, const std::vector<const InputPoint*>& rows) {
  const int B = static_cast<int>(rows.size());
  ModelInput<double> in;
  if (spec.uses_image()) {
    std::vector<double> v;
    for (const auto* r : rows) v.insert(v.end(), r->image.begin(), r->image.end());
    in.image = Tensor<double>::from({B, 1, spec.image_size, spec.image_size}, std::move(v));
  }
  if (spec.uses_features()) {
    std::vector<double> v;
    for (const auto* r : rows) v.insert(v.end(), r->features.begin(), r->features.end());
    in.features = Tensor<double>::from({B, spec.feature_dim}, std::move(v));
  }
  return in;
}

std::vector<double> probabilities(const Network<double>& net, const InputPoint& x) {
  const auto logits = net.predict_logits(make_input(net.spec(), {&x}));
  const auto& z = logits.values();
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t c = 0; c < z.size(); ++c) s += p[c] = std::exp(z[c] - m);
  for (auto& v : p) v /= s;
  return p;
}

// Sample m uses baseline m mod B and the stratified alpha (j + u) / n_b, where
// j counts that baseline's samples so far and n_b is its share.
struct Plan {
  std::vector<std::size_t> baseline;
  std::vector<double> alpha;
};

Plan make_plan(std::size_t nb, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ShapeError("n_samples must be at least 1");
  if (nb == 0) throw ShapeError("at least one baseline is required");
  const auto n = static_cast<std::size_t>(n_samples);
  std::vector<std::size_t> share(nb, n / nb);
  for (std::size_t b = 0; b < n % nb; ++b) ++share[b];
  Plan plan;
  std::vector<std::size_t> seen(nb, 0);
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t b = m % nb;
    plan.baseline.push_back(b);
    plan.alpha.push_back((static_cast<double>(seen[b]++) + rng.uniform()) / static_cast<double>(share[b]));
  }
  return plan;
}

}  // namespace

double model_output(const Network<float>& model, const InputPoint& x, int class_index) {
  check_shapes(model.spec(), x);
  const auto p = probabilities(frozen_double(model), x);
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= p.size()) throw ShapeError("class index out of range");
  return p[static_cast<std::size_t>(class_index)];
}

Attribution expected_gradients(const Network<float>& model, const InputPoint& x, std::span<const InputPoint> baselines,
                               std::optional<int> class_index, int n_samples, Rng& rng) {
  const NetworkSpec& spec = model.spec();
  check_shapes(spec, x);
  for (const auto& b : baselines) check_shapes(spec, b);
  const Network<double> net = frozen_double(model);

  Attribution out;
  out.n_samples = n_samples;
  out.image_size = spec.uses_image() ? spec.image_size : 0;
  if (class_index) {
    if (*class_index < 0 || *class_index >= spec.K) throw ShapeError("class index out of range");
    out.class_index = *class_index;
  } else {
    const auto p = probabilities(net, x);
    out.class_index = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  const Plan plan = make_plan(baselines.size(), n_samples, rng);
  out.image.assign(x.image.size(), 0.0);
  out.features.assign(x.features.size(), 0.0);

  Rng unused(0);
  for (std::size_t m0 = 0; m0 < plan.alpha.size(); m0 += kChunk) {
    const std::size_t m1 = std::min(plan.alpha.size(), m0 + kChunk);
    std::vector<InputPoint> pts;
    for (std::size_t m = m0; m < m1; ++m) {
      const InputPoint& b = baselines[plan.baseline[m]];
      const double a = plan.alpha[m];
      InputPoint p;
      p.image.resize(x.image.size());
      p.features.resize(x.features.size());
      for (std::size_t i = 0; i < x.image.size(); ++i) p.image[i] = b.image[i] + a * (x.image[i] - b.image[i]);
      for (std::size_t i = 0; i < x.features.size(); ++i)
        p.features[i] = b.features[i] + a * (x.features[i] - b.features[i]);
      pts.push_back(std::move(p));
    }
    std::vector<const InputPoint*> rows;
    for (const auto& p : pts) rows.push_back(&p);
    ModelInput<double> in = make_input(spec, rows);
    if (in.image.defined()) in.image.set_requires_grad(true);
    if (in.features.defined()) in.features.set_requires_grad(true);
    const std::vector<int> cls(rows.size(), out.class_index);
    auto f = ad::sum(ad::softmax_select(net.forward_logits(in, false, unused), cls));
    f.backward();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const InputPoint& b = baselines[plan.baseline[m0 + r]];
      if (in.image.defined()) {
        const auto& g = in.image.grad();
        const std::size_t px = x.image.size();
        for (std::size_t i = 0; i < px; ++i) out.image[i] += (x.image[i] - b.image[i]) * g[r * px + i];
      }
      if (in.features.defined()) {
        const auto& g = in.features.grad();
        const std::size_t P = x.features.size();
        for (std::size_t i = 0; i < P; ++i) out.features[i] += (x.features[i] - b.features[i]) * g[r * P + i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (auto& v : out.image) v *= inv;
  for (auto& v : out.features) v *= inv;
  return out;
}

std::vector<double> expected_gradients(const ScalarGradFn& f, std::span<const double> x,
                                       const std::vector<std::vector<double>>& baselines, int n_samples, Rng& rng) {
  for (const auto& b : baselines)
    if (b.size() != x.size()) throw ShapeError("baseline shape differs from the input");
  const Plan plan = make_plan(baselines.size(), n_samples, rng);
  std::vector<double> out(x.size(), 0.0), pt(x.size()), g(x.size());
  for (std::size_t m = 0; m < plan.alpha.size(); ++m) {
    const auto& b = baselines[plan.baseline[m]];
    for (std::size_t i = 0; i < x.size(); ++i) pt[i] = b[i] + plan.alpha[m] * (x[i] - b[i]);
    std::fill(g.begin(), g.end(), 0.0);
    f(pt, g);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += (x[i] - b[i]) * g[i];
  }
  for (auto& v : out) v /= static_cast<double>(n_samples);
  return out;
}

std::vector<RankedFeature> rank_landmark_features(std::span<const Attribution> attributions,
                                                  std::span<const FeatureDescriptor> descriptors) {
  if (attributions.empty()) throw ShapeError("ranking needs at least one attribution");
  const std::size_t P = descriptors.size();
  std::vector<double> mean(P, 0.0);
  for (const auto& a : attributions) {
    if (a.features.size() != P) throw ShapeError("attribution width differs from the descriptor list");
    for (std::size_t i = 0; i < P; ++i) mean[i] += std::abs(a.features[i]);
  }
  std::vector<RankedFeature> out;
  for (std::size_t i = 0; i < P; ++i)
    out.push_back({static_cast<int>(i), descriptors[i], mean[i] / static_cast<double>(attributions.size())});
  std::stable_sort(out.begin(), out.end(), [](const RankedFeature& a, const RankedFeature& b) { return a.mean_abs > b.mean_abs; });
  return out;
}

nlohmann::json attribution_to_json(const Attribution& a, std::span<const FeatureDescriptor> descriptors) {
  if (!a.features.empty() && a.features.size() != descriptors.size())
    throw ShapeError("attribution width differs from the descriptor list");
  nlohmann::json j;
  j["class_index"] = a.class_index;
  j["n_samples"] = a.n_samples;
  j["image_size"] = a.image_size;
  auto feats = nlohmann::json::array();
  for (std::size_t i = 0; i < a.features.size(); ++i)
    feats.push_back({{"descriptor", descriptor_to_json(descriptors[i])}, {"value", a.features[i]}});
  j["features"] = feats;
  return j;
}

nlohmann::json ranking_to_json(std::span<const RankedFeature> ranking) {
  auto arr = nlohmann::json::array();
  for (const auto& r : ranking)
    arr.push_back({{"index", r.index},
                   {"label", r.descriptor.label()},
                   {"descriptor", descriptor_to_json(r.descriptor)},
                   {"mean_abs", r.mean_abs}});
  return arr;
}

void write_attribution_heatmap(const std::filesystem::path& path, const Attribution& a) {
  const int S = a.image_size;
  if (S <= 0 || a.image.size() != static_cast<std::size_t>(S) * S) throw ShapeError("attribution has no image part");
  const auto [lo, hi] = std::minmax_element(a.image.begin(), a.image.end());
  GrayImage img(S, S, 0.5f);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < a.image.size(); ++i)
      img.pixels[i] = static_cast<float>((a.image[i] - *lo) / (*hi - *lo));
  }
  write_image_pgm(path, img);
}

}  // namespace facemix
