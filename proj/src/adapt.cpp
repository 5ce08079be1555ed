#include "facemix/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "facemix/common.hpp"
#include "facemix/metrics.hpp"

namespace facemix {

using ad::Tensor;

ModelInput<float> TrainSet::batch(std::span<const std::size_t> idx) const {
  const int B = static_cast<int>(idx.size());
  if (B == 0) throw ShapeError("empty batch");
  ModelInput<float> in;
  if (image_size > 0) {
    const std::size_t px = static_cast<std::size_t>(image_size) * image_size;
    std::vector<float> v(idx.size() * px);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(idx[r] * px), px, v.begin() + static_cast<std::ptrdiff_t>(r * px));
    in.image = Tensor<float>::from({B, 1, image_size, image_size}, std::move(v));
  }
  if (feature_dim > 0) {
    const std::size_t P = static_cast<std::size_t>(feature_dim);
    std::vector<float> v(idx.size() * P);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(idx[r] * P), P, v.begin() + static_cast<std::ptrdiff_t>(r * P));
    in.features = Tensor<float>::from({B, feature_dim}, std::move(v));
  }
  return in;
}

TrainSet TrainSet::subset(std::span<const std::size_t> idx) const {
  TrainSet out;
  out.image_size = image_size;
  out.feature_dim = feature_dim;
  out.K = K;
  const std::size_t px = static_cast<std::size_t>(image_size) * image_size;
  const std::size_t P = static_cast<std::size_t>(feature_dim);
  for (std::size_t i : idx) {
    if (i >= size()) throw ShapeError("subset index out of range");
    out.images.insert(out.images.end(), images.begin() + static_cast<std::ptrdiff_t>(i * px),
                      images.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
    out.features.insert(out.features.end(), features.begin() + static_cast<std::ptrdiff_t>(i * P),
                        features.begin() + static_cast<std::ptrdiff_t>((i + 1) * P));
    out.labels.push_back(labels[i]);
    out.sample_ids.push_back(sample_ids.empty() ? std::string() : sample_ids[i]);
    out.subject_ids.push_back(subject_ids.empty() ? std::string() : subject_ids[i]);
  }
  return out;
}

std::vector<long> TrainSet::class_counts() const {
  std::vector<long> c(static_cast<std::size_t>(std::max(K, 0)), 0);
  for (int y : labels) {
    if (y < 0 || y >= K) throw ShapeError("label out of range for K = " + std::to_string(K));
    ++c[static_cast<std::size_t>(y)];
  }
  return c;
}

void TrainSet::validate() const {
  const std::size_t n = size();
  if (images.size() != n * static_cast<std::size_t>(image_size) * image_size)
    throw ShapeError("image buffer does not match sample count");
  if (features.size() != n * static_cast<std::size_t>(feature_dim))
    throw ShapeError("feature buffer does not match sample count");
  class_counts();
}

TrainSet concat(const TrainSet& a, const TrainSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.image_size != b.image_size || a.feature_dim != b.feature_dim || a.K != b.K)
    throw ShapeError("cannot concatenate training sets of different layout");
  TrainSet out = a;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.features.insert(out.features.end(), b.features.begin(), b.features.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.sample_ids.insert(out.sample_ids.end(), b.sample_ids.begin(), b.sample_ids.end());
  out.subject_ids.insert(out.subject_ids.end(), b.subject_ids.begin(), b.subject_ids.end());
  return out;
}

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::source_only: return "source_only";
    case TrainMode::target_only: return "target_only";
    case TrainMode::finetune: return "finetune";
    case TrainMode::finetune_mixed: return "finetune_mixed";
    case TrainMode::adapt: return "adapt";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::source_only, TrainMode::target_only, TrainMode::finetune, TrainMode::finetune_mixed,
                      TrainMode::adapt})
    if (s == to_string(m)) return m;
  throw ParseError("unknown training mode '" + s + "'");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},       {"xi", c.xi},
          {"margin", c.margin},              {"batch", c.batch},
          {"epochs", c.epochs},              {"zeta_min", c.zeta_min},
          {"zeta_max", c.zeta_max},          {"step_size", c.step_size},
          {"seed", c.seed},                  {"class_weighting", c.class_weighting},
          {"reinit_classifier", c.reinit_classifier}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("mode")) c.mode = parse_train_mode(j["mode"].get<std::string>());
  c.xi = j.value("xi", c.xi);
  c.margin = j.value("margin", c.margin);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.zeta_min = j.value("zeta_min", c.zeta_min);
  c.zeta_max = j.value("zeta_max", c.zeta_max);
  c.step_size = j.value("step_size", c.step_size);
  c.seed = j.value("seed", c.seed);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  c.reinit_classifier = j.value("reinit_classifier", c.reinit_classifier);
  return c;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iter,l_cs,l_ct,l_da,total,lr\n" << std::setprecision(9);
  for (const auto& r : h.iterations)
    out << r.iter << ',' << r.l_cs << ',' << r.l_ct << ',' << r.l_da << ',' << r.total << ',' << r.lr << '\n';
}

std::vector<float> inverse_frequency_weights(std::span<const int> labels, std::span<const long> counts) {
  std::vector<double> w(labels.size());
  double sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= counts.size()) throw ShapeError("label out of range");
    if (counts[static_cast<std::size_t>(y)] <= 0) throw ShapeError("class " + std::to_string(y) + " has zero count");
    w[i] = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(y)]);
    sum += w[i];
  }
  std::vector<float> out(labels.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] * static_cast<double>(w.size()) / sum);
  return out;
}

Tensor<float> weighted_cross_entropy(const Tensor<float>& logits, std::span<const int> labels,
                                     std::span<const long> class_counts) {
  const auto w = inverse_frequency_weights(labels, class_counts);
  return ad::softmax_cross_entropy<float>(logits, labels, w);
}

Tensor<float> contrastive_alignment_loss(const Tensor<float>& zs, std::span<const int> ys, const Tensor<float>& zt,
                                         std::span<const int> yt, double margin) {
  if (ys.empty() || yt.empty()) throw ShapeError("contrastive alignment needs non-empty batches");
  return ad::contrastive_alignment<float>(zs, ys, zt, yt, margin);
}

Tensor<float> total_loss(const Tensor<float>& l_cs, const Tensor<float>& l_ct, const Tensor<float>& l_da, double xi) {
  return ad::add(ad::add(l_cs, l_ct), ad::scale(l_da, xi));
}

double total_loss(double l_cs, double l_ct, double l_da, double xi) { return (l_cs + l_ct) + xi * l_da; }

BatchPairer::BatchPairer(std::size_t n_source, std::size_t n_target, int n, Rng rng)
    : ns_(n_source), nt_(n_target), n_(n), rng_(rng), source_drives_(n_source >= n_target) {
  if (ns_ == 0 || nt_ == 0) throw ShapeError("paired batches need both domains non-empty");
  if (n_ < 1) throw ShapeError("batch size must be positive");
}

std::size_t BatchPairer::steps_per_epoch() const {
  const std::size_t longer = std::max(ns_, nt_);
  return (longer + static_cast<std::size_t>(n_) - 1) / static_cast<std::size_t>(n_);
}

std::vector<std::size_t> BatchPairer::draw_cyclic(std::size_t count) {
  const std::size_t pool = source_drives_ ? nt_ : ns_;
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (stream_pos_ >= stream_.size()) {
      stream_ = rng_.permutation(pool);
      stream_pos_ = 0;
    }
    out.push_back(stream_[stream_pos_++]);
  }
  return out;
}

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> BatchPairer::next_epoch() {
  const std::size_t driver_n = source_drives_ ? ns_ : nt_;
  const auto perm = rng_.permutation(driver_n);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
  for (std::size_t start = 0; start < driver_n; start += static_cast<std::size_t>(n_)) {
    const std::size_t end = std::min(driver_n, start + static_cast<std::size_t>(n_));
    std::vector<std::size_t> drive(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
    auto other = draw_cyclic(drive.size());
    if (source_drives_) out.emplace_back(std::move(drive), std::move(other));
    else out.emplace_back(std::move(other), std::move(drive));
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, Rng& rng) {
  if (n == 0) throw ShapeError("cannot batch an empty set");
  if (batch < 1) throw ShapeError("batch size must be positive");
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(n, s + static_cast<std::size_t>(batch));
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s), perm.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

namespace {

std::vector<int> gather_labels(const TrainSet& d, std::span<const std::size_t> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = d.labels[idx[i]];
  return y;
}

Tensor<float> supervised(const TrainConfig& cfg, const Tensor<float>& logits, std::span<const int> y,
                         std::span<const long> counts) {
  if (cfg.class_weighting) return weighted_cross_entropy(logits, y, counts);
  return ad::softmax_cross_entropy<float>(logits, y);
}

bool uses_source(TrainMode m) { return m == TrainMode::source_only || m == TrainMode::finetune_mixed || m == TrainMode::adapt; }
bool uses_target(TrainMode m) { return m != TrainMode::source_only; }

}  // namespace

Tensor<float> step_loss(const TrainConfig& cfg, const Network<float>& model, const TrainSet& src,
                        std::span<const std::size_t> src_idx, const TrainSet& tgt, std::span<const std::size_t> tgt_idx,
                        Rng& rng, LossParts* parts) {
  LossParts lp;
  Tensor<float> loss;
  switch (cfg.mode) {
    case TrainMode::source_only: {
      const auto y = gather_labels(src, src_idx);
      loss = supervised(cfg, model.forward_logits(src.batch(src_idx), true, rng), y, src.class_counts());
      lp.l_cs = loss.item();
      break;
    }
    case TrainMode::target_only:
    case TrainMode::finetune: {
      const auto y = gather_labels(tgt, tgt_idx);
      loss = supervised(cfg, model.forward_logits(tgt.batch(tgt_idx), true, rng), y, tgt.class_counts());
      lp.l_ct = loss.item();
      break;
    }
    case TrainMode::finetune_mixed: {
      // One batch drawn from the concatenation: source rows, then target rows.
      const TrainSet joined = concat(src.subset(src_idx), tgt.subset(tgt_idx));
      std::vector<std::size_t> all(joined.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      auto counts = src.class_counts();
      const auto tc = tgt.class_counts();
      for (std::size_t c = 0; c < counts.size() && c < tc.size(); ++c) counts[c] += tc[c];
      loss = supervised(cfg, model.forward_logits(joined.batch(all), true, rng), joined.labels, counts);
      lp.l_cs = loss.item();
      break;
    }
    case TrainMode::adapt: {
      const auto ys = gather_labels(src, src_idx);
      const auto yt = gather_labels(tgt, tgt_idx);
      // Both streams go through the single shared parameter set.
      const Tensor<float> zs = model.forward_latent(src.batch(src_idx), true, rng);
      const Tensor<float> zt = model.forward_latent(tgt.batch(tgt_idx), true, rng);
      const Tensor<float> l_cs = supervised(cfg, model.classify(zs), ys, src.class_counts());
      const Tensor<float> l_ct = supervised(cfg, model.classify(zt), yt, tgt.class_counts());
      const Tensor<float> l_da = contrastive_alignment_loss(zs, ys, zt, yt, cfg.margin);
      loss = total_loss(l_cs, l_ct, l_da, cfg.xi);
      lp.l_cs = l_cs.item();
      lp.l_ct = l_ct.item();
      lp.l_da = l_da.item();
      break;
    }
  }
  lp.total = loss.item();
  if (parts) *parts = lp;
  return loss;
}

std::vector<double> predict_proba(const Network<float>& model, const TrainSet& data, int batch) {
  const int K = model.spec().K;
  std::vector<double> out;
  out.reserve(data.size() * static_cast<std::size_t>(K));
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < data.size(); s += static_cast<std::size_t>(batch)) {
    idx.clear();
    for (std::size_t i = s; i < std::min(data.size(), s + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    const auto p = ad::softmax_rows(model.predict_logits(data.batch(idx)));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TrainHistory train(const TrainConfig& cfg, Network<float>& model, const TrainSet& src, const TrainSet& tgt,
                   const TrainSet* val) {
  if (cfg.epochs < 0) throw ShapeError("epochs must be non-negative");
  if (cfg.mode == TrainMode::adapt && !(cfg.xi > 0.0 && cfg.xi < 1.0)) throw ShapeError("xi must lie in (0, 1)");
  if (uses_source(cfg.mode)) {
    if (src.size() == 0) throw ShapeError(std::string(to_string(cfg.mode)) + " needs source data");
    src.validate();
  }
  if (uses_target(cfg.mode)) {
    if (tgt.size() == 0) throw ShapeError(std::string(to_string(cfg.mode)) + " needs target data");
    tgt.validate();
  }
  const Rng root = Rng(cfg.seed).split("train");
  Rng batch_rng = root.split("batches");
  Rng dropout_rng = root.split("dropout");
  if (cfg.mode == TrainMode::finetune && cfg.reinit_classifier) model.reinit_classifier(root.split("reinit").next_u64());

  const bool paired = cfg.mode == TrainMode::adapt || cfg.mode == TrainMode::finetune_mixed;
  std::optional<BatchPairer> pairer;
  std::size_t steps = 0;
  if (paired) {
    pairer.emplace(src.size(), tgt.size(), cfg.batch, batch_rng.split("pairs"));
    steps = pairer->steps_per_epoch();
  } else {
    const std::size_t n = cfg.mode == TrainMode::source_only ? src.size() : tgt.size();
    steps = (n + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
  }
  ad::LrSchedule sched{cfg.zeta_min, cfg.zeta_max,
                       cfg.step_size > 0 ? cfg.step_size : std::max<std::int64_t>(1, 4 * static_cast<std::int64_t>(steps))};

  TrainHistory hist;
  ad::AdamState<float> adam;
  std::int64_t it = 0;
  const std::vector<std::size_t> none;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> plan;
    if (paired) {
      plan = pairer->next_epoch();
    } else if (cfg.mode == TrainMode::source_only) {
      for (auto& b : epoch_batches(src.size(), cfg.batch, batch_rng)) plan.emplace_back(std::move(b), none);
    } else {
      for (auto& b : epoch_batches(tgt.size(), cfg.batch, batch_rng)) plan.emplace_back(none, std::move(b));
    }
    for (const auto& [si, ti] : plan) {
      LossParts parts;
      model.zero_grad();
      Tensor<float> loss = step_loss(cfg, model, src, si, tgt, ti, dropout_rng, &parts);
      if (!std::isfinite(parts.total)) {
        throw NumericError("training diverged: non-finite loss at iteration " + std::to_string(it));
      }
      loss.backward();
      const double lr = ad::triangular_lr(it, sched);
      ad::adam_step<float>(model.parameters(), adam, lr);
      hist.iterations.push_back({it, parts.l_cs, parts.l_ct, parts.l_da, parts.total, lr});
      ++it;
    }
    if (val && val->size() > 0) {
      const auto pred = argmax_rows(predict_proba(model, *val), model.spec().K);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.val_f1 = f1_overall(pred, val->labels, model.spec().K);
      rec.val_accuracy = f1_overall(pred, val->labels, model.spec().K, F1Average::micro);
      hist.epochs.push_back(rec);
    }
  }
  return hist;
}

}  // namespace facemix
