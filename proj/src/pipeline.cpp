#include "facemix/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "facemix/common.hpp"
#include "facemix/feature_matrix.hpp"
#include "facemix/json_io.hpp"
#include "facemix/rng.hpp"

namespace facemix {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const nlohmann::json& j, const char* key, const fs::path& base) {
  if (!j.contains(key)) return {};
  fs::path p = j[key].get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ParseError("pipeline config must be a JSON object");
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.manifest = resolve(j, "manifest", base_dir);
  c.features = resolve(j, "features", base_dir);
  c.samples = resolve(j, "samples", base_dir);
  if (j.contains("out_dir")) c.out_dir = resolve(j, "out_dir", base_dir);
  c.image_size = j.value("image_size", c.image_size);
  c.standardize = j.value("standardize", c.standardize);
  if (j.contains("betamix")) {
    const auto& b = j["betamix"];
    c.betamix.enabled = b.value("enabled", c.betamix.enabled);
    c.betamix.em.tau = b.value("tau", c.betamix.em.tau);
    c.betamix.em.max_iter = b.value("max_iter", c.betamix.em.max_iter);
    c.betamix.em.tol = b.value("tol", c.betamix.em.tol);
  }
  if (j.contains("model")) c.model = network_spec_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("cv")) {
    const auto& v = j["cv"];
    c.cv.outer_k = v.value("outer_k", c.cv.outer_k);
    c.cv.inner_k = v.value("inner_k", c.cv.inner_k);
    if (v.contains("xi_grid")) c.cv.xi_grid = v["xi_grid"].get<std::vector<double>>();
    if (v.contains("average")) c.cv.average = parse_f1_average(v["average"].get<std::string>());
  }
  if (c.manifest.empty() && (c.features.empty() || c.samples.empty()))
    throw ParseError("config needs either 'manifest' or both 'features' and 'samples'");
  if (c.cv.xi_grid.empty()) throw ParseError("cv.xi_grid must not be empty");
  return c;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  if (!c.manifest.empty()) j["manifest"] = c.manifest.string();
  if (!c.features.empty()) j["features"] = c.features.string();
  if (!c.samples.empty()) j["samples"] = c.samples.string();
  j["out_dir"] = c.out_dir.string();
  j["image_size"] = c.image_size;
  j["standardize"] = c.standardize;
  j["betamix"] = {{"enabled", c.betamix.enabled},
                  {"tau", c.betamix.em.tau},
                  {"max_iter", c.betamix.em.max_iter},
                  {"tol", c.betamix.em.tol}};
  j["model"] = spec_to_json(c.model);
  j["train"] = train_config_to_json(c.train);
  j["cv"] = {{"outer_k", c.cv.outer_k},
             {"inner_k", c.cv.inner_k},
             {"xi_grid", c.cv.xi_grid},
             {"average", to_string(c.cv.average)}};
  return j;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return pipeline_config_from_json(read_json(path), path.parent_path());
}

std::vector<SampleInfo> read_sample_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,subject_id,domain,label", 0) != 0)
    throw ParseError("bad sample table header in " + path.string());
  std::vector<SampleInfo> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 4) throw ParseError("expected at least 4 columns", row);
    SampleInfo s;
    s.sample_id = f[0];
    s.subject_id = f[1];
    try {
      s.domain = parse_domain(f[2]);
      std::size_t used = 0;
      s.label = std::stoi(f[3], &used);
      if (used != f[3].size()) throw ParseError("bad label '" + f[3] + "'", row);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("bad label or domain", row);
    }
    if (s.label < 0) throw ParseError("negative label", row);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> DomainData::sample_ids(std::span<const std::size_t> idx) const {
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(info.at(i).sample_id);
  return out;
}

std::vector<std::string> DomainData::subject_ids() const {
  std::vector<std::string> out;
  out.reserve(info.size());
  for (const auto& s : info) out.push_back(s.subject_id);
  return out;
}

PipelineData pipeline_data_from_faces(const Dataset& data, int image_size) {
  if (image_size < 8) throw ShapeError("image_size must be at least 8");
  PipelineData out;
  out.image_size = image_size;
  int max_label = -1;
  for (const auto& s : data.samples) {
    DomainData& d = s.domain == Domain::source ? out.source : out.target;
    AlignedFace a = align_face(s.image, s.landmarks, image_size);
    d.info.push_back({s.sample_id, s.subject_id, s.domain, s.label});
    d.images.push_back(std::move(a.image));
    d.landmarks.push_back(a.landmarks);
    max_label = std::max(max_label, s.label);
  }
  out.K = std::max(data.K, max_label + 1);
  return out;
}

PipelineData pipeline_data_from_tabular(const FeatureMatrix& features, const std::vector<SampleInfo>& samples) {
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < features.sample_ids.size(); ++c) column.emplace(features.sample_ids[c], c);
  PipelineData out;
  out.tabular_descriptors = features.descriptors;
  int max_label = -1;
  for (const auto& s : samples) {
    const auto it = column.find(s.sample_id);
    if (it == column.end()) throw ParseError("sample '" + s.sample_id + "' has no feature column");
    DomainData& d = s.domain == Domain::source ? out.source : out.target;
    d.info.push_back(s);
    d.tabular.push_back(features.column(it->second));
    max_label = std::max(max_label, s.label);
  }
  out.K = max_label + 1;
  return out;
}

PipelineData load_pipeline_data(const PipelineConfig& config) {
  if (!config.manifest.empty()) return pipeline_data_from_faces(load_manifest(config.manifest), config.image_size);
  return pipeline_data_from_tabular(read_feature_matrix(config.features), read_sample_table(config.samples));
}

DomainIndices all_indices(const PipelineData& data) {
  DomainIndices r;
  r.source.resize(data.source.size());
  r.target.resize(data.target.size());
  std::iota(r.source.begin(), r.source.end(), std::size_t{0});
  std::iota(r.target.begin(), r.target.end(), std::size_t{0});
  return r;
}

namespace {

std::vector<std::string> lineage_ids(const PipelineData& data, const DomainIndices& idx) {
  auto ids = data.source.sample_ids(idx.source);
  auto t = data.target.sample_ids(idx.target);
  ids.insert(ids.end(), t.begin(), t.end());
  return ids;
}

void notify(const LineageObserver& obs, std::string_view stage, int fold, const PipelineData& data,
            const DomainIndices& idx) {
  if (obs) obs(stage, fold, lineage_ids(data, idx));
}

}  // namespace

std::vector<std::vector<double>> candidate_features(const PipelineData& data, const FeatureStage& stage, Domain d,
                                                    std::span<const std::size_t> idx) {
  const DomainData& dd = data.domain(d);
  std::vector<std::vector<double>> out(idx.size());
  if (dd.has_faces()) {
    if (!stage.topology) throw Error("face features need a fitted topology");
    parallel_for(idx.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) out[i] = extract_feature_values(dd.landmarks.at(idx[i]), *stage.topology);
    });
  } else {
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = dd.tabular.at(idx[i]);
  }
  return out;
}

FeatureStage fit_feature_stage(const PipelineConfig& config, const PipelineData& data, const DomainIndices& train,
                               const LineageObserver& observer, int fold) {
  const NetKind kind = config.model.kind;
  FeatureStage st;
  st.uses_images = kind != NetKind::mlp;
  st.uses_features = kind != NetKind::cnn;
  if (st.uses_images && !data.has_faces()) throw ShapeError("image models need face data");
  if (!st.uses_features) return st;

  if (data.has_faces()) {
    notify(observer, "topology", fold, data, train);
    std::vector<LandmarkSet> lms;
    for (std::size_t i : train.source) lms.push_back(data.source.landmarks[i]);
    for (std::size_t i : train.target) lms.push_back(data.target.landmarks[i]);
    if (lms.empty()) throw ShapeError("no training samples for topology fitting");
    st.topology = fit_reference_topology(lms);
    st.descriptors = feature_descriptors(kLandmarkCount, *st.topology);
  } else {
    st.descriptors = data.tabular_descriptors;
  }

  auto rows = candidate_features(data, st, Domain::source, train.source);
  {
    auto t = candidate_features(data, st, Domain::target, train.target);
    rows.insert(rows.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  const std::size_t P = st.descriptors.size();

  if (config.betamix.enabled) {
    notify(observer, "betamix", fold, data, train);
    // Identity codes index (domain, subject) pairs in sorted order.
    std::map<std::pair<int, std::string>, int> subject_code;
    auto add_subjects = [&](const DomainData& d, const std::vector<std::size_t>& idx) {
      for (std::size_t i : idx) subject_code.emplace(std::make_pair(static_cast<int>(d.info[i].domain), d.info[i].subject_id), 0);
    };
    add_subjects(data.source, train.source);
    add_subjects(data.target, train.target);
    int next = 0;
    for (auto& [key, code] : subject_code) code = next++;
    std::vector<betamix::FactorCodes> codes;
    auto add_codes = [&](const DomainData& d, const std::vector<std::size_t>& idx) {
      for (std::size_t i : idx) {
        const auto& s = d.info[i];
        codes.push_back({s.label, s.domain == Domain::target ? 1 : 0,
                         subject_code.at({static_cast<int>(s.domain), s.subject_id})});
      }
    };
    add_codes(data.source, train.source);
    add_codes(data.target, train.target);
    const auto design = betamix::build_design_matrix(rows, codes);
    const auto stats = betamix::pairwise_lambda(design);
    st.fit = betamix::betamix_em(stats, config.betamix.em);
    const auto graph = betamix::build_graph(*st.fit, config.betamix.em.tau, &stats);
    const auto sel = betamix::select_expression_features(graph);
    st.selected.assign(sel.begin(), sel.end());
  } else {
    st.selected.resize(P);
    std::iota(st.selected.begin(), st.selected.end(), 0);
  }

  const std::size_t D = st.selected.size();
  st.mean.assign(D, 0.0);
  st.scale.assign(D, 1.0);
  if (config.standardize && D > 0 && !rows.empty()) {
    notify(observer, "standardize", fold, data, train);
    const double n = static_cast<double>(rows.size());
    for (std::size_t k = 0; k < D; ++k) {
      const auto f = static_cast<std::size_t>(st.selected[k]);
      double m = 0;
      for (const auto& r : rows) m += r[f];
      m /= n;
      double v = 0;
      for (const auto& r : rows) v += (r[f] - m) * (r[f] - m);
      const double sd = std::sqrt(v / n);
      st.mean[k] = m;
      st.scale[k] = sd > 1e-12 ? sd : 1.0;
    }
  }
  return st;
}

TrainSet make_trainset(const PipelineData& data, const FeatureStage& stage, Domain d,
                       std::span<const std::size_t> idx) {
  const DomainData& dd = data.domain(d);
  TrainSet ts;
  ts.K = data.K;
  for (std::size_t i : idx) {
    ts.labels.push_back(dd.info.at(i).label);
    ts.sample_ids.push_back(dd.info[i].sample_id);
    ts.subject_ids.push_back(dd.info[i].subject_id);
  }
  if (stage.uses_images) {
    if (!dd.has_faces()) throw ShapeError("image models need face data");
    ts.image_size = data.image_size;
    const std::size_t px = static_cast<std::size_t>(data.image_size) * data.image_size;
    ts.images.reserve(idx.size() * px);
    for (std::size_t i : idx) {
      const auto& im = dd.images[i];
      if (im.pixels.size() != px) throw ShapeError("aligned image has the wrong size");
      ts.images.insert(ts.images.end(), im.pixels.begin(), im.pixels.end());
    }
  }
  if (stage.uses_features) {
    const std::size_t D = stage.selected.size();
    ts.feature_dim = static_cast<int>(D);
    ts.features.reserve(idx.size() * D);
    const auto rows = candidate_features(data, stage, d, idx);
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < D; ++k)
        ts.features.push_back(static_cast<float>((r.at(stage.selected[k]) - stage.mean[k]) / stage.scale[k]));
    }
  }
  return ts;
}

NetworkSpec resolve_network_spec(const PipelineConfig& config, const PipelineData& data, const FeatureStage& stage) {
  NetworkSpec s = config.model;
  s.K = data.K;
  s.image_size = s.uses_image() ? data.image_size : 0;
  s.feature_dim = s.uses_features() ? static_cast<int>(stage.selected.size()) : 0;
  s.validate();
  return s;
}

Network<float> fit_model(const NetworkSpec& spec, const TrainConfig& cfg, const TrainSet& src, const TrainSet& tgt,
                         TrainHistory* history) {
  Network<float> net(spec, Rng(cfg.seed).split("model").next_u64());
  TrainHistory h;
  if (cfg.mode == TrainMode::finetune) {
    TrainConfig pre = cfg;
    pre.mode = TrainMode::source_only;
    pre.seed = Rng(cfg.seed).split("pretrain").next_u64();
    h = train(pre, net, src, tgt);
  }
  TrainHistory rest = train(cfg, net, src, tgt);
  const std::int64_t offset = h.iterations.empty() ? 0 : h.iterations.back().iter + 1;
  for (auto r : rest.iterations) {
    r.iter += offset;
    h.iterations.push_back(r);
  }
  h.epochs.insert(h.epochs.end(), rest.epochs.begin(), rest.epochs.end());
  if (history) *history = std::move(h);
  return net;
}

nlohmann::json feature_stage_to_json(const FeatureStage& s) {
  nlohmann::json j;
  j["uses_images"] = s.uses_images;
  j["uses_features"] = s.uses_features;
  if (s.topology) j["topology"] = topology_to_json(*s.topology);
  auto desc = nlohmann::json::array();
  for (const auto& d : s.descriptors) desc.push_back(descriptor_to_json(d));
  j["descriptors"] = desc;
  j["selected"] = s.selected;
  j["mean"] = s.mean;
  j["scale"] = s.scale;
  if (s.fit) {
    j["Q"] = s.fit->Q ? nlohmann::json(*s.fit->Q) : nlohmann::json(nullptr);
    j["rho_min"] = s.fit->rho_min ? nlohmann::json(*s.fit->rho_min) : nlohmann::json(nullptr);
  }
  return j;
}

FeatureStage feature_stage_from_json(const nlohmann::json& j) {
  FeatureStage s;
  s.uses_images = j.at("uses_images").get<bool>();
  s.uses_features = j.at("uses_features").get<bool>();
  if (j.contains("topology")) s.topology = topology_from_json(j["topology"]);
  for (const auto& d : j.at("descriptors")) s.descriptors.push_back(descriptor_from_json(d));
  s.selected = j.at("selected").get<std::vector<int>>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.mean.size() != s.selected.size() || s.scale.size() != s.selected.size())
    throw ParseError("feature stage scaling does not match the selection");
  for (int f : s.selected)
    if (f < 0 || static_cast<std::size_t>(f) >= s.descriptors.size()) throw ParseError("selected feature out of range");
  return s;
}

}  // namespace facemix
