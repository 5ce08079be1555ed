#include <algorithm>
#include <map>
#include <numeric>
#include <fstream>
#include <set>

#include "doctest.h"
#include "facemix/eval.hpp"
#include "facemix/feature_matrix.hpp"
#include "facemix/synth.hpp"
#include "test_util.hpp"

using namespace facemix;

namespace {

std::vector<std::string> subjects(int n, int per_subject = 3) {
  std::vector<std::string> ids;
  for (int s = 0; s < n; ++s)
    for (int r = 0; r < per_subject; ++r) ids.push_back("subj" + std::to_string(s));
  return ids;
}

PipelineData gaussian_data(std::uint64_t seed, int n_source = 150, int n_target = 80) {
  synth::SynthSpec spec;
  spec.seed = seed;
  spec.n_source = n_source;
  spec.n_target = n_target;
  spec.subjects_source = 15;
  spec.subjects_target = 10;
  const auto task = synth::generate_two_domain_gaussians(spec);
  PipelineData d;
  d.K = task.K;
  for (int i = 0; i < task.dim; ++i) d.tabular_descriptors.push_back({FeatureKind::distance, {i, i + 1}, -1});
  for (const auto* rows : {&task.source, &task.target}) {
    for (const auto& r : *rows) {
      DomainData& dd = r.domain == Domain::source ? d.source : d.target;
      dd.info.push_back({r.sample_id, r.subject_id, r.domain, r.label});
      dd.tabular.push_back(r.x);
    }
  }
  return d;
}

PipelineConfig tabular_config() {
  PipelineConfig c;
  c.features = "unused.bin";
  c.samples = "unused.csv";
  c.betamix.enabled = false;
  c.model.kind = NetKind::mlp;
  c.model.hidden = 16;
  c.train.epochs = 6;
  c.train.zeta_max = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("subject-disjoint folds") {
  const auto ids = subjects(10);
  const auto plan = subject_disjoint_folds(ids, 5, 3);
  CHECK(plan.assignment.size() == 10);
  CHECK(plan.fold_sizes() == std::vector<int>{2, 2, 2, 2, 2});

  const auto plan13 = subject_disjoint_folds(subjects(13), 5, 3);
  const auto sizes = plan13.fold_sizes();
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);

  for (int f = 0; f < 5; ++f) {
    const auto sp = split_fold(plan, ids, f);
    CHECK(sp.train.size() + sp.test.size() == ids.size());
    std::set<std::string> tr, te;
    for (auto i : sp.train) tr.insert(ids[i]);
    for (auto i : sp.test) te.insert(ids[i]);
    std::vector<std::string> both;
    std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::back_inserter(both));
    CHECK(both.empty());
    CHECK(te.size() == 2);
  }

  CHECK(subject_disjoint_folds(ids, 5, 3).assignment == plan.assignment);
  CHECK(subject_disjoint_folds(ids, 5, 4).assignment != plan.assignment);
  CHECK_THROWS_AS(subject_disjoint_folds(subjects(4), 5, 1), ShapeError);
  CHECK_THROWS_AS(subject_disjoint_folds(ids, 1, 1), ShapeError);
  CHECK_THROWS_AS(split_fold(plan, ids, 5), ShapeError);
  CHECK_THROWS_AS(plan.fold_of("nobody"), ShapeError);
}

TEST_CASE("pipeline config round trip and validation") {
  nlohmann::json j = {{"seed", 9},
                      {"manifest", "data/manifest.csv"},
                      {"image_size", 16},
                      {"betamix", {{"tau", 0.01}}},
                      {"model", {{"kind", "fusion"}, {"hidden", 8}}},
                      {"train", {{"mode", "finetune"}, {"epochs", 3}}},
                      {"cv", {{"xi_grid", {0.3}}, {"average", "micro"}}}};
  const auto c = pipeline_config_from_json(j, "/base");
  CHECK(c.manifest == "/base/data/manifest.csv");
  CHECK(c.seed == 9);
  CHECK(c.betamix.em.tau == 0.01);
  CHECK(c.model.kind == NetKind::fusion);
  CHECK(c.train.mode == TrainMode::finetune);
  CHECK(c.cv.xi_grid == std::vector<double>{0.3});
  CHECK(c.cv.average == F1Average::micro);
  CHECK(c.cv.outer_k == 5);
  const auto again = pipeline_config_from_json(pipeline_config_to_json(c));
  CHECK(pipeline_config_to_json(again) == pipeline_config_to_json(c));

  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::object()), ParseError);
  j["cv"]["xi_grid"] = nlohmann::json::array();
  CHECK_THROWS_AS(pipeline_config_from_json(j), ParseError);
}

TEST_CASE("sample tables and tabular loading") {
  testing::TempDir dir("eval");
  synth::SynthSpec spec;
  spec.n_source = 30;
  spec.n_target = 20;
  synth::synth_generate(spec, dir.path());
  const auto info = read_sample_table(dir / "samples.csv");
  CHECK(info.size() == 50);
  const auto data = pipeline_data_from_tabular(read_feature_matrix(dir / "features.bin"), info);
  CHECK(data.source.size() == 30);
  CHECK(data.target.size() == 20);
  CHECK(data.K == spec.K);
  CHECK(data.source.tabular[0].size() == static_cast<std::size_t>(spec.dim));

  {
    std::ofstream(dir / "bad.csv") << "sample_id,subject_id,domain,label\na,b,source,x\n";
  }
  CHECK_THROWS_AS(read_sample_table(dir / "bad.csv"), ParseError);
  {
    std::ofstream(dir / "bad2.csv") << "id,label\n";
  }
  CHECK_THROWS_AS(read_sample_table(dir / "bad2.csv"), ParseError);
  {
    std::ofstream(dir / "extra.csv") << "sample_id,subject_id,domain,label\nghost,g0,source,1\n";
  }
  CHECK_THROWS_AS(pipeline_data_from_tabular(read_feature_matrix(dir / "features.bin"), read_sample_table(dir / "extra.csv")),
                  ParseError);
}

TEST_CASE("feature stage standardizes with training statistics only") {
  const auto data = gaussian_data(4);
  auto cfg = tabular_config();
  DomainIndices train;
  for (std::size_t i = 0; i < 50; ++i) train.source.push_back(i);
  const auto st = fit_feature_stage(cfg, data, train);
  CHECK(st.selected.size() == data.tabular_descriptors.size());
  const auto ts = make_trainset(data, st, Domain::source, train.source);
  const int D = ts.feature_dim;
  for (int k = 0; k < D; ++k) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) m += ts.features[i * D + k];
    m /= ts.size();
    for (std::size_t i = 0; i < ts.size(); ++i) v += (ts.features[i * D + k] - m) * (ts.features[i * D + k] - m);
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v / ts.size() - 1.0) < 1e-4);
  }
  cfg.model.kind = NetKind::cnn;
  CHECK_THROWS_AS(fit_feature_stage(cfg, data, train), ShapeError);
}

TEST_CASE("evaluation metrics and report invariants") {
  const auto data = gaussian_data(5);
  auto cfg = tabular_config();
  const auto report = nested_cv(cfg, data);
  REQUIRE(report.folds.size() == 5);
  std::size_t total = 0;
  for (const auto& f : report.folds) {
    CHECK(f.xi.has_value());
    CHECK(f.xi_scores.size() == 3);
    CHECK(std::find(cfg.cv.xi_grid.begin(), cfg.cv.xi_grid.end(), *f.xi) != cfg.cv.xi_grid.end());
    const long sum = std::accumulate(f.target.confusion.begin(), f.target.confusion.end(), 0L);
    CHECK(static_cast<std::size_t>(sum) == f.target.n);
    CHECK(f.target.f1 >= 0.0);
    CHECK(f.target.f1 <= 1.0);
    for (const auto& a : f.target.auc.per_class)
      if (a) CHECK((*a >= 0.0 && *a <= 1.0));
    total += f.target.n;
  }
  CHECK(total == data.target.size());
  const long agg = std::accumulate(report.confusion.begin(), report.confusion.end(), 0L);
  CHECK(static_cast<std::size_t>(agg) == data.target.size());
  const auto j = report_to_json(report);
  CHECK(j["aggregate"]["selected_xi"].size() == 5);
  CHECK(j["folds"][0]["target"]["confusion"].size() == static_cast<std::size_t>(data.K));

  testing::TempDir dir("roc");
  write_roc_csv(dir / "roc.csv", report.folds[0].target.roc);
  std::ifstream in(dir / "roc.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "class,fpr,tpr,threshold");
  CHECK(first.find(",inf") != std::string::npos);
}

TEST_CASE("nested CV is deterministic and honours a single-value grid") {
  const auto data = gaussian_data(6, 100, 60);
  auto cfg = tabular_config();
  cfg.train.epochs = 3;
  cfg.cv.xi_grid = {0.3};
  const auto a = report_to_json(nested_cv(cfg, data)).dump();
  const auto b = report_to_json(nested_cv(cfg, data)).dump();
  CHECK(a == b);
  const auto r = nested_cv(cfg, data);
  for (const auto& f : r.folds) CHECK(*f.xi == 0.3);

  cfg.train.mode = TrainMode::source_only;
  const auto so = nested_cv(cfg, data);
  CHECK_FALSE(so.folds[0].xi.has_value());
  CHECK(so.folds[0].n_train_target == 0);
  cfg.train.mode = TrainMode::finetune;
  CHECK_NOTHROW(nested_cv(cfg, data));
}

TEST_CASE("test folds never feed fitting stages") {
  // Faces exercise topology and BetaMix; tiny sizes keep the fits cheap.
  synth::SynthSpec spec;
  spec.preset = synth::Preset::two_domain_faces;
  spec.n_source = 50;
  spec.n_target = 50;
  spec.subjects_source = 10;
  spec.subjects_target = 10;
  spec.raw_image_size = 32;
  const auto faces = synth::generate_two_domain_faces(spec);
  const auto data = pipeline_data_from_faces(faces, 16);

  PipelineConfig cfg;
  cfg.manifest = "unused.csv";
  cfg.image_size = 16;
  cfg.model.kind = NetKind::fusion;
  cfg.model.conv_channels = {2, 2, 2};
  cfg.model.hidden = 8;
  cfg.train.epochs = 1;
  cfg.cv.xi_grid = {0.3};
  cfg.betamix.em.max_iter = 10;
  // Loose tau so some features survive selection at this tiny N.
  cfg.betamix.em.tau = 0.5;

  std::map<int, std::set<std::string>> test_ids, fit_ids;
  std::map<int, std::set<std::string>> seen_stages;
  LineageObserver obs = [&](std::string_view stage, int fold, const std::vector<std::string>& ids) {
    seen_stages[fold].insert(std::string(stage));
    auto& dst = stage == "test" ? test_ids[fold] : fit_ids[fold];
    dst.insert(ids.begin(), ids.end());
  };
  EvalReport r;
  try {
    r = nested_cv(cfg, data, obs);
  } catch (const ShapeError& e) {
    // An empty selection is legitimate at this scale; fall back to images only.
    MESSAGE("fusion run skipped: " << e.what());
    cfg.betamix.enabled = false;
    test_ids.clear();
    fit_ids.clear();
    r = nested_cv(cfg, data, obs);
  }
  CHECK(r.folds.size() == 5);
  std::set<std::string> all_test;
  for (int f = 0; f < 5; ++f) {
    CHECK(seen_stages[f].count("topology") == 1);
    CHECK(seen_stages[f].count("final_train") == 1);
    CHECK(seen_stages[f].count("inner_val") == 1);
    CHECK_FALSE(test_ids[f].empty());
    std::vector<std::string> leak;
    std::set_intersection(test_ids[f].begin(), test_ids[f].end(), fit_ids[f].begin(), fit_ids[f].end(),
                          std::back_inserter(leak));
    CHECK(leak.empty());
    all_test.insert(test_ids[f].begin(), test_ids[f].end());
  }
  CHECK(all_test.size() == data.source.size() + data.target.size());
}
