#include "facemix/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "facemix/attribution.hpp"
#include "facemix/betamix.hpp"
#include "facemix/common.hpp"
#include "facemix/eval.hpp"
#include "facemix/feature_matrix.hpp"
#include "facemix/json_io.hpp"
#include "facemix/pipeline.hpp"
#include "facemix/synth.hpp"

namespace facemix {

namespace fs = std::filesystem;

namespace {

// Output directory: explicit flag, then FACEMIX_OUT_DIR, then the fallback.
fs::path out_dir_or(const std::string& flag, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FACEMIX_OUT_DIR"); env && *env) return env;
  return fallback;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<betamix::FactorCodes> factor_codes(const FeatureMatrix& fm, const std::vector<SampleInfo>& table) {
  std::map<std::string, const SampleInfo*> by_id;
  for (const auto& s : table) by_id[s.sample_id] = &s;
  std::map<std::pair<int, std::string>, int> subject_code;
  for (const auto& id : fm.sample_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ParseError("sample '" + id + "' missing from the sample table");
    subject_code.emplace(std::make_pair(static_cast<int>(it->second->domain), it->second->subject_id), 0);
  }
  int next = 0;
  for (auto& [k, v] : subject_code) v = next++;
  std::vector<betamix::FactorCodes> codes;
  for (const auto& id : fm.sample_ids) {
    const SampleInfo& s = *by_id.at(id);
    codes.push_back({s.label, s.domain == Domain::target ? 1 : 0, subject_code.at({static_cast<int>(s.domain), s.subject_id})});
  }
  return codes;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParseError("bad number '" + cell + "' in list");
    }
  }
  if (out.empty()) throw ParseError("empty list");
  return out;
}

struct Checkpointed {
  Network<float> model;
  FeatureStage stage;
};

Checkpointed load_trained(const fs::path& dir) {
  Checkpointed c{load_checkpoint(dir), {}};
  const auto extra = checkpoint_extra(dir);
  if (!extra.contains("feature_stage")) throw ParseError("checkpoint has no feature stage: " + dir.string());
  c.stage = feature_stage_from_json(extra["feature_stage"]);
  return c;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) { return cli_dispatch(argc, argv, std::cout, std::cerr); }

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"facemix: landmark and image fusion with domain adaptation", "facemix"};
  app.require_subcommand(1);
  std::function<void()> action;

  // synth generate
  auto* synth_cmd = app.add_subcommand("synth", "Synthetic data generation");
  synth_cmd->require_subcommand(1);
  auto* gen = synth_cmd->add_subcommand("generate", "Write a synthetic preset to disk");
  synth::SynthSpec spec;
  std::string preset = "two_domain_gaussians", gen_out, spec_file;
  gen->add_option("--preset", preset, "planted_correlations | two_domain_gaussians | two_domain_faces");
  gen->add_option("--spec", spec_file, "JSON spec (flags override it)");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", spec.seed);
  gen->add_option("--K", spec.K);
  gen->add_option("--n-source", spec.n_source);
  gen->add_option("--n-target", spec.n_target);
  gen->add_option("--subjects-source", spec.subjects_source);
  gen->add_option("--subjects-target", spec.subjects_target);
  gen->add_option("--shift", spec.shift);
  gen->add_option("--noise", spec.noise);
  gen->add_option("--P", spec.P);
  gen->add_option("--dim", spec.dim);
  gen->add_option("--raw-image-size", spec.raw_image_size);
  gen->callback([&] {
    action = [&] {
      synth::SynthSpec s = spec;
      if (!spec_file.empty()) {
        s = synth::spec_from_json(read_json(spec_file));
        // Explicit flags win over the file.
        for (const auto* opt : gen->get_options()) {
          if (opt->count() == 0) continue;
          const auto name = opt->get_name();
          if (name == "--seed") s.seed = spec.seed;
          if (name == "--K") s.K = spec.K;
          if (name == "--n-source") s.n_source = spec.n_source;
          if (name == "--n-target") s.n_target = spec.n_target;
          if (name == "--subjects-source") s.subjects_source = spec.subjects_source;
          if (name == "--subjects-target") s.subjects_target = spec.subjects_target;
          if (name == "--shift") s.shift = spec.shift;
          if (name == "--noise") s.noise = spec.noise;
          if (name == "--P") s.P = spec.P;
          if (name == "--dim") s.dim = spec.dim;
          if (name == "--raw-image-size") s.raw_image_size = spec.raw_image_size;
        }
        if (gen->get_option("--preset")->count()) s.preset = synth::parse_preset(preset);
      } else {
        s.preset = synth::parse_preset(preset);
      }
      const fs::path dir = out_dir_or(gen_out, "synth");
      const auto primary = synth::synth_generate(s, dir);
      write_json(dir / "synth_spec.json", synth::spec_to_json(s));
      out << primary.string() << '\n';
    };
  });

  // fit-topology
  auto* topo_cmd = app.add_subcommand("fit-topology", "Delaunay topology of the mean aligned landmarks");
  std::string topo_manifest, topo_out;
  int topo_size = 32;
  topo_cmd->add_option("--manifest", topo_manifest, "Face manifest")->required();
  topo_cmd->add_option("--out", topo_out, "Topology JSON")->required();
  topo_cmd->add_option("--image-size", topo_size, "Aligned crop side");
  topo_cmd->callback([&] {
    action = [&] {
      const auto data = pipeline_data_from_faces(load_manifest(topo_manifest), topo_size);
      std::vector<LandmarkSet> lms = data.source.landmarks;
      lms.insert(lms.end(), data.target.landmarks.begin(), data.target.landmarks.end());
      const auto t = fit_reference_topology(lms);
      ensure_parent(topo_out);
      write_json(topo_out, topology_to_json(t));
      out << t.size() << " triangles, hull " << t.hull_size << '\n';
    };
  });

  // extract-features
  auto* ext_cmd = app.add_subcommand("extract-features", "Landmark features of every sample");
  std::string ext_manifest, ext_topo, ext_out;
  int ext_size = 32;
  ext_cmd->add_option("--manifest", ext_manifest, "Face manifest")->required();
  ext_cmd->add_option("--topology", ext_topo, "Topology JSON")->required();
  ext_cmd->add_option("--out", ext_out, "Feature matrix file")->required();
  ext_cmd->add_option("--image-size", ext_size, "Aligned crop side");
  ext_cmd->callback([&] {
    action = [&] {
      const auto ds = load_manifest(ext_manifest);
      const auto topo = topology_from_json(read_json(ext_topo));
      std::vector<std::vector<double>> cols;
      std::vector<std::string> ids;
      for (const auto& s : ds.samples) {
        const auto aligned = align_face(s.image, s.landmarks, ext_size);
        cols.push_back(extract_feature_values(aligned.landmarks, topo));
        ids.push_back(s.sample_id);
      }
      const auto fm = feature_matrix_from_samples(cols, feature_descriptors(kLandmarkCount, topo), ids);
      ensure_parent(ext_out);
      write_feature_matrix(ext_out, fm);
      out << fm.P << " features x " << fm.N << " samples\n";
    };
  });

  // betamix fit | select | sweep
  auto* bm = app.add_subcommand("betamix", "Correlation screening");
  bm->require_subcommand(1);
  std::string bm_features, bm_manifest, bm_out, bm_edges, bm_thresholds = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                                                    bm_config;
  betamix::EmConfig em;
  auto common_bm = [&](CLI::App* c) {
    c->add_option("--features", bm_features, "Feature matrix file")->required();
    c->add_option("--manifest", bm_manifest, "Face manifest or sample table")->required();
    c->add_option("--out", bm_out, "Output JSON")->required();
  };
  auto em_flags = [&](CLI::App* c) {
    c->add_option("--tau", em.tau, "Posterior-null threshold");
    c->add_option("--max-iter", em.max_iter);
    c->add_option("--tol", em.tol);
  };
  auto* bm_fit = bm->add_subcommand("fit", "Fit the mixture and write the fit JSON");
  common_bm(bm_fit);
  em_flags(bm_fit);
  bm_fit->add_option("--edges", bm_edges, "Also write the nonnull edge list CSV");
  bm_fit->callback([&] {
    action = [&] {
      const auto fm = read_feature_matrix(bm_features);
      const auto design = betamix::build_design_matrix(fm, factor_codes(fm, read_sample_table(bm_manifest)));
      const auto stats = betamix::pairwise_lambda(design);
      const auto fit = betamix::betamix_em(stats, em);
      ensure_parent(bm_out);
      write_json(bm_out, betamix::fit_to_json(fit));
      if (!bm_edges.empty()) betamix::write_edges_csv(bm_edges, betamix::build_graph(fit, em.tau, &stats));
      out << "p0 " << fit.p0 << ", Q " << (fit.Q ? std::to_string(*fit.Q) : "none") << '\n';
    };
  });
  auto* bm_sel = bm->add_subcommand("select", "Expression-only features");
  common_bm(bm_sel);
  em_flags(bm_sel);
  bm_sel->add_option("--edges", bm_edges, "Use this edge list instead of fitting");
  bm_sel->callback([&] {
    action = [&] {
      const auto fm = read_feature_matrix(bm_features);
      betamix::FeatureGraph g(fm.P);
      if (!bm_edges.empty()) {
        g = betamix::read_edges_csv(bm_edges, fm.P);
      } else {
        const auto design = betamix::build_design_matrix(fm, factor_codes(fm, read_sample_table(bm_manifest)));
        const auto stats = betamix::pairwise_lambda(design);
        g = betamix::build_graph(betamix::betamix_em(stats, em), em.tau, &stats);
      }
      const auto sel = betamix::select_expression_features(g);
      ensure_parent(bm_out);
      write_json(bm_out, betamix::selection_to_json(sel, fm.descriptors));
      out << sel.size() << " features selected\n";
    };
  });
  auto* bm_sweep = bm->add_subcommand("sweep", "Selection size (and holdout F1) across correlation thresholds");
  common_bm(bm_sweep);
  bm_sweep->add_option("--thresholds", bm_thresholds, "Comma-separated |rho| thresholds");
  bm_sweep->add_option("--config", bm_config, "Pipeline config; adds a holdout F1 per threshold");
  bm_sweep->callback([&] {
    action = [&] {
      const auto thresholds = parse_list(bm_thresholds);
      const auto fm = read_feature_matrix(bm_features);
      const auto design = betamix::build_design_matrix(fm, factor_codes(fm, read_sample_table(bm_manifest)));
      const auto sweep = betamix::threshold_sweep(design, thresholds);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& e : sweep) j.push_back({{"threshold", e.threshold}, {"count", e.features.size()}, {"features", e.features}});
      if (!bm_config.empty()) {
        // Holdout: outer fold 0 of the config's subject split; thresholds are
        // re-applied on the training part only.
        PipelineConfig cfg = load_pipeline_config(bm_config);
        cfg.betamix.enabled = false;
        if (cfg.model.kind == NetKind::cnn) throw ShapeError("the sweep needs a model with a feature branch");
        const auto data = load_pipeline_data(cfg);
        const Rng root = Rng(cfg.seed).split("sweep");
        const auto sp = split_fold(subject_disjoint_folds(data.source.subject_ids(), cfg.cv.outer_k, root.split("source").next_u64()),
                                   data.source.subject_ids(), 0);
        const auto tp = split_fold(subject_disjoint_folds(data.target.subject_ids(), cfg.cv.outer_k, root.split("target").next_u64()),
                                   data.target.subject_ids(), 0);
        const FeatureStage full = fit_feature_stage(cfg, data, {sp.train, tp.train});
        // Design matrix of the training samples for the threshold rule.
        auto rows = candidate_features(data, full, Domain::source, sp.train);
        auto trows = candidate_features(data, full, Domain::target, tp.train);
        rows.insert(rows.end(), trows.begin(), trows.end());
        std::vector<betamix::FactorCodes> codes;
        for (std::size_t i : sp.train) codes.push_back({data.source.info[i].label, 0, 0});
        for (std::size_t i : tp.train) codes.push_back({data.target.info[i].label, 1, 0});
        const auto train_sweep = betamix::threshold_sweep(betamix::build_design_matrix(rows, codes), thresholds);
        for (std::size_t t = 0; t < train_sweep.size(); ++t) {
          const auto& feats = train_sweep[t].features;
          j[t]["train_count"] = feats.size();
          if (feats.empty()) {
            j[t]["target_f1"] = nullptr;
            continue;
          }
          FeatureStage st = full;
          st.selected.clear();
          st.mean.clear();
          st.scale.clear();
          for (int f : feats) {
            const auto k = static_cast<std::size_t>(f);
            st.selected.push_back(f);
            st.mean.push_back(full.mean[k]);
            st.scale.push_back(full.scale[k]);
          }
          const auto ns = resolve_network_spec(cfg, data, st);
          TrainConfig tc = cfg.train;
          tc.seed = root.split("train").next_u64();
          const auto net = fit_model(ns, tc, make_trainset(data, st, Domain::source, sp.train),
                                     make_trainset(data, st, Domain::target, tp.train));
          j[t]["target_f1"] = evaluate(net, make_trainset(data, st, Domain::target, tp.test), cfg.cv.average).f1;
        }
      }
      ensure_parent(bm_out);
      write_json(bm_out, j);
      out << sweep.size() << " thresholds\n";
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on all configured data");
  std::string train_config, train_mode, train_out;
  train_cmd->add_option("--config", train_config, "Pipeline config JSON")->required();
  train_cmd->add_option("--mode", train_mode, "source_only | target_only | finetune | finetune_mixed | adapt");
  train_cmd->add_option("--out", train_out, "Model directory");
  train_cmd->callback([&] {
    action = [&] {
      PipelineConfig cfg = load_pipeline_config(train_config);
      if (!train_mode.empty()) cfg.train.mode = parse_train_mode(train_mode);
      const auto data = load_pipeline_data(cfg);
      const auto all = all_indices(data);
      const auto stage = fit_feature_stage(cfg, data, all);
      const auto ns = resolve_network_spec(cfg, data, stage);
      TrainConfig tc = cfg.train;
      tc.seed = Rng(cfg.seed).split("train").next_u64();
      TrainHistory hist;
      const auto net = fit_model(ns, tc, make_trainset(data, stage, Domain::source, all.source),
                                 make_trainset(data, stage, Domain::target, all.target), &hist);
      const fs::path dir = out_dir_or(train_out, cfg.out_dir / "model");
      nlohmann::json extra;
      extra["feature_stage"] = feature_stage_to_json(stage);
      extra["train"] = train_config_to_json(tc);
      extra["K"] = data.K;
      save_checkpoint(dir, net, extra);
      write_history_csv(dir / "history.csv", hist);
      if (stage.fit) write_json(dir / "betamix_fit.json", betamix::fit_to_json(*stage.fit));
      out << dir.string() << '\n';
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a trained model on one domain");
  std::string eval_model, eval_config, eval_out, eval_domain = "target";
  eval_cmd->add_option("--model", eval_model, "Model directory")->required();
  eval_cmd->add_option("--config", eval_config, "Pipeline config naming the data")->required();
  eval_cmd->add_option("--domain", eval_domain, "source | target");
  eval_cmd->add_option("--out", eval_out, "Metrics JSON");
  eval_cmd->callback([&] {
    action = [&] {
      const PipelineConfig cfg = load_pipeline_config(eval_config);
      const auto data = load_pipeline_data(cfg);
      const auto ck = load_trained(eval_model);
      const Domain d = parse_domain(eval_domain);
      const auto idx = d == Domain::source ? all_indices(data).source : all_indices(data).target;
      auto set = make_trainset(data, ck.stage, d, idx);
      set.K = ck.model.spec().K;
      const auto m = evaluate(ck.model, set, cfg.cv.average);
      const fs::path file = eval_out.empty() ? out_dir_or("", cfg.out_dir) / "eval.json" : fs::path(eval_out);
      ensure_parent(file);
      auto j = test_metrics_to_json(m, set.K);
      j["domain"] = eval_domain;
      write_json(file, j);
      fs::path roc = file;
      roc.replace_extension(".roc.csv");
      write_roc_csv(roc, m.roc);
      out << "F1 " << m.f1 << '\n';
    };
  });

  // cv run
  auto* cv_cmd = app.add_subcommand("cv", "Cross-validation");
  cv_cmd->require_subcommand(1);
  auto* cv_run = cv_cmd->add_subcommand("run", "Nested subject-disjoint cross-validation");
  std::string cv_config, cv_out;
  cv_run->add_option("--config", cv_config, "Pipeline config JSON")->required();
  cv_run->add_option("--out", cv_out, "Output directory");
  cv_run->callback([&] {
    action = [&] {
      const PipelineConfig cfg = load_pipeline_config(cv_config);
      const auto data = load_pipeline_data(cfg);
      const auto report = nested_cv(cfg, data);
      const fs::path dir = out_dir_or(cv_out, cfg.out_dir);
      fs::create_directories(dir);
      write_json(dir / "eval_report.json", report_to_json(report));
      for (const auto& f : report.folds) write_roc_csv(dir / ("roc_fold" + std::to_string(f.fold) + ".csv"), f.target.roc);
      out << "mean F1 " << report.mean_f1 << " (sd " << report.sd_f1 << ")\n";
    };
  });

  // attribute
  auto* attr_cmd = app.add_subcommand("attribute", "Expected-gradients attribution and feature ranking");
  std::string attr_model, attr_config, attr_out, attr_domain = "target";
  int attr_samples = 256, attr_baselines = 16, attr_count = 20, attr_top = 10;
  std::optional<int> attr_class;
  attr_cmd->add_option("--model", attr_model, "Model directory")->required();
  attr_cmd->add_option("--config", attr_config, "Pipeline config naming the data")->required();
  attr_cmd->add_option("--domain", attr_domain, "Domain of the attributed samples");
  attr_cmd->add_option("--samples", attr_samples, "Monte-Carlo samples per input");
  attr_cmd->add_option("--baselines", attr_baselines, "Baseline count");
  attr_cmd->add_option("--count", attr_count, "Number of attributed inputs");
  attr_cmd->add_option("--class", attr_class, "Class to attribute (default: predicted)");
  attr_cmd->add_option("--top", attr_top, "Ranked features to report");
  attr_cmd->add_option("--out", attr_out, "Output directory");
  attr_cmd->callback([&] {
    action = [&] {
      const PipelineConfig cfg = load_pipeline_config(attr_config);
      const auto data = load_pipeline_data(cfg);
      const auto ck = load_trained(attr_model);
      const auto all = all_indices(data);
      const Domain d = parse_domain(attr_domain);
      auto set = make_trainset(data, ck.stage, d, d == Domain::source ? all.source : all.target);
      auto pool = concat(make_trainset(data, ck.stage, Domain::source, all.source), set);
      Rng rng = Rng(cfg.seed).split("attribute");
      const auto base = sample_baselines(pool, attr_baselines, rng);
      const fs::path dir = out_dir_or(attr_out, cfg.out_dir / "attribution");
      fs::create_directories(dir);
      std::vector<Attribution> attrs;
      std::vector<FeatureDescriptor> desc;
      for (int f : ck.stage.selected) desc.push_back(ck.stage.descriptors.at(static_cast<std::size_t>(f)));
      nlohmann::json per_sample = nlohmann::json::array();
      const std::size_t n = std::min(set.size(), static_cast<std::size_t>(std::max(attr_count, 0)));
      for (std::size_t i = 0; i < n; ++i) {
        attrs.push_back(expected_gradients(ck.model, input_of(set, i), base, attr_class, attr_samples, rng));
        auto j = attribution_to_json(attrs.back(), desc);
        j["sample_id"] = set.sample_ids[i];
        per_sample.push_back(j);
        if (attrs.back().image_size > 0) write_attribution_heatmap(dir / (set.sample_ids[i] + ".pgm"), attrs.back());
      }
      write_json(dir / "attributions.json", per_sample);
      if (!desc.empty() && !attrs.empty()) {
        auto ranking = rank_landmark_features(attrs, desc);
        if (ranking.size() > static_cast<std::size_t>(attr_top)) ranking.resize(static_cast<std::size_t>(attr_top));
        // Report candidate-feature indices rather than positions in the selection.
        for (auto& r : ranking) r.index = ck.stage.selected[static_cast<std::size_t>(r.index)];
        write_json(dir / "ranking.json", ranking_to_json(ranking));
      }
      out << n << " samples attributed\n";
    };
  });

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }
  if (!action) {
    err << app.help();
    return 2;
  }
  try {
    action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace facemix
