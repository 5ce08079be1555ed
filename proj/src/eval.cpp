#include "facemix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

#include "facemix/common.hpp"
#include "facemix/rng.hpp"

namespace facemix {

int FoldPlan::fold_of(const std::string& subject) const {
  const auto it = assignment.find(subject);
  if (it == assignment.end()) throw ShapeError("subject '" + subject + "' is not in the fold plan");
  return it->second;
}

std::vector<int> FoldPlan::fold_sizes() const {
  std::vector<int> n(static_cast<std::size_t>(k), 0);
  for (const auto& [s, f] : assignment) ++n[static_cast<std::size_t>(f)];
  return n;
}

FoldPlan subject_disjoint_folds(std::span<const std::string> subject_ids, int k, std::uint64_t seed) {
  if (k < 2) throw ShapeError("need at least 2 folds");
  std::set<std::string> distinct(subject_ids.begin(), subject_ids.end());
  if (distinct.size() < static_cast<std::size_t>(k))
    throw ShapeError("only " + std::to_string(distinct.size()) + " subjects for " + std::to_string(k) + " folds");
  std::vector<std::string> subjects(distinct.begin(), distinct.end());
  Rng rng(seed);
  rng.shuffle(subjects);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < subjects.size(); ++i) plan.assignment[subjects[i]] = static_cast<int>(i % k);
  return plan;
}

FoldPlan subject_disjoint_folds(const Dataset& data, int k, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : data.samples) ids.push_back(s.subject_id);
  return subject_disjoint_folds(ids, k, seed);
}

FoldSplit split_fold(const FoldPlan& plan, std::span<const std::string> subject_ids, int fold) {
  if (fold < 0 || fold >= plan.k) throw ShapeError("fold index out of range");
  FoldSplit s;
  for (std::size_t i = 0; i < subject_ids.size(); ++i) (plan.fold_of(subject_ids[i]) == fold ? s.test : s.train).push_back(i);
  return s;
}

TestMetrics evaluate(const Network<float>& model, const TrainSet& data, F1Average average) {
  if (data.size() == 0) throw ShapeError("cannot evaluate on an empty set");
  const auto proba = predict_proba(model, data);
  const auto pred = argmax_rows(proba, data.K);
  TestMetrics m;
  m.n = data.size();
  m.f1 = f1_overall(pred, data.labels, data.K, average);
  m.per_class_f1 = per_class_f1(pred, data.labels, data.K);
  m.auc = roc_auc_ovr(proba, data.labels, data.K);
  m.confusion = confusion(pred, data.labels, data.K);
  m.roc = roc_curves(proba, data.labels, data.K);
  return m;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json matrix(const std::vector<long>& m, int K) {
  auto out = nlohmann::json::array();
  for (int r = 0; r < K; ++r)
    out.push_back(std::vector<long>(m.begin() + static_cast<long>(r) * K, m.begin() + static_cast<long>(r + 1) * K));
  return out;
}

}  // namespace

nlohmann::json test_metrics_to_json(const TestMetrics& m, int K) {
  nlohmann::json j;
  j["n"] = m.n;
  j["f1"] = m.f1;
  j["per_class_f1"] = m.per_class_f1;
  auto auc = nlohmann::json::array();
  for (const auto& a : m.auc.per_class) auc.push_back(opt(a));
  j["per_class_auc"] = auc;
  j["macro_auc"] = opt(m.auc.macro);
  j["auc_classes_excluded"] = m.auc.any_excluded;
  j["confusion"] = matrix(m.confusion, K);
  return j;
}

void aggregate(EvalReport& r) {
  const std::size_t n = r.folds.size();
  const auto K = static_cast<std::size_t>(r.K);
  r.mean_f1 = r.sd_f1 = 0;
  r.mean_per_class_f1.assign(K, 0.0);
  r.mean_per_class_auc.assign(K, std::nullopt);
  r.mean_macro_auc.reset();
  r.confusion.assign(K * K, 0);
  r.mean_source_f1.reset();
  if (n == 0) return;
  std::vector<double> auc_sum(K, 0.0);
  std::vector<int> auc_n(K, 0);
  double macro_sum = 0, src_sum = 0;
  int macro_n = 0, src_n = 0;
  for (const auto& f : r.folds) {
    r.mean_f1 += f.target.f1;
    for (std::size_t c = 0; c < K; ++c) {
      r.mean_per_class_f1[c] += f.target.per_class_f1[c];
      if (f.target.auc.per_class[c]) {
        auc_sum[c] += *f.target.auc.per_class[c];
        ++auc_n[c];
      }
    }
    if (f.target.auc.macro) {
      macro_sum += *f.target.auc.macro;
      ++macro_n;
    }
    for (std::size_t i = 0; i < K * K; ++i) r.confusion[i] += f.target.confusion[i];
    if (f.source) {
      src_sum += f.source->f1;
      ++src_n;
    }
  }
  r.mean_f1 /= static_cast<double>(n);
  for (auto& v : r.mean_per_class_f1) v /= static_cast<double>(n);
  for (std::size_t c = 0; c < K; ++c)
    if (auc_n[c]) r.mean_per_class_auc[c] = auc_sum[c] / auc_n[c];
  if (macro_n) r.mean_macro_auc = macro_sum / macro_n;
  if (src_n) r.mean_source_f1 = src_sum / src_n;
  if (n > 1) {
    double ss = 0;
    for (const auto& f : r.folds) ss += (f.target.f1 - r.mean_f1) * (f.target.f1 - r.mean_f1);
    r.sd_f1 = std::sqrt(ss / static_cast<double>(n - 1));
  }
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["K"] = r.K;
  j["f1_average"] = to_string(r.average);
  j["mode"] = r.mode;
  j["model"] = r.model;
  j["seed"] = r.seed;
  auto folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json fj;
    fj["fold"] = f.fold;
    fj["selected_xi"] = opt(f.xi);
    fj["xi_scores"] = f.xi_scores;
    fj["n_train_source"] = f.n_train_source;
    fj["n_train_target"] = f.n_train_target;
    fj["feature_count"] = f.feature_count;
    fj["target"] = test_metrics_to_json(f.target, r.K);
    fj["source"] = f.source ? test_metrics_to_json(*f.source, r.K) : nlohmann::json(nullptr);
    folds.push_back(fj);
  }
  j["folds"] = folds;
  nlohmann::json agg;
  agg["mean_f1"] = r.mean_f1;
  agg["sd_f1"] = r.sd_f1;
  agg["mean_per_class_f1"] = r.mean_per_class_f1;
  auto auc = nlohmann::json::array();
  for (const auto& a : r.mean_per_class_auc) auc.push_back(opt(a));
  agg["mean_per_class_auc"] = auc;
  agg["mean_macro_auc"] = opt(r.mean_macro_auc);
  agg["confusion"] = matrix(r.confusion, r.K);
  agg["mean_source_f1"] = opt(r.mean_source_f1);
  auto xis = nlohmann::json::array();
  for (const auto& f : r.folds) xis.push_back(opt(f.xi));
  agg["selected_xi"] = xis;
  j["aggregate"] = agg;
  return j;
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> points) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "class,fpr,tpr,threshold\n" << std::setprecision(17);
  for (const auto& p : points) {
    out << p.cls << ',' << p.fpr << ',' << p.tpr << ',';
    if (std::isinf(p.threshold))
      out << "inf";
    else
      out << p.threshold;
    out << '\n';
  }
}

namespace {

std::vector<std::size_t> pick(const std::vector<std::size_t>& base, const std::vector<std::size_t>& local) {
  std::vector<std::size_t> out;
  out.reserve(local.size());
  for (std::size_t i : local) out.push_back(base[i]);
  return out;
}

std::vector<std::string> subjects_of(const DomainData& d, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(d.info[i].subject_id);
  return out;
}

std::vector<std::string> ids_of(const PipelineData& data, const DomainIndices& idx) {
  auto ids = data.source.sample_ids(idx.source);
  auto t = data.target.sample_ids(idx.target);
  ids.insert(ids.end(), t.begin(), t.end());
  return ids;
}

bool needs_source(TrainMode m) { return m != TrainMode::target_only; }
bool needs_target(TrainMode m) { return m != TrainMode::source_only; }

}  // namespace

EvalReport nested_cv(const PipelineConfig& config, const PipelineData& data, const LineageObserver& observer) {
  const CvConfig& cv = config.cv;
  if (cv.xi_grid.empty()) throw ShapeError("xi grid is empty");
  const TrainMode mode = config.train.mode;
  const Rng root = Rng(config.seed).split("cv");

  const auto src_subjects = data.source.subject_ids();
  const auto tgt_subjects = data.target.subject_ids();
  const FoldPlan src_plan = subject_disjoint_folds(src_subjects, cv.outer_k, root.split("outer").split("source").next_u64());
  const FoldPlan tgt_plan = subject_disjoint_folds(tgt_subjects, cv.outer_k, root.split("outer").split("target").next_u64());

  EvalReport report;
  report.K = data.K;
  report.average = cv.average;
  report.mode = to_string(mode);
  report.model = to_string(config.model.kind);
  report.seed = config.seed;

  for (int fold = 0; fold < cv.outer_k; ++fold) {
    const FoldSplit s_split = split_fold(src_plan, src_subjects, fold);
    const FoldSplit t_split = split_fold(tgt_plan, tgt_subjects, fold);
    DomainIndices outer_train{needs_source(mode) ? s_split.train : std::vector<std::size_t>{},
                              needs_target(mode) ? t_split.train : std::vector<std::size_t>{}};
    // Features are fitted on both domains' outer-train data even when the
    // classifier uses one domain.
    const DomainIndices stage_train{s_split.train, t_split.train};
    const FeatureStage stage = fit_feature_stage(config, data, stage_train, observer, fold);
    const NetworkSpec spec = resolve_network_spec(config, data, stage);
    const Rng fold_rng = root.split("fold").split(static_cast<std::uint64_t>(fold));

    FoldResult fr;
    fr.fold = fold;
    fr.n_train_source = outer_train.source.size();
    fr.n_train_target = outer_train.target.size();
    fr.feature_count = spec.feature_dim;

    TrainConfig tc = config.train;
    if (mode == TrainMode::adapt) {
      // Inner split of the outer-train subjects, per domain.
      const auto s_sub = subjects_of(data.source, outer_train.source);
      const auto t_sub = subjects_of(data.target, outer_train.target);
      const FoldPlan s_inner = subject_disjoint_folds(s_sub, cv.inner_k, fold_rng.split("inner").split("source").next_u64());
      const FoldPlan t_inner = subject_disjoint_folds(t_sub, cv.inner_k, fold_rng.split("inner").split("target").next_u64());
      std::vector<DomainIndices> inner_train(cv.inner_k), inner_val(cv.inner_k);
      for (int v = 0; v < cv.inner_k; ++v) {
        const auto si = split_fold(s_inner, s_sub, v);
        const auto ti = split_fold(t_inner, t_sub, v);
        inner_train[v] = {pick(outer_train.source, si.train), pick(outer_train.target, ti.train)};
        inner_val[v] = {pick(outer_train.source, si.test), pick(outer_train.target, ti.test)};
      }
      std::size_t best = 0;
      for (std::size_t g = 0; g < cv.xi_grid.size(); ++g) {
        double sum = 0;
        for (int v = 0; v < cv.inner_k; ++v) {
          if (observer) {
            observer("inner_train", fold, ids_of(data, inner_train[v]));
            observer("inner_val", fold, ids_of(data, inner_val[v]));
          }
          TrainConfig ic = config.train;
          ic.xi = cv.xi_grid[g];
          ic.seed = fold_rng.split("inner_train").split(g).split(static_cast<std::uint64_t>(v)).next_u64();
          const auto src = make_trainset(data, stage, Domain::source, inner_train[v].source);
          const auto tgt = make_trainset(data, stage, Domain::target, inner_train[v].target);
          const auto net = fit_model(spec, ic, src, tgt);
          const auto val = make_trainset(data, stage, Domain::target, inner_val[v].target);
          sum += evaluate(net, val, cv.average).f1;
        }
        fr.xi_scores.push_back(sum / cv.inner_k);
        if (fr.xi_scores[g] > fr.xi_scores[best]) best = g;
      }
      tc.xi = cv.xi_grid[best];
      fr.xi = tc.xi;
    }

    if (observer) observer("final_train", fold, ids_of(data, outer_train));
    tc.seed = fold_rng.split("final").next_u64();
    const auto src = make_trainset(data, stage, Domain::source, outer_train.source);
    const auto tgt = make_trainset(data, stage, Domain::target, outer_train.target);
    const auto net = fit_model(spec, tc, src, tgt);

    const DomainIndices test{s_split.test, t_split.test};
    if (observer) observer("test", fold, ids_of(data, test));
    fr.target = evaluate(net, make_trainset(data, stage, Domain::target, t_split.test), cv.average);
    if (!s_split.test.empty())
      fr.source = evaluate(net, make_trainset(data, stage, Domain::source, s_split.test), cv.average);
    report.folds.push_back(std::move(fr));
  }
  aggregate(report);
  return report;
}

}  // namespace facemix
