#include "facemix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "facemix/json_io.hpp"
#include "facemix/rng.hpp"

namespace facemix::synth {

namespace fs = std::filesystem;

const char* to_string(Preset p) {
  switch (p) {
    case Preset::planted_correlations: return "planted_correlations";
    case Preset::two_domain_gaussians: return "two_domain_gaussians";
    case Preset::two_domain_faces: return "two_domain_faces";
  }
  return "?";
}

Preset parse_preset(const std::string& s) {
  if (s == "planted_correlations") return Preset::planted_correlations;
  if (s == "two_domain_gaussians") return Preset::two_domain_gaussians;
  if (s == "two_domain_faces") return Preset::two_domain_faces;
  throw ParseError("unknown synth preset '" + s + "'");
}

namespace {

std::vector<double> standardized(const std::vector<double>& v) {
  double mean = 0, ss = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sd > 0 ? (v[i] - mean) / sd : 0.0;
  return out;
}

std::string id(const char* prefix, int i) { return std::string(prefix) + std::to_string(i); }

}  // namespace

PlantedData generate_planted(const SynthSpec& spec) {
  const int N = spec.n_source + spec.n_target;
  const int planted = spec.expression_only + spec.domain_only + spec.overlap + spec.identity_only;
  if (N < 3 || spec.P < planted || spec.K < 2) throw Error("invalid planted_correlations spec");
  Rng rng = Rng(spec.seed).split("synth/planted");

  PlantedData out;
  std::vector<double> expr(N), dom(N), ident(N);
  out.codes.resize(static_cast<std::size_t>(N));
  std::vector<std::string> ids;
  for (int j = 0; j < N; ++j) {
    const bool target = j >= spec.n_source;
    const int local = target ? j - spec.n_source : j;
    const int subjects = target ? spec.subjects_target : spec.subjects_source;
    const int subject = (target ? spec.subjects_source : 0) + local % std::max(1, subjects);
    auto& c = out.codes[static_cast<std::size_t>(j)];
    c.expression = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.K)));
    c.domain = target ? 1 : 0;
    c.identity = subject;
    expr[j] = c.expression;
    dom[j] = c.domain;
    ident[j] = c.identity;
    ids.push_back(id("p", j));
  }
  const auto ze = standardized(expr), zd = standardized(dom), zi = standardized(ident);

  // Shuffle which rows carry signal so indices are not contiguous.
  std::vector<int> rows(static_cast<std::size_t>(spec.P));
  for (int i = 0; i < spec.P; ++i) rows[i] = i;
  rng.shuffle(rows);
  std::size_t cursor = 0;
  auto take = [&](int n, std::vector<int>& dst) {
    for (int i = 0; i < n; ++i) dst.push_back(rows[cursor++]);
    std::sort(dst.begin(), dst.end());
  };
  take(spec.expression_only, out.expression_only);
  take(spec.domain_only, out.domain_only);
  take(spec.overlap, out.overlap);
  take(spec.identity_only, out.identity_only);

  std::vector<std::vector<double>> per_row(static_cast<std::size_t>(spec.P), std::vector<double>(N));
  auto fill = [&](int row, double ce, double cd, double ci) {
    auto& r = per_row[static_cast<std::size_t>(row)];
    for (int j = 0; j < N; ++j) r[j] = ce * ze[j] + cd * zd[j] + ci * zi[j] + spec.noise * rng.normal();
  };
  // c in [1.0, 1.5] * noise gives population |rho| = c / sqrt(c^2 + 1) in [0.71, 0.83].
  for (int r : out.expression_only) fill(r, spec.noise * rng.uniform(1.0, 1.5), 0, 0);
  for (int r : out.domain_only) fill(r, 0, spec.noise * rng.uniform(1.0, 1.5), 0);
  for (int r : out.overlap) fill(r, spec.noise * rng.uniform(0.8, 1.2), spec.noise * rng.uniform(0.8, 1.2), 0);
  for (int r : out.identity_only) fill(r, 0, 0, spec.noise * rng.uniform(1.0, 1.5));
  for (std::size_t i = cursor; i < rows.size(); ++i) fill(rows[i], 0, 0, 0);

  out.features.P = static_cast<std::size_t>(spec.P);
  out.features.N = static_cast<std::size_t>(N);
  out.features.values.reserve(out.features.P * out.features.N);
  for (const auto& r : per_row) out.features.values.insert(out.features.values.end(), r.begin(), r.end());
  for (int i = 0; i < spec.P; ++i) {
    out.features.descriptors.push_back({FeatureKind::distance, {i, i + 1}, -1});
  }
  out.features.sample_ids = std::move(ids);
  return out;
}

TabularTask generate_two_domain_gaussians(const SynthSpec& spec) {
  if (spec.K < 2 || spec.dim < 3) throw Error("two_domain_gaussians needs K >= 2 and dim >= 3");
  Rng rng = Rng(spec.seed).split("synth/gaussians");
  TabularTask task;
  task.K = spec.K;
  task.dim = spec.dim;
  std::vector<std::vector<double>> means(static_cast<std::size_t>(spec.K), std::vector<double>(spec.dim, 0.0));
  for (int c = 0; c < spec.K; ++c) {
    const double th = 2.0 * std::numbers::pi * c / spec.K;
    means[c][0] = 3.0 * std::cos(th);
    means[c][1] = 3.0 * std::sin(th);
    for (int d = 3; d < spec.dim; ++d) means[c][d] = 0.5 * rng.normal();
  }
  const double phi = spec.shift * std::numbers::pi / 3.0;
  auto draw = [&](Domain dom, int n, int subjects, int subject_base, std::vector<TabularSample>& out) {
    for (int i = 0; i < n; ++i) {
      TabularSample s;
      s.domain = dom;
      s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.K)));
      s.sample_id = std::string(dom == Domain::source ? "s" : "t") + std::to_string(i);
      s.subject_id = id("g", subject_base + i % std::max(1, subjects));
      s.x.resize(static_cast<std::size_t>(spec.dim));
      for (int d = 0; d < spec.dim; ++d) s.x[d] = means[s.label][d] + spec.noise * rng.normal();
      if (dom == Domain::target) {
        const double x0 = s.x[0], x1 = s.x[1];
        s.x[0] = std::cos(phi) * x0 - std::sin(phi) * x1 + 1.5 * spec.shift;
        s.x[1] = std::sin(phi) * x0 + std::cos(phi) * x1;
        s.x[2] += 8.0 * spec.shift;
      }
      out.push_back(std::move(s));
    }
  };
  draw(Domain::source, spec.n_source, spec.subjects_source, 0, task.source);
  draw(Domain::target, spec.n_target, spec.subjects_target, spec.subjects_source, task.target);
  return task;
}

TrainSet to_trainset(const std::vector<TabularSample>& rows, int K) {
  TrainSet t;
  t.K = K;
  t.feature_dim = rows.empty() ? 0 : static_cast<int>(rows[0].x.size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.x.size()) != t.feature_dim) throw ShapeError("tabular rows differ in width");
    for (double v : r.x) t.features.push_back(static_cast<float>(v));
    t.labels.push_back(r.label);
    t.sample_ids.push_back(r.sample_id);
    t.subject_ids.push_back(r.subject_id);
  }
  return t;
}

std::vector<Point2> face_template() {
  std::vector<Point2> p(kLandmarkCount);
  const double pi = std::numbers::pi;
  for (int i = 0; i <= 16; ++i) {  // jaw
    const double th = pi - i * pi / 16.0;
    p[i] = {0.5 + 0.42 * std::cos(th), 0.45 + 0.45 * std::sin(th)};
  }
  for (int i = 0; i < 5; ++i) {  // brows
    const double t = i / 4.0;
    const double arch = 0.035 * std::sin(pi * t);
    p[17 + i] = {0.18 + 0.24 * t, 0.27 - arch};
    p[22 + i] = {0.58 + 0.24 * t, 0.27 - arch};
  }
  for (int i = 0; i < 4; ++i) p[27 + i] = {0.5, 0.37 + 0.06 * i};  // nose bridge
  for (int i = 0; i < 5; ++i) p[31 + i] = {0.42 + 0.04 * i, 0.60 + (i == 2 ? 0.015 : 0.0)};
  auto eye = [&](int first, double cx, double cy) {
    const double w = 0.07, h = 0.025;
    const Point2 ring[6] = {{cx - w, cy}, {cx - w / 3, cy - h}, {cx + w / 3, cy - h},
                            {cx + w, cy}, {cx + w / 3, cy + h}, {cx - w / 3, cy + h}};
    for (int k = 0; k < 6; ++k) p[first + k] = ring[k];
  };
  eye(36, 0.32, 0.36);
  eye(42, 0.68, 0.36);
  // Outer lip 48..59: corner, upper arc, corner, lower arc.
  const double mw = 0.13, mcx = 0.5, mcy = 0.76;
  for (int i = 0; i <= 6; ++i) {
    const double th = pi - i * pi / 6.0;
    p[48 + i] = {mcx + mw * std::cos(th), mcy - 0.04 * std::sin(th)};
  }
  for (int i = 1; i <= 5; ++i) {
    const double th = i * pi / 6.0;
    p[54 + i] = {mcx + mw * std::cos(th), mcy + 0.05 * std::sin(th)};
  }
  for (int i = 0; i <= 4; ++i) {  // inner lip 60..64
    const double th = pi - i * pi / 4.0;
    p[60 + i] = {mcx + 0.09 * std::cos(th), mcy - 0.012 * std::sin(th)};
  }
  for (int i = 1; i <= 3; ++i) {  // 65..67
    const double th = i * pi / 4.0;
    p[64 + i] = {mcx + 0.09 * std::cos(th), mcy + 0.012 * std::sin(th)};
  }
  return p;
}

namespace {

double blob(double u, double v, double cx, double cy, double rx, double ry) {
  const double dx = (u - cx) / rx, dy = (v - cy) / ry;
  return std::exp(-0.5 * (dx * dx + dy * dy));
}

// Face intensity in template coordinates; mouth geometry is never drawn.
double face_intensity(double u, double v, const std::vector<Point2>& lm, bool texture_bit) {
  double val = 0.12;
  const double fx = (u - 0.5) / 0.44, fy = (v - 0.5) / 0.48;
  if (fx * fx + fy * fy < 1.0) val = 0.55;
  auto center = [&](int a, int b) {
    Point2 c{0, 0};
    for (int i = a; i <= b; ++i) {
      c.x += lm[i].x;
      c.y += lm[i].y;
    }
    return Point2{c.x / (b - a + 1), c.y / (b - a + 1)};
  };
  const Point2 le = center(36, 41), re = center(42, 47);
  const double ew = std::abs(lm[39].x - lm[36].x) * 0.6;
  val -= 0.35 * blob(u, v, le.x, le.y, ew, ew * 0.55);
  val -= 0.35 * blob(u, v, re.x, re.y, ew, ew * 0.55);
  const Point2 lb = center(17, 21), rb = center(22, 26);
  val -= 0.2 * blob(u, v, lb.x, lb.y, 0.1, 0.02);
  val -= 0.2 * blob(u, v, rb.x, rb.y, 0.1, 0.02);
  val -= 0.1 * blob(u, v, lm[33].x, lm[33].y, 0.05, 0.03);
  if (texture_bit) {
    val += 0.3 * blob(u, v, 0.24, 0.58, 0.08, 0.08);
    val += 0.3 * blob(u, v, 0.76, 0.58, 0.08, 0.08);
  }
  return val;
}

}  // namespace

Dataset generate_two_domain_faces(const SynthSpec& spec) {
  if (spec.K < 2 || spec.raw_image_size < 16) throw Error("two_domain_faces needs K >= 2 and images >= 16 px");
  Rng rng = Rng(spec.seed).split("synth/faces");
  const auto base = face_template();
  Dataset data;
  const int S = spec.raw_image_size;

  auto make_domain = [&](Domain dom, int n, int subjects, int subject_base) {
    const bool child = dom == Domain::target;
    // Per-subject shape offsets.
    std::vector<std::vector<Point2>> subject_shape(static_cast<std::size_t>(std::max(1, subjects)));
    for (auto& shape : subject_shape) {
      shape.resize(kLandmarkCount);
      const double sx = 1.0 + 0.03 * rng.normal(), sy = 1.0 + 0.03 * rng.normal();
      for (std::size_t i = 0; i < kLandmarkCount; ++i) {
        shape[i] = {0.5 + sx * (base[i].x - 0.5) + 0.006 * rng.normal(),
                    0.5 + sy * (base[i].y - 0.5) + 0.006 * rng.normal()};
      }
    }
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.domain = dom;
      s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.K)));
      const int subject = i % std::max(1, subjects);
      s.subject_id = id("f", subject_base + subject);
      s.sample_id = std::string(child ? "t" : "s") + std::to_string(i);
      const bool geometry_bit = (s.label / 2) % 2 == 1;
      const bool texture_bit = s.label % 2 == 1;

      std::vector<Point2> lm = subject_shape[static_cast<std::size_t>(subject)];
      if (child) {
        const double k = spec.shift;
        for (int j = 0; j <= 16; ++j) lm[j].x = 0.5 + (1.0 - 0.12 * k) * (lm[j].x - 0.5);
        for (int j = 17; j <= 26; ++j) lm[j].y -= 0.03 * k;
        for (int e = 36; e <= 42; e += 6) {
          Point2 c{0, 0};
          for (int j = e; j < e + 6; ++j) c = {c.x + lm[j].x / 6, c.y + lm[j].y / 6};
          for (int j = e; j < e + 6; ++j) {
            lm[j] = {c.x + (1.0 + 0.3 * k) * (lm[j].x - c.x), c.y + (1.0 + 0.3 * k) * (lm[j].y - c.y)};
          }
        }
      }
      if (geometry_bit) {
        // Open, wider mouth.
        for (int j = 48; j <= 67; ++j) {
          const bool lower = (j >= 55 && j <= 59) || (j >= 65 && j <= 67);
          lm[j].x = 0.5 + 1.15 * (lm[j].x - 0.5);
          if (lower) lm[j].y += 0.05;
        }
      }
      for (auto& p : lm) p = {p.x + spec.noise * 0.004 * rng.normal(), p.y + spec.noise * 0.004 * rng.normal()};

      // Random pose: template unit box -> pixels.
      const double angle = rng.uniform(-0.25, 0.25);
      const double scale = S * rng.uniform(0.62, 0.78);
      const double cx = S * 0.5 + rng.uniform(-0.06, 0.06) * S, cy = S * 0.5 + rng.uniform(-0.06, 0.06) * S;
      const double ca = std::cos(angle), sa = std::sin(angle);
      auto to_px = [&](Point2 q) {
        const double x = (q.x - 0.5) * scale, y = (q.y - 0.5) * scale;
        return Point2{cx + ca * x - sa * y, cy + sa * x + ca * y};
      };
      std::array<Point2, kLandmarkCount> px;
      for (std::size_t j = 0; j < kLandmarkCount; ++j) px[j] = to_px(lm[j]);
      s.landmarks = LandmarkSet(px);

      s.image = GrayImage(S, S);
      const double contrast = child ? 1.0 - 0.3 * spec.shift : 1.0;
      for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double u = 0.5 + (ca * dx + sa * dy) / scale;
          const double v = 0.5 + (-sa * dx + ca * dy) / scale;
          double val = face_intensity(u, v, lm, texture_bit);
          val = 0.5 + contrast * (val - 0.5) + 0.03 * spec.noise * rng.normal();
          s.image.at(x, y) = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
      data.samples.push_back(std::move(s));
    }
  };
  make_domain(Domain::source, spec.n_source, spec.subjects_source, 0);
  make_domain(Domain::target, spec.n_target, spec.subjects_target, spec.subjects_source);
  data.refresh_counts(spec.K);
  return data;
}

void write_samples_csv(const fs::path& path, const std::vector<TabularSample>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "sample_id,subject_id,domain,label\n";
  for (const auto& r : rows) out << r.sample_id << ',' << r.subject_id << ',' << to_string(r.domain) << ',' << r.label << '\n';
}

std::vector<TabularSample> read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample_id,subject_id,domain,label") throw ParseError("bad samples header in " + path.string());
  std::vector<TabularSample> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 4) throw ParseError("expected 4 fields", row);
    TabularSample s;
    s.sample_id = f[0];
    s.subject_id = f[1];
    try {
      s.domain = parse_domain(f[2]);
      s.label = std::stoi(f[3]);
    } catch (const std::exception& e) {
      throw ParseError(e.what(), row);
    }
    if (s.label < 0) throw ParseError("label out of range", row);
    rows.push_back(std::move(s));
  }
  return rows;
}

fs::path synth_generate(const SynthSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  switch (spec.preset) {
    case Preset::planted_correlations: {
      const auto d = generate_planted(spec);
      write_feature_matrix(dir / "features.bin", d.features);
      std::vector<TabularSample> rows;
      for (std::size_t j = 0; j < d.codes.size(); ++j) {
        TabularSample s;
        s.sample_id = d.features.sample_ids[j];
        s.subject_id = id("p", d.codes[j].identity);
        s.domain = d.codes[j].domain ? Domain::target : Domain::source;
        s.label = d.codes[j].expression;
        rows.push_back(std::move(s));
      }
      write_samples_csv(dir / "samples.csv", rows);
      nlohmann::json truth;
      truth["expression_only"] = d.expression_only;
      truth["domain_only"] = d.domain_only;
      truth["overlap"] = d.overlap;
      truth["identity_only"] = d.identity_only;
      write_json(dir / "truth.json", truth);
      return dir / "features.bin";
    }
    case Preset::two_domain_gaussians: {
      const auto task = generate_two_domain_gaussians(spec);
      std::vector<std::vector<double>> cols;
      std::vector<std::string> ids;
      std::vector<TabularSample> rows;
      for (const auto* part : {&task.source, &task.target}) {
        for (const auto& s : *part) {
          cols.push_back(s.x);
          ids.push_back(s.sample_id);
          rows.push_back(s);
        }
      }
      std::vector<FeatureDescriptor> desc;
      for (int d = 0; d < task.dim; ++d) desc.push_back({FeatureKind::distance, {d, d + 1}, -1});
      write_feature_matrix(dir / "features.bin", feature_matrix_from_samples(cols, desc, ids));
      write_samples_csv(dir / "samples.csv", rows);
      return dir / "features.bin";
    }
    case Preset::two_domain_faces: {
      const auto data = generate_two_domain_faces(spec);
      fs::create_directories(dir / "images");
      fs::create_directories(dir / "landmarks");
      std::vector<std::string> imgs, lms;
      for (const auto& s : data.samples) {
        imgs.push_back("images/" + s.sample_id + ".pgm");
        lms.push_back("landmarks/" + s.sample_id + ".txt");
        write_image_pgm(dir / imgs.back(), s.image);
        write_landmarks(dir / lms.back(), s.landmarks);
      }
      write_manifest(dir / "manifest.csv", data, imgs, lms);
      return dir / "manifest.csv";
    }
  }
  throw Error("unknown preset");
}

nlohmann::json spec_to_json(const SynthSpec& s) {
  return {{"preset", to_string(s.preset)}, {"seed", s.seed}, {"K", s.K},
          {"n_source", s.n_source}, {"n_target", s.n_target},
          {"subjects_source", s.subjects_source}, {"subjects_target", s.subjects_target},
          {"shift", s.shift}, {"noise", s.noise}, {"P", s.P},
          {"expression_only", s.expression_only}, {"domain_only", s.domain_only},
          {"overlap", s.overlap}, {"identity_only", s.identity_only}, {"dim", s.dim},
          {"raw_image_size", s.raw_image_size}};
}

SynthSpec spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (j.contains("preset")) s.preset = parse_preset(j["preset"].get<std::string>());
  s.seed = j.value("seed", s.seed);
  s.K = j.value("K", s.K);
  s.n_source = j.value("n_source", s.n_source);
  s.n_target = j.value("n_target", s.n_target);
  s.subjects_source = j.value("subjects_source", s.subjects_source);
  s.subjects_target = j.value("subjects_target", s.subjects_target);
  s.shift = j.value("shift", s.shift);
  s.noise = j.value("noise", s.noise);
  s.P = j.value("P", s.P);
  s.expression_only = j.value("expression_only", s.expression_only);
  s.domain_only = j.value("domain_only", s.domain_only);
  s.overlap = j.value("overlap", s.overlap);
  s.identity_only = j.value("identity_only", s.identity_only);
  s.dim = j.value("dim", s.dim);
  s.raw_image_size = j.value("raw_image_size", s.raw_image_size);
  return s;
}

}  // namespace facemix::synth
