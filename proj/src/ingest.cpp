#include "facemix/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace facemix {

namespace fs = std::filesystem;

LandmarkSet::LandmarkSet(std::span<const Point2> points) {
  if (points.size() != kLandmarkCount) {
    throw ParseError("expected 68 landmarks, got " + std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y)) {
      throw ParseError("landmark " + std::to_string(i) + " is not finite");
    }
    points_[i] = points[i];
  }
}

GrayImage::GrayImage(int w, int h, float fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw ShapeError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ParseError("unknown domain '" + s + "'");
}

void Dataset::refresh_counts(int min_k) {
  int max_label = -1;
  for (const auto& s : samples) max_label = std::max(max_label, s.label);
  K = std::max(min_k, max_label + 1);
  class_counts.assign(static_cast<std::size_t>(K), 0);
  for (const auto& s : samples) ++class_counts[static_cast<std::size_t>(s.label)];
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void strip_cr(std::string& s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
}

}  // namespace

Dataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty manifest " + path.string());
  strip_cr(line);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  if (line != "sample_id,subject_id,domain,label,image,landmarks") {
    throw ParseError("bad manifest header in " + path.string());
  }
  const fs::path base = path.parent_path();
  Dataset data;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    strip_cr(line);
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw ParseError("expected 6 fields, got " + std::to_string(f.size()), row);
    Sample s;
    s.sample_id = f[0];
    s.subject_id = f[1];
    try {
      s.domain = parse_domain(f[2]);
      std::size_t used = 0;
      const long label = std::stol(f[3], &used);
      if (used != f[3].size()) throw ParseError("label is not an integer");
      if (label < 0 || label > 1'000'000) throw ParseError("label out of range: " + f[3]);
      s.label = static_cast<int>(label);
      s.image = load_image_pgm(base / f[4]);
      s.landmarks = load_landmarks(base / f[5]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), row);
    } catch (const std::invalid_argument&) {
      throw ParseError("label is not an integer: '" + f[3] + "'", row);
    } catch (const std::out_of_range&) {
      throw ParseError("label out of range: " + f[3], row);
    }
    data.samples.push_back(std::move(s));
  }
  data.refresh_counts();
  return data;
}

void write_manifest(const fs::path& path, const Dataset& data,
                    const std::vector<std::string>& image_files,
                    const std::vector<std::string>& landmark_files) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "sample_id,subject_id,domain,label,image,landmarks\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    out << s.sample_id << ',' << s.subject_id << ',' << to_string(s.domain) << ',' << s.label
        << ',' << image_files.at(i) << ',' << landmark_files.at(i) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayImage load_image_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open image " + path.string());
  const std::string magic = pgm_token(in);
  if (magic == "P2") throw ParseError("unsupported PGM variant (P2) in " + path.string());
  if (magic != "P5") throw ParseError("not a PGM file: " + path.string());
  int w = 0, h = 0;
  long maxval = 0;
  try {
    w = std::stoi(pgm_token(in));
    h = std::stoi(pgm_token(in));
    maxval = std::stol(pgm_token(in));
  } catch (const std::exception&) {
    throw ParseError("malformed PGM header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw ParseError("invalid PGM header values in " + path.string());
  }
  // pgm_token consumed exactly one whitespace byte after maxval.
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw ParseError("truncated PGM payload in " + path.string());
  }
  GrayImage img(w, h);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bytes_per == 1 ? raw[i] : (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1];
    img.pixels[i] = static_cast<float>(std::min(1.0, v * scale));
  }
  return img;
}

void write_image_pgm(const fs::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error("write failed: " + path.string());
}

LandmarkSet load_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open landmarks " + path.string());
  std::vector<Point2> pts;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    Point2 p;
    if (!(ls >> p.x >> p.y)) throw ParseError("bad landmark line in " + path.string());
    pts.push_back(p);
  }
  if (pts.size() != kLandmarkCount) {
    throw ParseError("landmark file " + path.filename().string() + " has " +
                     std::to_string(pts.size()) + " points, expected 68");
  }
  return LandmarkSet(pts);
}

void write_landmarks(const fs::path& path, const LandmarkSet& landmarks) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (const auto& p : landmarks.points()) out << p.x << ' ' << p.y << '\n';
}

namespace {

Point2 mean_of(const LandmarkSet& lm, std::size_t first, std::size_t last) {
  Point2 c;
  for (std::size_t i = first; i <= last; ++i) {
    c.x += lm[i].x;
    c.y += lm[i].y;
  }
  const double n = static_cast<double>(last - first + 1);
  return {c.x / n, c.y / n};
}

}  // namespace

Point2 left_eye_center(const LandmarkSet& lm) { return mean_of(lm, 36, 41); }
Point2 right_eye_center(const LandmarkSet& lm) { return mean_of(lm, 42, 47); }

Similarity Similarity::inverse() const {
  const double d = a * a + b * b;
  Similarity inv;
  inv.a = a / d;
  inv.b = -b / d;
  // -R^{-1} t
  inv.tx = -(inv.a * tx - inv.b * ty);
  inv.ty = -(inv.b * tx + inv.a * ty);
  return inv;
}

Similarity alignment_transform(const LandmarkSet& lm, int out_size) {
  if (out_size <= 0) throw ShapeError("out_size must be positive");
  const Point2 l = left_eye_center(lm);
  const Point2 r = right_eye_center(lm);
  const double dx = r.x - l.x, dy = r.y - l.y;
  const double d2 = dx * dx + dy * dy;
  if (!(d2 > 1e-18)) throw DegenerateGeometry("eye centers coincide");
  const double S = out_size;
  const Point2 dl{0.30 * S, 0.35 * S};
  const Point2 dr{0.70 * S, 0.35 * S};
  // Complex ratio (dr - dl) / (r - l) gives the rotation-scale part.
  const double ex = dr.x - dl.x, ey = dr.y - dl.y;
  Similarity t;
  t.a = (ex * dx + ey * dy) / d2;
  t.b = (ey * dx - ex * dy) / d2;
  t.tx = dl.x - (t.a * l.x - t.b * l.y);
  t.ty = dl.y - (t.b * l.x + t.a * l.y);
  return t;
}

float sample_bilinear(const GrayImage& image, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double wx = x - fx, wy = y - fy;
  auto px = [&](long xi, long yi) -> double {
    if (xi < 0 || yi < 0 || xi >= image.width || yi >= image.height) return 0.0;
    return image.at(static_cast<int>(xi), static_cast<int>(yi));
  };
  double v = 0.0;
  if ((1 - wx) * (1 - wy) != 0.0) v += (1 - wx) * (1 - wy) * px(x0, y0);
  if (wx * (1 - wy) != 0.0) v += wx * (1 - wy) * px(x0 + 1, y0);
  if ((1 - wx) * wy != 0.0) v += (1 - wx) * wy * px(x0, y0 + 1);
  if (wx * wy != 0.0) v += wx * wy * px(x0 + 1, y0 + 1);
  return static_cast<float>(v);
}

AlignedFace align_face(const GrayImage& image, const LandmarkSet& landmarks, int out_size) {
  const Similarity fwd = alignment_transform(landmarks, out_size);
  const Similarity inv = fwd.inverse();
  AlignedFace out{GrayImage(out_size, out_size), {}};
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      const Point2 src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      out.image.at(x, y) = std::clamp(sample_bilinear(image, src.x, src.y), 0.0f, 1.0f);
    }
  }
  std::array<Point2, kLandmarkCount> moved;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) moved[i] = fwd.apply(landmarks[i]);
  out.landmarks = LandmarkSet(moved);
  return out;
}

}  // namespace facemix
