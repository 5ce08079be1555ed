#include "facemix/landmark_features.hpp"

#include <cmath>

namespace facemix {

std::vector<double> pairwise_distances(std::span<const Point2> points) {
  const std::size_t n = points.size();
  std::vector<double> out;
  out.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.push_back(std::hypot(points[j].x - points[i].x, points[j].y - points[i].y));
    }
  }
  return out;
}

namespace {

double angle_at(Point2 v, Point2 p, Point2 q) {
  const double ux = p.x - v.x, uy = p.y - v.y;
  const double wx = q.x - v.x, wy = q.y - v.y;
  return std::atan2(std::abs(ux * wy - uy * wx), ux * wx + uy * wy);
}

}  // namespace

std::vector<double> triangle_features(std::span<const Point2> points, const Triangulation& topology) {
  std::vector<double> out;
  out.reserve(4 * topology.size());
  for (const auto& t : topology.triangles) {
    for (int v : t) {
      if (v < 0 || static_cast<std::size_t>(v) >= points.size()) {
        throw ShapeError("triangle index " + std::to_string(v) + " out of range");
      }
    }
    const Point2 a = points[t[0]], b = points[t[1]], c = points[t[2]];
    out.push_back(0.5 * std::abs(orient(a, b, c)));
    out.push_back(angle_at(a, b, c));
    out.push_back(angle_at(b, c, a));
    out.push_back(angle_at(c, a, b));
  }
  return out;
}

Triangulation fit_reference_topology(std::span<const LandmarkSet> landmarks) {
  if (landmarks.empty()) throw Error("cannot fit a reference topology without samples");
  std::array<Point2, kLandmarkCount> mean{};
  for (const auto& lm : landmarks) {
    for (std::size_t i = 0; i < kLandmarkCount; ++i) {
      mean[i].x += lm[i].x;
      mean[i].y += lm[i].y;
    }
  }
  const double n = static_cast<double>(landmarks.size());
  for (auto& p : mean) {
    p.x /= n;
    p.y /= n;
  }
  return delaunay_triangulate(mean);
}

Triangulation fit_reference_topology(std::span<const Dataset* const> datasets) {
  std::vector<LandmarkSet> all;
  for (const Dataset* d : datasets) {
    for (const auto& s : d->samples) all.push_back(s.landmarks);
  }
  return fit_reference_topology(std::span<const LandmarkSet>(all));
}

const char* to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::distance: return "distance";
    case FeatureKind::area: return "area";
    case FeatureKind::angle: return "angle";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "distance") return FeatureKind::distance;
  if (s == "area") return FeatureKind::area;
  if (s == "angle") return FeatureKind::angle;
  throw ParseError("unknown feature kind '" + s + "'");
}

std::string FeatureDescriptor::label() const {
  std::string s = to_string(kind);
  s += '(';
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(indices[i]);
  }
  s += ')';
  if (kind == FeatureKind::angle) s += "@" + std::to_string(vertex);
  return s;
}

std::vector<FeatureDescriptor> feature_descriptors(std::size_t point_count,
                                                   const Triangulation& topology) {
  std::vector<FeatureDescriptor> out;
  out.reserve(point_count * (point_count - 1) / 2 + 4 * topology.size());
  for (std::size_t i = 0; i < point_count; ++i) {
    for (std::size_t j = i + 1; j < point_count; ++j) {
      out.push_back({FeatureKind::distance, {static_cast<int>(i), static_cast<int>(j)}, -1});
    }
  }
  for (const auto& t : topology.triangles) {
    std::vector<int> idx(t.begin(), t.end());
    out.push_back({FeatureKind::area, idx, -1});
    for (int v : t) out.push_back({FeatureKind::angle, idx, v});
  }
  return out;
}

std::vector<double> extract_feature_values(const LandmarkSet& landmarks,
                                           const Triangulation& topology) {
  std::vector<double> values = pairwise_distances(landmarks);
  const auto tri = triangle_features(landmarks.span(), topology);
  values.insert(values.end(), tri.begin(), tri.end());
  return values;
}

FeatureVector extract_feature_vector(const LandmarkSet& landmarks, const Triangulation& topology) {
  return {extract_feature_values(landmarks, topology),
          feature_descriptors(kLandmarkCount, topology)};
}

}  // namespace facemix
