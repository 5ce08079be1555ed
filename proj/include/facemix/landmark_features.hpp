#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "facemix/ingest.hpp"

namespace facemix {

/// Triangles as sorted index triplets (i < j < k), listed in lexicographic
/// order. That order is the "topology order" used by feature extraction.
struct Triangulation {
  std::vector<std::array<int, 3>> triangles;
  int hull_size = 0;

  std::size_t size() const { return triangles.size(); }
  friend bool operator==(const Triangulation&, const Triangulation&) = default;
};

/// Delaunay triangulation by Bowyer–Watson. The enclosing super-triangle is
/// kept symbolic (vertices at infinity) so hull triangles are never lost to
/// a finite bounding triangle. Cocircular quads are resolved toward the
/// diagonal incident to the lowest index. Exact duplicate points are kept
/// out of the mesh (only the first occurrence is used).
/// Throws DegenerateGeometry for fewer than 3 distinct or all-collinear points.
Triangulation delaunay_triangulate(std::span<const Point2> points);

/// Signed incircle determinant: > 0 when d is inside the circumcircle of the
/// counter-clockwise triangle (a, b, c).
double incircle(Point2 a, Point2 b, Point2 c, Point2 d);
/// Twice the signed area of (a, b, c); > 0 for counter-clockwise.
double orient(Point2 a, Point2 b, Point2 c);

/// Euclidean distances for all i < j in lexicographic (i, j) order.
std::vector<double> pairwise_distances(std::span<const Point2> points);
inline std::vector<double> pairwise_distances(const LandmarkSet& lm) {
  return pairwise_distances(lm.span());
}

/// Per triangle in topology order: [area, angle at i, angle at j, angle at k].
/// Angles use atan2(|cross|, dot), so degenerate triangles give angles of 0 or
/// pi (the clamped-cosine limit) and area 0.
std::vector<double> triangle_features(std::span<const Point2> points, const Triangulation& topology);

/// Delaunay triangulation of the element-wise mean landmarks of all samples.
Triangulation fit_reference_topology(std::span<const Dataset* const> datasets);
Triangulation fit_reference_topology(std::span<const LandmarkSet> landmarks);

enum class FeatureKind { distance, area, angle };

const char* to_string(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);

struct FeatureDescriptor {
  FeatureKind kind = FeatureKind::distance;
  /// Two indices for distances, three for triangle features.
  std::vector<int> indices;
  /// For angles, the landmark index at the angle's vertex; -1 otherwise.
  int vertex = -1;

  std::string label() const;
  friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

/// Descriptors for `point_count` landmarks on `topology`, aligned with
/// extract_feature_vector's values.
std::vector<FeatureDescriptor> feature_descriptors(std::size_t point_count,
                                                   const Triangulation& topology);

struct FeatureVector {
  std::vector<double> values;
  std::vector<FeatureDescriptor> descriptors;
  std::size_t size() const { return values.size(); }
};

/// Distances then triangle features: P = n(n-1)/2 + 4 |triangles|.
FeatureVector extract_feature_vector(const LandmarkSet& landmarks, const Triangulation& topology);
/// Values only (descriptors are shared across samples).
std::vector<double> extract_feature_values(const LandmarkSet& landmarks,
                                           const Triangulation& topology);

}  // namespace facemix
