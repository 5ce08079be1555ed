#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "facemix/landmark_features.hpp"

namespace facemix {

double orient(Point2 a, Point2 b, Point2 c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

double incircle(Point2 a, Point2 b, Point2 c, Point2 d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

namespace {

constexpr double kIncircleEps = 1e-12;

// Vertex ids >= n denote the three super-triangle vertices at infinity.
struct Mesh {
  std::span<const Point2> pts;
  std::size_t n;
  std::array<Point2, 3> dirs;

  bool infinite(int v) const { return v >= static_cast<int>(n); }
  Point2 dir(int v) const { return dirs[static_cast<std::size_t>(v) - n]; }

  // True when p lies strictly inside the (possibly degenerate-at-infinity)
  // circumcircle of the counter-clockwise triangle t.
  bool in_circumcircle(const std::array<int, 3>& t, Point2 p) const {
    int inf = 0;
    for (int v : t) inf += infinite(v);
    if (inf == 0) return incircle(pts[t[0]], pts[t[1]], pts[t[2]], p) > kIncircleEps;
    if (inf == 3) return true;
    if (inf == 1) {
      // Rotate so t = (a, b, inf); the circle tends to the open half-plane
      // left of a->b (the side holding the far vertex).
      int r = 0;
      while (!infinite(t[(r + 2) % 3])) ++r;
      const Point2 a = pts[t[r]], b = pts[t[(r + 1) % 3]];
      const double o = orient(a, b, p);
      if (o > 0) return true;
      if (o < 0) return false;
      // On the chord line: inside only strictly between a and b.
      const double dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
      const double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
      return dot > 0 && dot < len2;
    }
    // Two vertices at infinity: the circle tends to the half-plane through the
    // finite vertex, facing the two far vertices.
    int a_idx = 0;
    while (infinite(t[a_idx])) ++a_idx;
    const Point2 a = pts[t[a_idx]];
    Point2 u{0, 0};
    for (int v : t) {
      if (infinite(v)) {
        u.x += dir(v).x;
        u.y += dir(v).y;
      }
    }
    return (p.x - a.x) * u.x + (p.y - a.y) * u.y > 0;
  }
};

using Tri = std::array<int, 3>;
using Edge = std::pair<int, int>;

Tri sorted(Tri t) {
  std::sort(t.begin(), t.end());
  return t;
}

// Flips cocircular quads to the diagonal incident to the quad's lowest index.
void resolve_cocircular(std::vector<Tri>& tris, std::span<const Point2> pts) {
  for (int pass = 0; pass < 64; ++pass) {
    bool changed = false;
    std::map<Edge, std::vector<std::size_t>> edge_tris;
    for (std::size_t ti = 0; ti < tris.size(); ++ti) {
      for (int e = 0; e < 3; ++e) {
        int u = tris[ti][e], v = tris[ti][(e + 1) % 3];
        edge_tris[{std::min(u, v), std::max(u, v)}].push_back(ti);
      }
    }
    std::set<std::size_t> touched;
    for (const auto& [edge, owners] : edge_tris) {
      if (owners.size() != 2) continue;
      const std::size_t t1 = owners[0], t2 = owners[1];
      if (touched.count(t1) || touched.count(t2)) continue;
      auto opposite = [&](const Tri& t) {
        for (int v : t)
          if (v != edge.first && v != edge.second) return v;
        return -1;
      };
      const int c = opposite(tris[t1]), d = opposite(tris[t2]);
      const int lowest = std::min({edge.first, edge.second, c, d});
      if (lowest == edge.first || lowest == edge.second) continue;
      // Quad a-c-b-d must be strictly convex for the flip to be valid.
      const Point2 pa = pts[edge.first], pb = pts[edge.second], pc = pts[c], pd = pts[d];
      const double o1 = orient(pc, pd, pa), o2 = orient(pc, pd, pb);
      if (!((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0))) continue;
      Tri ccw{edge.first, edge.second, c};
      if (orient(pa, pb, pc) < 0) std::swap(ccw[0], ccw[1]);
      if (std::abs(incircle(pts[ccw[0]], pts[ccw[1]], pts[ccw[2]], pd)) > kIncircleEps) continue;
      tris[t1] = {c, d, edge.first};
      tris[t2] = {c, d, edge.second};
      touched.insert(t1);
      touched.insert(t2);
      changed = true;
    }
    if (!changed) return;
  }
}

}  // namespace

Triangulation delaunay_triangulate(std::span<const Point2> points) {
  const std::size_t n = points.size();
  // Drop exact duplicates, keeping the first index.
  std::vector<int> order;
  {
    std::set<std::pair<double, double>> seen;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y)) {
        throw DegenerateGeometry("non-finite point " + std::to_string(i));
      }
      if (seen.insert({points[i].x, points[i].y}).second) order.push_back(static_cast<int>(i));
    }
  }
  if (order.size() < 3) throw DegenerateGeometry("need at least 3 distinct points");
  {
    const Point2 a = points[order[0]], b = points[order[1]];
    bool collinear = true;
    for (std::size_t k = 2; k < order.size() && collinear; ++k) {
      collinear = orient(a, b, points[order[k]]) == 0.0;
    }
    if (collinear) throw DegenerateGeometry("all points are collinear");
  }

  Mesh mesh{points, n, {}};
  // Directions 120 degrees apart at an angle unlikely to align with data.
  for (int k = 0; k < 3; ++k) {
    const double th = 0.3217505543966422 + 2.0 * std::numbers::pi * k / 3.0;
    mesh.dirs[static_cast<std::size_t>(k)] = {std::cos(th), std::sin(th)};
  }
  const int s0 = static_cast<int>(n), s1 = s0 + 1, s2 = s0 + 2;
  std::vector<Tri> tris{{s0, s1, s2}};  // counter-clockwise by construction

  for (int pi : order) {
    const Point2 p = points[pi];
    std::vector<Tri> keep;
    std::map<Edge, int> boundary;  // directed edge -> occurrence count
    keep.reserve(tris.size() + 2);
    for (const auto& t : tris) {
      if (mesh.in_circumcircle(t, p)) {
        for (int e = 0; e < 3; ++e) boundary[{t[e], t[(e + 1) % 3]}]++;
      } else {
        keep.push_back(t);
      }
    }
    // Edges shared by two removed triangles appear once in each direction.
    for (const auto& [e, cnt] : boundary) {
      if (boundary.count({e.second, e.first})) continue;
      keep.push_back({e.first, e.second, pi});
    }
    tris.swap(keep);
  }

  std::vector<Tri> finite;
  for (const auto& t : tris) {
    if (!mesh.infinite(t[0]) && !mesh.infinite(t[1]) && !mesh.infinite(t[2])) finite.push_back(t);
  }
  resolve_cocircular(finite, points);

  Triangulation out;
  std::map<Edge, int> edge_count;
  for (const auto& t : finite) {
    out.triangles.push_back(sorted(t));
    for (int e = 0; e < 3; ++e) {
      int u = t[e], v = t[(e + 1) % 3];
      edge_count[{std::min(u, v), std::max(u, v)}]++;
    }
  }
  std::sort(out.triangles.begin(), out.triangles.end());
  for (const auto& [e, c] : edge_count) out.hull_size += (c == 1);
  return out;
}

}  // namespace facemix
