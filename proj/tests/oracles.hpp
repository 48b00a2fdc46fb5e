// Independent reference implementations used only by the tests. They favour
// obviousness over speed and share no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "compact_sdf/geometry.hpp"

namespace oracle {

using csdf::Vec3;

inline double segment_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).squaredNorm();
}

// Plane projection if it lands inside, otherwise the nearest edge.
inline double triangle_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const Vec3 q = p - n * ((p - a).dot(n) / n.squaredNorm());
  Eigen::Matrix<double, 3, 2> m;
  m << b - a, c - a;
  const Eigen::Vector2d uv = m.colPivHouseholderQr().solve(q - a);
  if (uv[0] >= 0 && uv[1] >= 0 && uv[0] + uv[1] <= 1) return (p - q).squaredNorm();
  return std::min({segment_distance_sq(p, a, b), segment_distance_sq(p, b, c),
                   segment_distance_sq(p, c, a)});
}

// Generalized winding number by summing signed solid angles.
inline double winding_number(const csdf::TriangleMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - p, b = mesh.vertices[t[1]] - p, c = mesh.vertices[t[2]] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * M_PI);
}

inline double signed_distance(const csdf::TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles)
    best = std::min(best, triangle_distance_sq(p, mesh.vertices[t[0]], mesh.vertices[t[1]],
                                               mesh.vertices[t[2]]));
  const double d = std::sqrt(best);
  return winding_number(mesh, p) > 0.5 ? -d : d;
}

inline double nearest_sq(const std::vector<Vec3>& set, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : set) best = std::min(best, (s - q).squaredNorm());
  return best;
}

inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sa = 0.0, sb = 0.0;
  for (const auto& p : a) sa += nearest_sq(b, p);
  for (const auto& p : b) sb += nearest_sq(a, p);
  return 0.5 * (sa / a.size() + sb / b.size());
}

inline double share_within(const std::vector<Vec3>& from, const std::vector<Vec3>& to, double tau) {
  std::size_t hits = 0;
  for (const auto& p : from) {
    for (const auto& q : to) {
      if ((p - q).norm() <= tau) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / from.size();
}

// Signed volume; positive when faces point outward.
inline double signed_volume(const csdf::TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles)
    v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]])) / 6.0;
  return v;
}

inline long euler_characteristic(const csdf::TriangleMesh& mesh) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      auto a = t[k], b = t[(k + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(edges.size()) +
         static_cast<long>(mesh.triangles.size());
}

}  // namespace oracle
