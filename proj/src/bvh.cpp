#include "compact_sdf/bvh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "compact_sdf/error.hpp"
#include "compact_sdf/parallel.hpp"
#include "rng.hpp"

namespace csdf {

Bvh::Bvh(const TriangleMesh& mesh, std::uint32_t leaf_size) {
  if (mesh.triangles.empty()) throw Error(ErrorCode::kEmpty, "cannot build a BVH over no triangles");
  const auto n = static_cast<std::uint32_t>(mesh.triangles.size());
  corners_.resize(n);
  std::vector<Vec3> centroids(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    const auto& tri = mesh.triangles[t];
    corners_[t] = {mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]};
    centroids[t] = (corners_[t][0] + corners_[t][1] + corners_[t][2]) / 3.0;
  }
  order_.resize(n);
  for (std::uint32_t t = 0; t < n; ++t) order_[t] = t;
  nodes_.reserve(2 * n / std::max(1u, leaf_size) + 1);
  build(0, n, std::max(1u, leaf_size), centroids);
}

std::uint32_t Bvh::build(std::uint32_t begin, std::uint32_t end, std::uint32_t leaf_size,
                         const std::vector<Vec3>& centroids) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (std::uint32_t i = begin; i < end; ++i) {
    for (const auto& c : corners_[order_[i]]) box.extend(c);
    centroid_box.extend(centroids[order_[i]]);
  }
  nodes_[index].box = box;
  if (end - begin <= leaf_size) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (centroids[a][axis] != centroids[b][axis])
                       return centroids[a][axis] < centroids[b][axis];
                     return a < b;
                   });
  build(begin, mid, leaf_size, centroids);
  const std::uint32_t right = build(mid, end, leaf_size, centroids);
  nodes_[index].right = right;
  return index;
}

Bvh::ClosestHit Bvh::closest(const Vec3& p) const {
  ClosestHit best{std::numeric_limits<double>::infinity(), 0, Vec3::Zero()};
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (node.box.squaredExteriorDistance(p) >= best.squared_distance) continue;
    if (node.is_leaf()) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const auto t = order_[i];
        const auto& c = corners_[t];
        const Vec3 q = closest_point_on_triangle(p, c[0], c[1], c[2]);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best.squared_distance || (d2 == best.squared_distance && t < best.triangle))
          best = {d2, t, q};
      }
      continue;
    }
    const auto left = static_cast<std::uint32_t>(&node - nodes_.data()) + 1;
    const double dl = nodes_[left].box.squaredExteriorDistance(p);
    const double dr = nodes_[node.right].box.squaredExteriorDistance(p);
    if (dl <= dr) {
      stack[top++] = node.right;
      stack[top++] = left;
    } else {
      stack[top++] = left;
      stack[top++] = node.right;
    }
  }
  return best;
}

namespace {

enum class RayHit { kMiss, kHit, kDegenerate };

RayHit intersect(const Vec3& o, const Vec3& d, const std::array<Vec3, 3>& tri) {
  constexpr double kTol = 1e-12;
  const Vec3 e1 = tri[1] - tri[0];
  const Vec3 e2 = tri[2] - tri[0];
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  const Vec3 s = o - tri[0];
  if (std::abs(det) < kTol * e1.norm() * e2.norm()) {
    const Vec3 n = e1.cross(e2);
    const double n_norm = n.norm();
    if (n_norm > 0.0 && std::abs(s.dot(n)) / n_norm < kTol) return RayHit::kDegenerate;
    return RayHit::kMiss;
  }
  const double inv = 1.0 / det;
  const double u = s.dot(p) * inv;
  if (u < -kTol || u > 1.0 + kTol) return RayHit::kMiss;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < -kTol || u + v > 1.0 + kTol) return RayHit::kMiss;
  const double t = e2.dot(q) * inv;
  if (t <= kTol) return RayHit::kMiss;
  if (u < kTol || v < kTol || u + v > 1.0 - kTol) return RayHit::kDegenerate;
  return RayHit::kHit;
}

bool ray_hits_box(const Eigen::AlignedBox3d& box, const Vec3& o, const Vec3& inv_dir) {
  double tmin = 0.0;
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double t0 = (box.min()[a] - o[a]) * inv_dir[a];
    double t1 = (box.max()[a] - o[a]) * inv_dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax * (1.0 + 1e-12) + 1e-12) return false;
  }
  return true;
}

}  // namespace

std::optional<std::size_t> Bvh::count_crossings(const Vec3& origin, const Vec3& dir) const {
  const Vec3 inv_dir = dir.cwiseInverse();
  std::size_t crossings = 0;
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const std::uint32_t idx = stack[--top];
    const Node& node = nodes_[idx];
    if (!ray_hits_box(node.box, origin, inv_dir)) continue;
    if (node.is_leaf()) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        switch (intersect(origin, dir, corners_[order_[i]])) {
          case RayHit::kHit: ++crossings; break;
          case RayHit::kDegenerate: return std::nullopt;
          case RayHit::kMiss: break;
        }
      }
      continue;
    }
    stack[top++] = node.right;
    stack[top++] = idx + 1;
  }
  return crossings;
}

double signed_distance(const Bvh& bvh, const Vec3& x) {
  const double distance = std::sqrt(bvh.closest(x).squared_distance);
  if (distance == 0.0) return 0.0;
  Vec3 dir = Vec3(0.8506508083520399, 0.4253254041760200, 0.3090169943749474).normalized();
  std::mt19937_64 jitter(0x5eed);
  for (int attempt = 0; attempt < 32; ++attempt) {
    if (auto crossings = bvh.count_crossings(x, dir))
      return (*crossings % 2 == 1) ? -distance : distance;
    Vec3 g;
    do {
      g = Vec3(detail::uniform01(jitter), detail::uniform01(jitter), detail::uniform01(jitter)) * 2.0 -
          Vec3::Ones();
    } while (g.squaredNorm() > 1.0 || g.squaredNorm() < 1e-6);
    dir = g.normalized();
  }
  throw Error(ErrorCode::kDegenerate, "ray parity failed for every retry direction");
}

SignedDistanceOracle::SignedDistanceOracle(TriangleMesh mesh)
    : mesh_(std::move(mesh)), bvh_(mesh_) {}

double SignedDistanceOracle::unsigned_distance(const Vec3& x) const {
  return std::sqrt(bvh_.closest(x).squared_distance);
}

void SignedDistanceOracle::evaluate(std::span<const Vec3> points, std::span<double> out) const {
  if (points.size() != out.size())
    throw Error(ErrorCode::kInvalidArgument, "point and output spans differ in size");
  parallel_for(points.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = signed_distance(bvh_, points[i]);
  });
}

}  // namespace csdf
