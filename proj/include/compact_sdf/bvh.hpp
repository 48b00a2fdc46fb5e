#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "compact_sdf/geometry.hpp"

namespace csdf {

// Bounding-volume hierarchy over a triangle mesh. Nodes are stored in
// depth-first order: an interior node's left child immediately follows it.
class Bvh {
 public:
  struct Node {
    Eigen::AlignedBox3d box;
    std::uint32_t first = 0;  // leaf: offset into triangle_order()
    std::uint32_t count = 0;  // leaf: triangle count; 0 marks an interior node
    std::uint32_t right = 0;  // interior: index of the right child
    bool is_leaf() const { return count > 0; }
  };

  struct ClosestHit {
    double squared_distance;
    std::uint32_t triangle;
    Vec3 point;
  };

  explicit Bvh(const TriangleMesh& mesh, std::uint32_t leaf_size = 4);

  ClosestHit closest(const Vec3& p) const;

  // Number of triangles crossed by origin + t * dir for t > 0. Empty when the
  // ray passes within 1e-12 (barycentric) of an edge or vertex, or runs
  // parallel inside a triangle's plane; callers retry with another direction.
  std::optional<std::size_t> count_crossings(const Vec3& origin, const Vec3& dir) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::uint32_t>& triangle_order() const { return order_; }
  std::size_t triangle_count() const { return order_.size(); }

 private:
  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::uint32_t leaf_size,
                      const std::vector<Vec3>& centroids);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<std::array<Vec3, 3>> corners_;  // indexed by original triangle id
};

// Exact signed distance to a watertight mesh: magnitude from the BVH
// closest-point query, sign from ray-crossing parity (negative inside).
double signed_distance(const Bvh& bvh, const Vec3& x);

// Owns a mesh and its BVH. Immutable after construction, so concurrent
// queries are safe.
class SignedDistanceOracle {
 public:
  explicit SignedDistanceOracle(TriangleMesh mesh);

  double operator()(const Vec3& x) const { return signed_distance(bvh_, x); }
  double unsigned_distance(const Vec3& x) const;

  // Batch evaluation, parallel over points.
  void evaluate(std::span<const Vec3> points, std::span<double> out) const;

  const TriangleMesh& mesh() const { return mesh_; }
  const Bvh& bvh() const { return bvh_; }

 private:
  TriangleMesh mesh_;
  Bvh bvh_;
};

}  // namespace csdf
