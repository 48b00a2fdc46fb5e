#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "compact_sdf/geometry.hpp"

namespace csdf {

// Static 3-d tree for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  // Squared distance from q to the closest stored point.
  double nearest_squared(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in points_ for leaves
    std::int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };
  int build(std::uint32_t begin, std::uint32_t end, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
};

// Squared nearest-neighbour distance of every point of `queries` to `ref`.
std::vector<double> nearest_squared_distances(const KdTree& ref, std::span<const Vec3> queries);

// 0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2).
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

// Precision: share of `predicted` within tau of `truth`; recall the reverse.
FScore fscore(std::span<const Vec3> predicted, std::span<const Vec3> truth, double tau);

struct EvalReport {
  std::uint32_t shape_id = 0;
  double cd = 0.0;
  double f_score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double tau = 0.01;
  std::size_t n_points = 0;
  std::uint64_t seed = 0;

  static std::string csv_header();
  std::string csv_row() const;
  std::string pretty() const;
};

// Samples n_points from each mesh (same seed for both) and compares them.
// An empty reconstruction yields cd = infinity and zero scores.
EvalReport evaluate(const TriangleMesh& recon, const TriangleMesh& gt, std::size_t n_points,
                    double tau, std::uint64_t seed, std::uint32_t shape_id = 0);

}  // namespace csdf
