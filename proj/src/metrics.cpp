#include "compact_sdf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>

#include "compact_sdf/error.hpp"
#include "compact_sdf/parallel.hpp"

namespace csdf {
namespace {

constexpr std::uint32_t kLeafSize = 8;

void require_points(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmpty, "metric needs non-empty point sets");
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw Error(ErrorCode::kEmpty, "kd-tree needs at least one point");
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points_.size()), 0);
}

int KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo = points_[begin], hi = points_[begin];
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[i]);
    hi = hi.cwiseMax(points_[i]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid, points_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  const double split = points_[mid][axis];
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

// Points in the left subtree have coordinate <= split, right ones >= split.
void KdTree::search(int node, const Vec3& q, double& best) const {
  const Node& nd = nodes_[node];
  if (nd.axis < 0) {
    for (std::uint32_t i = nd.begin; i < nd.end; ++i) best = std::min(best, (points_[i] - q).squaredNorm());
    return;
  }
  const double diff = q[nd.axis] - nd.split;
  const int near = diff < 0.0 ? nd.left : nd.right;
  const int far = diff < 0.0 ? nd.right : nd.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_squared(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return best;
}

std::vector<double> nearest_squared_distances(const KdTree& ref, std::span<const Vec3> queries) {
  std::vector<double> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = ref.nearest_squared(queries[i]);
  });
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double share_within(const std::vector<double>& sq, double tau) {
  const double t2 = tau * tau;
  const auto hits = std::count_if(sq.begin(), sq.end(), [t2](double d) { return d <= t2; });
  return static_cast<double>(hits) / static_cast<double>(sq.size());
}

FScore make_fscore(double precision, double recall) {
  FScore f{precision, recall, 0.0};
  if (precision + recall > 0.0) f.f_score = 2.0 * precision * recall / (precision + recall);
  return f;
}

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require_points(a, b);
  const auto ab = nearest_squared_distances(KdTree(b), a);
  const auto ba = nearest_squared_distances(KdTree(a), b);
  return 0.5 * (mean(ab) + mean(ba));
}

FScore fscore(std::span<const Vec3> predicted, std::span<const Vec3> truth, double tau) {
  require_points(predicted, truth);
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "F-score threshold must be positive");
  const auto pt = nearest_squared_distances(KdTree(truth), predicted);
  const auto tp = nearest_squared_distances(KdTree(predicted), truth);
  return make_fscore(share_within(pt, tau), share_within(tp, tau));
}

EvalReport evaluate(const TriangleMesh& recon, const TriangleMesh& gt, std::size_t n_points,
                    double tau, std::uint64_t seed, std::uint32_t shape_id) {
  if (gt.empty()) throw Error(ErrorCode::kEmpty, "ground-truth mesh is empty");
  if (n_points == 0) throw Error(ErrorCode::kInvalidArgument, "evaluation needs n_points > 0");
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "F-score threshold must be positive");
  EvalReport r;
  r.shape_id = shape_id;
  r.tau = tau;
  r.n_points = n_points;
  r.seed = seed;
  if (recon.empty()) {
    r.cd = std::numeric_limits<double>::infinity();
    return r;
  }
  const auto pred = sample_surface_points(recon, n_points, seed);
  const auto truth = sample_surface_points(gt, n_points, seed);
  const auto pt = nearest_squared_distances(KdTree(truth), pred);
  const auto tp = nearest_squared_distances(KdTree(pred), truth);
  r.cd = 0.5 * (mean(pt) + mean(tp));
  const FScore f = make_fscore(share_within(pt, tau), share_within(tp, tau));
  r.precision = f.precision;
  r.recall = f.recall;
  r.f_score = f.f_score;
  return r;
}

std::string EvalReport::csv_header() {
  return "shape_id,cd,fscore,precision,recall,tau,n_points,seed";
}

std::string EvalReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%u,%.9g,%.9g,%.9g,%.9g,%.9g,%zu,%llu", shape_id, cd, f_score,
                precision, recall, tau, n_points, static_cast<unsigned long long>(seed));
  return buf;
}

std::string EvalReport::pretty() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "shape %u\n  chamfer    %.6e\n  f-score    %.6f\n  precision  %.6f\n"
                "  recall     %.6f\n  tau        %g\n  points     %zu\n  seed       %llu\n",
                shape_id, cd, f_score, precision, recall, tau, n_points,
                static_cast<unsigned long long>(seed));
  return buf;
}

}  // namespace csdf
