#include "compact_sdf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "compact_sdf/error.hpp"
#include "rng.hpp"

namespace csdf {

double TriangleMesh::triangle_area(std::size_t t) const {
  const auto& tri = triangles[t];
  const Vec3& a = vertices[tri[0]];
  return 0.5 * (vertices[tri[1]] - a).cross(vertices[tri[2]] - a).norm();
}

double TriangleMesh::surface_area() const {
  double total = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) total += triangle_area(t);
  return total;
}

std::pair<Vec3, Vec3> TriangleMesh::bounds() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return {lo, hi};
}

std::size_t count_open_edges(const TriangleMesh& mesh) {
  std::vector<std::uint64_t> keys;
  keys.reserve(mesh.triangles.size() * 3);
  for (const auto& tri : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      std::uint64_t a = tri[e], b = tri[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      keys.push_back((a << 32) | b);
    }
  }
  std::sort(keys.begin(), keys.end());
  std::size_t open = 0;
  for (std::size_t i = 0; i < keys.size();) {
    std::size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    if (j - i != 2) ++open;
    i = j;
  }
  return open;
}

NormalizationTransform normalization_transform(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw Error(ErrorCode::kEmpty, "cannot normalize an empty mesh");
  const auto [lo, hi] = mesh.bounds();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0) || !std::isfinite(extent))
    throw Error(ErrorCode::kDegenerate, "mesh has zero extent");
  return {0.5 * (lo + hi), 1.8 / extent};
}

void validate_mesh(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) throw Error(ErrorCode::kEmpty, "mesh has no triangles");
  const std::size_t nv = mesh.vertices.size();
  for (const auto& tri : mesh.triangles)
    for (auto idx : tri)
      if (idx >= nv)
        throw Error(ErrorCode::kInvalidArgument,
                    "triangle index " + std::to_string(idx) + " out of range (" +
                        std::to_string(nv) + " vertices)");
  for (const auto& v : mesh.vertices)
    if (!v.allFinite()) throw Error(ErrorCode::kParse, "non-finite vertex coordinate");

  if (const std::size_t open = count_open_edges(mesh); open > 0) throw NonWatertightError(open);

  const double scale = normalization_transform(mesh).scale;
  std::size_t degenerate = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    if (mesh.triangle_area(t) * scale * scale <= 1e-12) ++degenerate;
  if (degenerate > 0)
    throw Error(ErrorCode::kDegenerate,
                std::to_string(degenerate) + " degenerate triangle(s) (area <= 1e-12)");
}

TriangleMesh normalize_mesh(const TriangleMesh& mesh) {
  const auto xf = normalization_transform(mesh);
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = (v - xf.center) * xf.scale;
  return out;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

std::vector<Vec3> sample_surface_points(const TriangleMesh& mesh, std::size_t count,
                                        std::uint64_t seed) {
  if (mesh.triangles.empty()) throw Error(ErrorCode::kEmpty, "cannot sample an empty mesh");
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.triangle_area(t);
    cdf[t] = total;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kDegenerate, "mesh has zero surface area");

  std::mt19937_64 gen(seed);
  std::vector<Vec3> points;
  points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = detail::uniform01(gen) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
    if (it == cdf.end()) --it;
    const auto& tri = mesh.triangles[static_cast<std::size_t>(it - cdf.begin())];
    const double s = std::sqrt(detail::uniform01(gen));
    const double r = detail::uniform01(gen);
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    points.push_back((1.0 - s) * a + s * (1.0 - r) * b + s * r * c);
  }
  return points;
}

namespace {

// Flips triangles whose normal disagrees with the supplied outward direction.
template <class Outward>
void orient_outward(TriangleMesh& mesh, Outward outward) {
  for (auto& tri : mesh.triangles) {
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot(outward((a + b + c) / 3.0)) < 0.0) std::swap(tri[1], tri[2]);
  }
}

}  // namespace

TriangleMesh make_icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                   {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : mesh.vertices) v.normalize();

  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      const auto idx = static_cast<std::uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& tri : mesh.triangles) {
      const auto ab = midpoint(tri[0], tri[1]);
      const auto bc = midpoint(tri[1], tri[2]);
      const auto ca = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], ab, ca});
      next.push_back({tri[1], bc, ab});
      next.push_back({tri[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.triangles = std::move(next);
  }
  for (auto& v : mesh.vertices) v *= radius;
  orient_outward(mesh, [](const Vec3& c) { return c; });
  return mesh;
}

TriangleMesh make_uv_sphere(int slices, int stacks, double radius) {
  TriangleMesh mesh;
  const double pi = 3.14159265358979323846;
  mesh.vertices.push_back({0, 0, radius});
  for (int s = 1; s < stacks; ++s) {
    const double theta = pi * s / stacks;
    for (int i = 0; i < slices; ++i) {
      const double phi = 2.0 * pi * i / slices;
      mesh.vertices.push_back(radius * Vec3(std::sin(theta) * std::cos(phi),
                                            std::sin(theta) * std::sin(phi), std::cos(theta)));
    }
  }
  mesh.vertices.push_back({0, 0, -radius});
  const auto south = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
  auto ring = [&](int s, int i) {
    return static_cast<std::uint32_t>(1 + (s - 1) * slices + (i % slices));
  };
  for (int i = 0; i < slices; ++i) mesh.triangles.push_back({0, ring(1, i), ring(1, i + 1)});
  for (int s = 1; s < stacks - 1; ++s) {
    for (int i = 0; i < slices; ++i) {
      mesh.triangles.push_back({ring(s, i), ring(s + 1, i), ring(s + 1, i + 1)});
      mesh.triangles.push_back({ring(s, i), ring(s + 1, i + 1), ring(s, i + 1)});
    }
  }
  for (int i = 0; i < slices; ++i)
    mesh.triangles.push_back({south, ring(stacks - 1, i + 1), ring(stacks - 1, i)});
  orient_outward(mesh, [](const Vec3& c) { return c; });
  return mesh;
}

TriangleMesh make_torus(int major_segments, int minor_segments, double major_radius,
                        double minor_radius) {
  TriangleMesh mesh;
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < major_segments; ++i) {
    const double u = 2.0 * pi * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      const double v = 2.0 * pi * j / minor_segments;
      const double ring = major_radius + minor_radius * std::cos(v);
      mesh.vertices.push_back({ring * std::cos(u), ring * std::sin(u), minor_radius * std::sin(v)});
    }
  }
  auto idx = [&](int i, int j) {
    return static_cast<std::uint32_t>((i % major_segments) * minor_segments + (j % minor_segments));
  };
  for (int i = 0; i < major_segments; ++i) {
    for (int j = 0; j < minor_segments; ++j) {
      mesh.triangles.push_back({idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)});
      mesh.triangles.push_back({idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)});
    }
  }
  orient_outward(mesh, [major_radius](const Vec3& c) {
    const Eigen::Vector2d planar(c.x(), c.y());
    const Eigen::Vector2d core = planar.normalized() * major_radius;
    return Vec3(c.x() - core.x(), c.y() - core.y(), c.z());
  });
  return mesh;
}

TriangleMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriangleMesh mesh;
  for (int i = 0; i < 8; ++i)
    mesh.vertices.push_back({(i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                             (i & 4) ? hi.z() : lo.z()});
  mesh.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                    {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  const Vec3 center = 0.5 * (lo + hi);
  orient_outward(mesh, [center](const Vec3& c) { return Vec3(c - center); });
  return mesh;
}

}  // namespace csdf
