#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace csdf {

using Vec3 = Eigen::Vector3d;
using Triangle = std::array<std::uint32_t, 3>;

// Triangle soup with shared vertices. Meshes coming out of load_mesh are
// watertight and free of degenerate faces; meshes built by hand are checked
// with validate_mesh.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
  double triangle_area(std::size_t t) const;
  double surface_area() const;
  // Axis-aligned bounds over all vertices.
  std::pair<Vec3, Vec3> bounds() const;
};

// Number of undirected edges not shared by exactly two triangles.
std::size_t count_open_edges(const TriangleMesh& mesh);

// Throws Error(kInvalidArgument) for bad indices, NonWatertightError for open
// edges, and Error(kDegenerate) for triangles whose area, measured after the
// normalization scale is applied, is at most 1e-12.
void validate_mesh(const TriangleMesh& mesh);

// OBJ (ASCII `v`/`f`, 1-based or negative indices, polygons fan-split) or PLY
// (ascii / binary little-endian). The result is validated.
TriangleMesh load_mesh(const std::filesystem::path& path);
// Same formats without validation, for reconstructions that may be empty or
// open where the surface leaves the domain.
TriangleMesh read_mesh(const std::filesystem::path& path);

// Vertex positions only, from OBJ `v` records or the PLY vertex element.
// No topology checks; used for partial point clouds.
std::vector<Vec3> load_points(const std::filesystem::path& path);

// ASCII OBJ; each header line is written as a `# ` comment.
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path,
               const std::vector<std::string>& header = {});

// Binary little-endian PLY with float vertices and uchar/int face lists.
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

// Scale factor and center that normalize_mesh applies: x' = (x - center) * scale.
struct NormalizationTransform {
  Vec3 center;
  double scale;
};
NormalizationTransform normalization_transform(const TriangleMesh& mesh);

// Centers the bounding box at the origin and scales uniformly so the longest
// side spans 1.8, i.e. the mesh fits [-0.9, 0.9]^3 with aspect ratio kept.
TriangleMesh normalize_mesh(const TriangleMesh& mesh);

// Area-weighted triangle choice and uniform barycentric sampling.
// Deterministic for a fixed seed.
std::vector<Vec3> sample_surface_points(const TriangleMesh& mesh, std::size_t count,
                                        std::uint64_t seed);

// Closest point on triangle (a, b, c) to p, by Voronoi-region classification.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Procedural shapes used by fixtures and tests.
TriangleMesh make_icosphere(int subdivisions, double radius);
TriangleMesh make_uv_sphere(int slices, int stacks, double radius);
TriangleMesh make_torus(int major_segments, int minor_segments, double major_radius,
                        double minor_radius);
TriangleMesh make_box(const Vec3& lo, const Vec3& hi);

}  // namespace csdf
