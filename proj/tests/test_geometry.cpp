#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "compact_sdf/error.hpp"
#include "compact_sdf/geometry.hpp"
#include "oracles.hpp"

using namespace csdf;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto dir = std::filesystem::temp_directory_path() / "csdf_geometry_test";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

const char* kTetraObj =
    "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
    "f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";

}  // namespace

TEST_CASE("tetrahedron OBJ loads watertight") {
  const auto mesh = load_mesh(temp_file("tetra.obj", kTetraObj));
  CHECK(mesh.vertices.size() == 4);
  CHECK(mesh.triangles.size() == 4);
  CHECK(count_open_edges(mesh) == 0);
}

TEST_CASE("OBJ with slash tokens, negative indices and a quad") {
  const std::string body =
      "# cube\nv -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n"
      "vn 0 0 1\n"
      "f 1/1/1 4/2/1 3/3/1 2/4/1\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf -8 -4 -1 -5\n";
  const auto mesh = load_mesh(temp_file("cube.obj", body));
  CHECK(mesh.triangles.size() == 12);
  CHECK(std::abs(oracle::signed_volume(mesh)) == doctest::Approx(8.0));
}

TEST_CASE("open mesh is rejected with the open edge count") {
  const std::string body = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\n";
  try {
    load_mesh(temp_file("open.obj", body));
    FAIL("expected NonWatertightError");
  } catch (const NonWatertightError& e) {
    CHECK(e.open_edges() == 3);
    CHECK(e.code() == ErrorCode::kNonWatertight);
  }
}

TEST_CASE("closed mesh with a zero-area triangle is rejected as degenerate") {
  // Split face (a, b, c) at the midpoint m of a-c and close the gap with the
  // flat triangle (a, m, c): still watertight, one face has no area.
  TriangleMesh m = make_box({-1, -1, -1}, {1, 1, 1});
  const auto [a, b, c] = m.triangles[0];
  m.vertices.push_back(0.5 * (m.vertices[a] + m.vertices[c]));
  const auto mid = static_cast<std::uint32_t>(m.vertices.size() - 1);
  m.triangles[0] = {a, b, mid};
  m.triangles.push_back({mid, b, c});
  m.triangles.push_back({a, mid, c});
  REQUIRE(count_open_edges(m) == 0);
  try {
    validate_mesh(m);
    FAIL("expected degenerate error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("bad face index is a parse or argument error") {
  CHECK_THROWS_AS(load_mesh(temp_file("bad.obj", "v 0 0 0\nf 1 2 3\n")), Error);
}

TEST_CASE("missing file is an IO error") {
  try {
    load_mesh("/nonexistent/mesh.obj");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("ASCII PLY loads") {
  const std::string body =
      "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
      "property float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n"
      "0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
  const auto mesh = load_mesh(temp_file("tetra.ply", body));
  CHECK(mesh.triangles.size() == 4);
  CHECK(mesh.vertices[3].z() == 1.0);
}

TEST_CASE("binary PLY round trip") {
  const auto sphere = make_icosphere(2, 0.7);
  const auto dir = std::filesystem::temp_directory_path() / "csdf_geometry_test";
  std::filesystem::create_directories(dir);
  write_ply(sphere, dir / "sphere.ply");
  const auto back = load_mesh(dir / "sphere.ply");
  REQUIRE(back.vertices.size() == sphere.vertices.size());
  REQUIRE(back.triangles == sphere.triangles);
  for (std::size_t i = 0; i < back.vertices.size(); ++i)
    CHECK((back.vertices[i] - sphere.vertices[i]).norm() < 1e-6);
}

TEST_CASE("OBJ round trip keeps header comments") {
  const auto box = make_box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
  const auto dir = std::filesystem::temp_directory_path() / "csdf_geometry_test";
  write_obj(box, dir / "box.obj", {"branch fused", "resolution 64"});
  std::ifstream in(dir / "box.obj");
  std::string first;
  std::getline(in, first);
  CHECK(first == "# branch fused");
  const auto back = load_mesh(dir / "box.obj");
  CHECK(back.triangles.size() == 12);
}

TEST_CASE("normalization fits the longest side to 1.8") {
  const auto box = make_box({2, 3, 4}, {6, 5, 5});
  const auto n = normalize_mesh(box);
  const auto [lo, hi] = n.bounds();
  CHECK((hi - lo).maxCoeff() == doctest::Approx(1.8).epsilon(1e-12));
  CHECK((hi + lo).norm() < 1e-12);
  CHECK(hi.x() == doctest::Approx(0.9));
  CHECK(hi.y() == doctest::Approx(0.45));
}

TEST_CASE("normalization is idempotent") {
  const auto once = normalize_mesh(make_torus(24, 12, 0.6, 0.2));
  const auto twice = normalize_mesh(once);
  for (std::size_t i = 0; i < once.vertices.size(); ++i)
    CHECK((once.vertices[i] - twice.vertices[i]).norm() < 1e-12);
}

TEST_CASE("procedural shapes are closed and outward") {
  for (const auto& m : {make_icosphere(3, 0.5), make_uv_sphere(25, 11, 0.5),
                        make_torus(32, 16, 0.6, 0.25), make_box({-1, -1, -1}, {1, 1, 1})}) {
    CHECK_NOTHROW(validate_mesh(m));
    CHECK(oracle::signed_volume(m) > 0.0);
  }
  CHECK(make_icosphere(3, 1.0).triangles.size() == 1280);
  CHECK(make_uv_sphere(25, 11, 1.0).triangles.size() == 500);
  CHECK(oracle::euler_characteristic(make_torus(32, 16, 0.6, 0.25)) == 0);
}

TEST_CASE("surface samples lie on the mesh and are deterministic") {
  const auto sphere = make_icosphere(3, 0.5);
  const auto a = sample_surface_points(sphere, 2000, 7);
  const auto b = sample_surface_points(sphere, 2000, 7);
  const auto c = sample_surface_points(sphere, 2000, 8);
  CHECK(a == b);
  CHECK(a != c);
  for (const auto& p : a) CHECK(p.norm() <= 0.5 + 1e-12);
  for (std::size_t i = 0; i < 50; ++i) {
    double best = 1e9;
    for (const auto& t : sphere.triangles)
      best = std::min(best, oracle::triangle_distance_sq(a[i], sphere.vertices[t[0]],
                                                          sphere.vertices[t[1]], sphere.vertices[t[2]]));
    CHECK(best < 1e-20);
  }
}

TEST_CASE("area-weighted sampling follows triangle areas") {
  // Box with one face twice as large in area share: a 2x1x1 box.
  const auto box = make_box({0, 0, 0}, {2, 1, 1});
  const auto pts = sample_surface_points(box, 100000, 3);
  std::size_t on_end_caps = 0;
  for (const auto& p : pts) on_end_caps += (p.x() < 1e-12 || p.x() > 2 - 1e-12);
  // End caps: area 2 of total 10.
  CHECK(static_cast<double>(on_end_caps) / pts.size() == doctest::Approx(0.2).epsilon(0.03));
}

TEST_CASE("closest point on triangle matches the oracle") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 q = closest_point_on_triangle(p, a, b, c);
    CHECK((p - q).squaredNorm() == doctest::Approx(oracle::triangle_distance_sq(p, a, b, c)).epsilon(1e-12));
  }
}

TEST_CASE("canonical cube OBJ: 8 vertices, 12 triangles") {
  const std::string body =
      "v 0 0 0\nv 2 0 0\nv 2 2 0\nv 0 2 0\nv 0 0 2\nv 2 0 2\nv 2 2 2\nv 0 2 2\n"
      "f 1 4 3\nf 1 3 2\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\n"
      "f 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";
  const auto mesh = load_mesh(temp_file("cube8.obj", body));
  CHECK(mesh.vertices.size() == 8);
  CHECK(mesh.triangles.size() == 12);
  const auto n = normalize_mesh(mesh);
  const auto [lo, hi] = n.bounds();
  CHECK((lo - Vec3::Constant(-0.9)).norm() < 1e-12);
  CHECK((hi - Vec3::Constant(0.9)).norm() < 1e-12);
}

TEST_CASE("open quad reports four boundary edges") {
  const std::string body = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n";
  try {
    load_mesh(temp_file("quad.obj", body));
    FAIL("expected NonWatertightError");
  } catch (const NonWatertightError& e) {
    CHECK(e.open_edges() == 4);
  }
}

TEST_CASE("icosphere written and reloaded keeps 642 vertices") {
  const auto ico = make_icosphere(3, 0.8);
  REQUIRE(ico.vertices.size() == 642);
  const auto dir = std::filesystem::temp_directory_path() / "csdf_geometry_test";
  write_obj(ico, dir / "ico.obj");
  const auto back = load_mesh(dir / "ico.obj");
  CHECK(back.vertices.size() == 642);
  CHECK(count_open_edges(back) == 0);
}

TEST_CASE("single triangle samples stay inside it") {
  TriangleMesh tri;
  tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  tri.triangles = {{0, 1, 2}};
  const auto pts = sample_surface_points(tri, 3, 7);
  REQUIRE(pts.size() == 3);
  for (const auto& p : pts) {
    CHECK(p.x() >= 0.0);
    CHECK(p.y() >= 0.0);
    CHECK(p.x() + p.y() <= 1.0 + 1e-15);
    CHECK(p.z() == 0.0);
  }
}

TEST_CASE("triangles with areas 1 and 3 receive samples in proportion") {
  TriangleMesh m;
  // Right triangles with legs (1, 2) and (3, 2): areas 1 and 3, disjoint in x.
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 2, 0),
                Vec3(10, 0, 0), Vec3(13, 0, 0), Vec3(10, 2, 0)};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  const auto pts = sample_surface_points(m, 40000, 1);
  const auto second = std::count_if(pts.begin(), pts.end(), [](const Vec3& p) { return p.x() >= 10.0; });
  CHECK(std::abs(second - 30000) <= 500);
}
