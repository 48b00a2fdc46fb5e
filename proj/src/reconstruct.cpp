#include "compact_sdf/reconstruct.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>
#include <unordered_map>

#include "compact_sdf/error.hpp"
#include "mc_tables.hpp"

namespace csdf {
namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

std::mutex sink_mutex;
WarningSink& sink() {
  static WarningSink s = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return s;
}

}  // namespace

void set_warning_sink(WarningSink s) {
  std::lock_guard lock(sink_mutex);
  sink() = s ? std::move(s) : [](const std::string&) {};
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  sink()(message);
}

ReconMesh marching_cubes(const FieldFn& field, int resolution) {
  if (resolution < 2) throw Error(ErrorCode::kInvalidArgument, "marching cubes needs R >= 2");
  const int n = resolution + 1;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  // Planes per field call; bounds memory at high resolution.
  const int slab = std::max(1, static_cast<int>((std::size_t{1} << 21) / plane));

  ReconMesh out;
  out.resolution = resolution;
  out.branch = "field";
  TriangleMesh& mesh = out.mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> welded;

  std::vector<double> values;
  std::vector<Vec3> points;
  for (int p0 = 0; p0 < resolution; p0 += slab) {
    const int p1 = std::min(resolution, p0 + slab);
    const int planes = p1 - p0 + 1;
    points.resize(static_cast<std::size_t>(planes) * plane);
    values.resize(points.size());
    for (int a = 0; a < planes; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c)
          points[(static_cast<std::size_t>(a) * n + b) * n + c] =
              Vec3(lattice_coord(p0 + a, resolution), lattice_coord(b, resolution),
                   lattice_coord(c, resolution));
    field(points, values);
    auto value = [&](int i, int j, int k) {
      return values[(static_cast<std::size_t>(i - p0) * n + j) * n + k];
    };

    for (int i = p0; i < p1; ++i) {
      for (int j = 0; j < resolution; ++j) {
        for (int k = 0; k < resolution; ++k) {
          double v[8];
          int index = 0;
          for (int c = 0; c < 8; ++c) {
            v[c] = value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
            if (v[c] < 0.0) index |= 1 << c;
          }
          const int edges = detail::kEdgeTable[index];
          if (edges == 0) continue;
          std::uint32_t ids[12];
          for (int e = 0; e < 12; ++e) {
            if (!(edges & (1 << e))) continue;
            int a = kEdgeCorners[e][0], b = kEdgeCorners[e][1];
            // Interpolate from the lower endpoint so shared edges agree exactly.
            if (kCorner[a][0] + kCorner[a][1] + kCorner[a][2] >
                kCorner[b][0] + kCorner[b][1] + kCorner[b][2])
              std::swap(a, b);
            const long la[3] = {i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2]};
            int axis = 0;
            while (kCorner[a][axis] == kCorner[b][axis]) ++axis;
            const std::uint64_t key =
                ((static_cast<std::uint64_t>(la[0]) * n + la[1]) * n + la[2]) * 3 + axis;
            auto [it, inserted] = welded.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
            if (inserted) {
              const double t = v[a] / (v[a] - v[b]);
              Vec3 pos(lattice_coord(la[0], resolution), lattice_coord(la[1], resolution),
                       lattice_coord(la[2], resolution));
              pos[axis] += t * (2.0 / resolution);
              mesh.vertices.push_back(pos);
            }
            ids[e] = it->second;
          }
          for (int t = 0; detail::kTriTable[index][t] != -1; t += 3)
            mesh.triangles.push_back({ids[detail::kTriTable[index][t]],
                                      ids[detail::kTriTable[index][t + 2]],
                                      ids[detail::kTriTable[index][t + 1]]});
        }
      }
    }
  }
  return out;
}

template <class S>
Bandwidth compute_band(const ModelState<S>& state, const VectorX<S>& latent, int resolution,
                       int layers) {
  const Bandwidth seed =
      surface_cells(branch_field(state, Branch::kGeneralization, latent), resolution);
  if (seed.empty())
    warn("generalization field has no surface cells at R=" + std::to_string(resolution) +
         "; the band is empty");
  return dilate(seed, layers);
}

template <class S>
FieldFn fused_field(const ModelState<S>& state, VectorX<S> latent, Bandwidth band) {
  return [&state, z = std::move(latent), band = std::move(band)](std::span<const Vec3> points,
                                                                 std::span<double> values) {
    std::vector<std::size_t> inside, outside;
    for (std::size_t i = 0; i < points.size(); ++i)
      (band.contains_point(points[i]) ? inside : outside).push_back(i);
    auto run = [&](const std::vector<std::size_t>& idx, Branch branch) {
      if (idx.empty()) return;
      std::vector<Vec3> sub(idx.size());
      std::vector<double> res(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) sub[i] = points[idx[i]];
      evaluate_branch<S>(state, branch, z, sub, res);
      for (std::size_t i = 0; i < idx.size(); ++i) values[idx[i]] = res[i];
    };
    run(inside, Branch::kOverfitting);
    run(outside, Branch::kGeneralization);
  };
}

template <class S>
ReconMesh reconstruct(const ModelState<S>& state, const VectorX<S>& latent, int resolution,
                      int layers) {
  Bandwidth band = compute_band(state, latent, resolution, layers);
  ReconMesh out = marching_cubes(fused_field(state, latent, std::move(band)), resolution);
  out.branch = "fused";
  out.layers = layers;
  return out;
}

template <class S>
ReconMesh reconstruct_branch(const ModelState<S>& state, const VectorX<S>& latent, Branch branch,
                             int resolution) {
  ReconMesh out = marching_cubes(branch_field(state, branch, latent), resolution);
  out.branch = to_string(branch);
  return out;
}

#define CSDF_INSTANTIATE(S)                                                                   \
  template Bandwidth compute_band<S>(const ModelState<S>&, const VectorX<S>&, int, int);      \
  template FieldFn fused_field<S>(const ModelState<S>&, VectorX<S>, Bandwidth);               \
  template ReconMesh reconstruct<S>(const ModelState<S>&, const VectorX<S>&, int, int);       \
  template ReconMesh reconstruct_branch<S>(const ModelState<S>&, const VectorX<S>&, Branch, int);

CSDF_INSTANTIATE(float)
CSDF_INSTANTIATE(double)
#undef CSDF_INSTANTIATE

}  // namespace csdf
