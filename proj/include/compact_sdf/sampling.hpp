#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "compact_sdf/geometry.hpp"

namespace csdf {

class SignedDistanceOracle;

// Batch distance field over [-1, 1]^3: fills values[i] for points[i].
using FieldFn = std::function<void(std::span<const Vec3> points, std::span<double> values)>;

// Adapts a single-point function; evaluation is parallel over points.
FieldFn pointwise_field(std::function<double(const Vec3&)> fn);
FieldFn oracle_field(const SignedDistanceOracle& oracle);

// Coordinate of lattice vertex `index` on an R-cell lattice over [-1, 1].
inline double lattice_coord(long index, int resolution) {
  return -1.0 + 2.0 * static_cast<double>(index) / resolution;
}

using CellIndex = std::array<int, 3>;

// A set of cells of an R^3 lattice over [-1, 1]^3, plus the dilation count
// that produced it.
class Bandwidth {
 public:
  Bandwidth() = default;
  explicit Bandwidth(int resolution, int layers = 0);

  int resolution() const { return resolution_; }
  int layers() const { return layers_; }
  void set_layers(int layers) { layers_ = layers; }

  bool contains(int i, int j, int k) const;
  bool contains(const CellIndex& c) const { return contains(c[0], c[1], c[2]); }
  void insert(int i, int j, int k);

  // Half-open cell lookup: the cell [c_i, c_{i+1}) holding x, with x = 1
  // assigned to the last cell. Throws for points outside [-1, 1]^3.
  CellIndex cell_of(const Vec3& x) const;
  bool contains_point(const Vec3& x) const { return contains(cell_of(x)); }

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  // Member cells in lexicographic (i, j, k) order.
  std::vector<CellIndex> cells() const;

  bool operator==(const Bandwidth& other) const {
    return resolution_ == other.resolution_ && mask_ == other.mask_;
  }

 private:
  friend Bandwidth dilate(const Bandwidth& band, int layers);
  std::size_t linear(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * resolution_ + j) * resolution_ + k;
  }

  int resolution_ = 0;
  int layers_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint8_t> mask_;
};

// Cells whose eight corner values are not all of one sign, or whose
// smallest |corner value| is at most half the cell diagonal.
Bandwidth surface_cells(const FieldFn& field, int resolution);

// `layers` rounds of 26-neighbourhood dilation, clipped to the lattice.
Bandwidth dilate(const Bandwidth& band, int layers);

// Training queries for one shape. Points are fine-lattice vertices stored in
// single precision, emitted in lexicographic lattice order.
struct SampleSet {
  std::uint32_t shape_id = 0;
  std::vector<Eigen::Vector3f> points;
  std::vector<float> distances;
  std::vector<std::uint8_t> in_band;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::size_t in_band_count() const;
};

struct SampleStats {
  std::size_t coarse = 0;        // (R_c + 1)^3
  std::size_t band_vertices = 0;  // distinct vertices of band cells
  std::size_t overlap = 0;        // coarse points that are also band vertices
  std::size_t merged = 0;         // coarse + band_vertices - overlap
  std::size_t band_cells = 0;
};

struct QueryConfig {
  int coarse_resolution = 32;
  int fine_resolution = 128;
  int layers = 3;
};

// Sparse coarse lattice everywhere plus the dense fine lattice inside the
// dilated surface band, merged without duplicates.
SampleSet generate_queries(const FieldFn& field, const QueryConfig& cfg, std::uint32_t shape_id,
                           SampleStats* stats = nullptr);
SampleSet generate_queries(const SignedDistanceOracle& oracle, const QueryConfig& cfg,
                           std::uint32_t shape_id, SampleStats* stats = nullptr);

// Full (R + 1)^3 vertex lattice, every point off-band.
SampleSet generate_uniform_queries(const FieldFn& field, int resolution, std::uint32_t shape_id);

// CSMP: "CSMP", u32 version = 1, u32 shape_id, u64 count, then per point
// f32 x, f32 y, f32 z, f32 s, u8 in_band. Little-endian.
std::string encode_samples(const SampleSet& set);
SampleSet decode_samples(std::string_view bytes);
void write_samples(const SampleSet& set, const std::filesystem::path& path);
SampleSet read_samples(const std::filesystem::path& path);

}  // namespace csdf
