#include "compact_sdf/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "compact_sdf/bvh.hpp"
#include "compact_sdf/error.hpp"
#include "compact_sdf/io.hpp"
#include "compact_sdf/parallel.hpp"

namespace csdf {

FieldFn pointwise_field(std::function<double(const Vec3&)> fn) {
  return [fn = std::move(fn)](std::span<const Vec3> points, std::span<double> values) {
    parallel_for(points.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) values[i] = fn(points[i]);
    });
  };
}

FieldFn oracle_field(const SignedDistanceOracle& oracle) {
  return [&oracle](std::span<const Vec3> points, std::span<double> values) {
    oracle.evaluate(points, values);
  };
}

// ------------------------------------------------------------ Bandwidth

Bandwidth::Bandwidth(int resolution, int layers) : resolution_(resolution), layers_(layers) {
  if (resolution < 1) throw Error(ErrorCode::kInvalidArgument, "band resolution must be >= 1");
  mask_.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);
}

bool Bandwidth::contains(int i, int j, int k) const {
  if (i < 0 || j < 0 || k < 0 || i >= resolution_ || j >= resolution_ || k >= resolution_)
    return false;
  return mask_[linear(i, j, k)] != 0;
}

void Bandwidth::insert(int i, int j, int k) {
  if (i < 0 || j < 0 || k < 0 || i >= resolution_ || j >= resolution_ || k >= resolution_)
    throw Error(ErrorCode::kInvalidArgument, "cell index outside the band lattice");
  auto& m = mask_[linear(i, j, k)];
  if (!m) {
    m = 1;
    ++count_;
  }
}

CellIndex Bandwidth::cell_of(const Vec3& x) const {
  CellIndex c{};
  for (int a = 0; a < 3; ++a) {
    if (!(x[a] >= -1.0 && x[a] <= 1.0))
      throw Error(ErrorCode::kOutOfDomain, "point outside [-1, 1]^3");
    const double t = (x[a] + 1.0) * 0.5 * resolution_;
    c[a] = std::min(static_cast<int>(std::floor(t)), resolution_ - 1);
  }
  return c;
}

std::vector<CellIndex> Bandwidth::cells() const {
  std::vector<CellIndex> out;
  out.reserve(count_);
  for (int i = 0; i < resolution_; ++i)
    for (int j = 0; j < resolution_; ++j)
      for (int k = 0; k < resolution_; ++k)
        if (mask_[linear(i, j, k)]) out.push_back({i, j, k});
  return out;
}

namespace {

// Field values on lattice plane x = x_i: (R + 1)^2 values indexed j * (R + 1) + k.
void evaluate_plane(const FieldFn& field, int resolution, int i, std::vector<Vec3>& scratch,
                    std::vector<double>& values) {
  const int n = resolution + 1;
  scratch.resize(static_cast<std::size_t>(n) * n);
  values.resize(scratch.size());
  const double x = lattice_coord(i, resolution);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      scratch[static_cast<std::size_t>(j) * n + k] =
          Vec3(x, lattice_coord(j, resolution), lattice_coord(k, resolution));
  field(scratch, values);
}

}  // namespace

Bandwidth surface_cells(const FieldFn& field, int resolution) {
  if (resolution < 2) throw Error(ErrorCode::kInvalidArgument, "surface_cells needs R >= 2");
  Bandwidth band(resolution, 0);
  const int n = resolution + 1;
  const double half_diagonal = std::sqrt(3.0) / resolution;
  std::vector<Vec3> scratch;
  std::vector<double> prev, cur;
  evaluate_plane(field, resolution, 0, scratch, prev);
  for (int i = 1; i <= resolution; ++i) {
    evaluate_plane(field, resolution, i, scratch, cur);
    for (int j = 0; j < resolution; ++j) {
      for (int k = 0; k < resolution; ++k) {
        const std::size_t a = static_cast<std::size_t>(j) * n + k;
        const double corners[8] = {prev[a], prev[a + 1], prev[a + n], prev[a + n + 1],
                                   cur[a],  cur[a + 1],  cur[a + n],  cur[a + n + 1]};
        int negative = 0;
        double min_abs = std::abs(corners[0]);
        for (double v : corners) {
          negative += v < 0.0;
          min_abs = std::min(min_abs, std::abs(v));
        }
        if ((negative > 0 && negative < 8) || min_abs <= half_diagonal) band.insert(i - 1, j, k);
      }
    }
    std::swap(prev, cur);
  }
  return band;
}

Bandwidth dilate(const Bandwidth& band, int layers) {
  if (layers < 0) throw Error(ErrorCode::kInvalidArgument, "dilation layers must be >= 0");
  Bandwidth out = band;
  out.layers_ = band.layers_ + layers;
  if (layers == 0 || band.empty()) return out;
  const int r = band.resolution_;
  // n rounds of 3x3x3 dilation equal one (2n+1)^3 box dilation, which is
  // separable into three 1-D passes.
  std::vector<std::uint8_t> src = band.mask_;
  std::vector<std::uint8_t> dst(src.size());
  const std::size_t strides[3] = {static_cast<std::size_t>(r) * r, static_cast<std::size_t>(r), 1};
  for (int axis = 0; axis < 3; ++axis) {
    std::fill(dst.begin(), dst.end(), 0);
    const std::size_t stride = strides[axis];
    for (std::size_t idx = 0; idx < src.size(); ++idx) {
      if (!src[idx]) continue;
      const int coord = static_cast<int>((idx / stride) % r);
      const int lo = std::max(0, coord - layers);
      const int hi = std::min(r - 1, coord + layers);
      const std::size_t base = idx - static_cast<std::size_t>(coord) * stride;
      for (int c = lo; c <= hi; ++c) dst[base + static_cast<std::size_t>(c) * stride] = 1;
    }
    std::swap(src, dst);
  }
  out.mask_ = std::move(src);
  out.count_ = static_cast<std::size_t>(std::count(out.mask_.begin(), out.mask_.end(), 1));
  return out;
}

// ------------------------------------------------------------ SampleSet

std::size_t SampleSet::in_band_count() const {
  return static_cast<std::size_t>(std::count(in_band.begin(), in_band.end(), 1));
}

namespace {

SampleSet label_points(const FieldFn& field, std::vector<Vec3> points,
                       std::vector<std::uint8_t> in_band, std::uint32_t shape_id) {
  std::vector<double> values(points.size());
  field(points, values);
  SampleSet set;
  set.shape_id = shape_id;
  set.points.reserve(points.size());
  set.distances.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    set.points.push_back(points[i].cast<float>());
    set.distances.push_back(static_cast<float>(values[i]));
  }
  set.in_band = std::move(in_band);
  return set;
}

}  // namespace

SampleSet generate_queries(const FieldFn& field, const QueryConfig& cfg, std::uint32_t shape_id,
                           SampleStats* stats) {
  const int rc = cfg.coarse_resolution;
  const int rf = cfg.fine_resolution;
  if (rc < 1 || rf < 2 || rf % rc != 0)
    throw Error(ErrorCode::kInvalidArgument,
                "fine resolution must be a positive multiple of the coarse resolution");
  if (cfg.layers < 0) throw Error(ErrorCode::kInvalidArgument, "band layers must be >= 0");

  const Bandwidth band = dilate(surface_cells(field, rf), cfg.layers);
  const int n = rf + 1;
  auto vidx = [n](int a, int b, int c) {
    return (static_cast<std::size_t>(a) * n + b) * n + c;
  };
  std::vector<std::uint8_t> band_vertex(static_cast<std::size_t>(n) * n * n, 0);
  for (const auto& cell : band.cells())
    for (int d = 0; d < 8; ++d)
      band_vertex[vidx(cell[0] + (d & 1), cell[1] + ((d >> 1) & 1), cell[2] + ((d >> 2) & 1))] = 1;

  const int stride = rf / rc;
  SampleStats s;
  s.coarse = static_cast<std::size_t>(rc + 1) * (rc + 1) * (rc + 1);
  s.band_cells = band.size();
  std::vector<Vec3> points;
  std::vector<std::uint8_t> flags;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < n; ++c) {
        const bool coarse = a % stride == 0 && b % stride == 0 && c % stride == 0;
        const bool in_band = band_vertex[vidx(a, b, c)] != 0;
        if (in_band) ++s.band_vertices;
        if (in_band && coarse) ++s.overlap;
        if (!coarse && !in_band) continue;
        points.emplace_back(lattice_coord(a, rf), lattice_coord(b, rf), lattice_coord(c, rf));
        flags.push_back(in_band ? 1 : 0);
      }
    }
  }
  s.merged = points.size();
  if (stats) *stats = s;
  return label_points(field, std::move(points), std::move(flags), shape_id);
}

SampleSet generate_queries(const SignedDistanceOracle& oracle, const QueryConfig& cfg,
                           std::uint32_t shape_id, SampleStats* stats) {
  return generate_queries(oracle_field(oracle), cfg, shape_id, stats);
}

SampleSet generate_uniform_queries(const FieldFn& field, int resolution, std::uint32_t shape_id) {
  if (resolution < 1) throw Error(ErrorCode::kInvalidArgument, "resolution must be >= 1");
  std::vector<Vec3> points;
  const int n = resolution + 1;
  points.reserve(static_cast<std::size_t>(n) * n * n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        points.emplace_back(lattice_coord(a, resolution), lattice_coord(b, resolution),
                            lattice_coord(c, resolution));
  std::vector<std::uint8_t> flags(points.size(), 0);
  return label_points(field, std::move(points), std::move(flags), shape_id);
}

// ------------------------------------------------------------ CSMP files

namespace {
constexpr char kSampleMagic[4] = {'C', 'S', 'M', 'P'};
constexpr std::uint32_t kSampleVersion = 1;
}  // namespace

std::string encode_samples(const SampleSet& set) {
  if (set.distances.size() != set.size() || set.in_band.size() != set.size())
    throw Error(ErrorCode::kInvalidArgument, "sample set arrays differ in length");
  detail::ByteWriter w;
  w.reserve(20 + set.size() * 17);
  w.put_bytes(std::string_view(kSampleMagic, 4));
  w.put(kSampleVersion);
  w.put(set.shape_id);
  w.put(static_cast<std::uint64_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.put(set.points[i].x());
    w.put(set.points[i].y());
    w.put(set.points[i].z());
    w.put(set.distances[i]);
    w.put(static_cast<std::uint8_t>(set.in_band[i] ? 1 : 0));
  }
  return w.take();
}

SampleSet decode_samples(std::string_view bytes) {
  detail::ByteReader r(bytes, "CSMP");
  if (r.get_bytes(4) != std::string_view(kSampleMagic, 4))
    throw Error(ErrorCode::kParse, "not a CSMP sample file");
  if (const auto version = r.get<std::uint32_t>(); version != kSampleVersion)
    throw Error(ErrorCode::kParse, "unsupported CSMP version " + std::to_string(version));
  SampleSet set;
  set.shape_id = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / 17) throw Error(ErrorCode::kParse, "CSMP count exceeds file size");
  set.points.reserve(count);
  set.distances.reserve(count);
  set.in_band.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float x = r.get<float>();
    const float y = r.get<float>();
    const float z = r.get<float>();
    set.points.emplace_back(x, y, z);
    set.distances.push_back(r.get<float>());
    set.in_band.push_back(r.get<std::uint8_t>() ? 1 : 0);
  }
  return set;
}

void write_samples(const SampleSet& set, const std::filesystem::path& path) {
  atomic_write_file(path, encode_samples(set));
}

SampleSet read_samples(const std::filesystem::path& path) {
  return decode_samples(read_file(path));
}

}  // namespace csdf
