#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <type_traits>

#include <Eigen/Core>

#include "compact_sdf/error.hpp"
#include "compact_sdf/geometry.hpp"

namespace csdf {

template <class S>
using Tensor = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Learnable feature lattice over [-1, 1]^3 with G vertices per axis.
// features.col(v) is the feature of vertex v = (i * G + j) * G + k, with
// vertex (i, j, k) at (-1 + 2i/(G-1), -1 + 2j/(G-1), -1 + 2k/(G-1)).
template <class S>
struct FeatureGrid {
  int resolution = 0;
  int feature_dim = 0;
  Tensor<S> features;  // feature_dim x resolution^3

  FeatureGrid() = default;
  FeatureGrid(int g, int f) : resolution(g), feature_dim(f) {
    if (g < 2 || f < 1) throw Error(ErrorCode::kInvalidArgument, "feature grid needs G >= 2, F >= 1");
    features = Tensor<S>::Zero(f, static_cast<Eigen::Index>(g) * g * g);
  }

  std::size_t vertex_count() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t vertex_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * resolution + j) * resolution + k;
  }
  Vec3 vertex_position(int i, int j, int k) const {
    const double h = 2.0 / (resolution - 1);
    return {-1.0 + h * i, -1.0 + h * j, -1.0 + h * k};
  }

  // i.i.d. normal initialization.
  template <class Rng>
  void randomize(Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      for (Eigen::Index r = 0; r < features.rows(); ++r) features(r, c) = static_cast<S>(dist(rng));
  }
};

// The eight vertices of the cell enclosing x and their trilinear weights.
// Corner d has offsets (d & 1, (d >> 1) & 1, (d >> 2) & 1) along (x, y, z).
template <class S>
struct TrilinearStencil {
  std::array<std::size_t, 8> vertices;
  std::array<S, 8> weights;
};

// Throws Error(kOutOfDomain) outside [-1, 1]^3. Local coordinates within
// 1e-10 of a lattice plane are snapped onto it, so a query at a vertex
// reproduces that vertex's feature exactly.
template <class S>
TrilinearStencil<S> trilinear_stencil(const FeatureGrid<S>& grid, const Vec3& x) {
  const int g = grid.resolution;
  std::array<int, 3> base{};
  std::array<S, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    if (!(x[a] >= -1.0 && x[a] <= 1.0))
      throw Error(ErrorCode::kOutOfDomain, "grid interpolation outside [-1, 1]^3");
    double t = (x[a] + 1.0) * 0.5 * (g - 1);
    const double nearest = std::round(t);
    if (std::abs(t - nearest) < 1e-10) t = nearest;
    int cell = static_cast<int>(std::floor(t));
    cell = std::min(cell, g - 2);
    base[a] = cell;
    frac[a] = static_cast<S>(t - cell);
  }
  TrilinearStencil<S> st;
  for (int d = 0; d < 8; ++d) {
    const int dx = d & 1, dy = (d >> 1) & 1, dz = (d >> 2) & 1;
    st.vertices[d] = grid.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz);
    st.weights[d] = (dx ? frac[0] : S(1) - frac[0]) * (dy ? frac[1] : S(1) - frac[1]) *
                    (dz ? frac[2] : S(1) - frac[2]);
  }
  return st;
}

template <class S>
VectorX<S> interpolate(const FeatureGrid<S>& grid, const Vec3& x) {
  const auto st = trilinear_stencil(grid, x);
  VectorX<S> out = VectorX<S>::Zero(grid.feature_dim);
  for (int d = 0; d < 8; ++d)
    if (st.weights[d] != S(0))
      out.noalias() += st.weights[d] * grid.features.col(static_cast<Eigen::Index>(st.vertices[d]));
  return out;
}

// Gradient of a loss with respect to the eight touched vertex features,
// given dL/dc at x. Every other vertex receives zero.
template <class S>
struct VertexGradient {
  std::size_t vertex;
  VectorX<S> gradient;
};

template <class S>
std::array<VertexGradient<S>, 8> interpolate_backward(const FeatureGrid<S>& grid, const Vec3& x,
                                                      const Eigen::Ref<const VectorX<std::type_identity_t<S>>>& upstream) {
  if (upstream.size() != grid.feature_dim)
    throw Error(ErrorCode::kInvalidArgument, "upstream gradient has wrong length");
  const auto st = trilinear_stencil(grid, x);
  std::array<VertexGradient<S>, 8> out;
  for (int d = 0; d < 8; ++d) out[d] = {st.vertices[d], st.weights[d] * upstream};
  return out;
}

// Accumulates the same gradient into a dense feature_dim x G^3 buffer.
template <class S, class Derived>
void accumulate_interpolate_backward(const TrilinearStencil<S>& st,
                                     const Eigen::MatrixBase<Derived>& upstream,
                                     Tensor<S>& dense_gradient) {
  for (int d = 0; d < 8; ++d)
    if (st.weights[d] != S(0))
      dense_gradient.col(static_cast<Eigen::Index>(st.vertices[d])) += st.weights[d] * upstream;
}

struct PosEncConfig {
  int bands = 6;
  bool include_input = true;

  int output_size() const { return 3 * (2 * bands + (include_input ? 1 : 0)); }
};

// [x, y, z] (optional), then for k = 0..L-1 and each axis d the pair
// sin(2^k pi x_d), cos(2^k pi x_d).
template <class S, class Out>
void positional_encode_into(const PosEncConfig& cfg, const Vec3& x, Out&& out) {
  constexpr double kPi = 3.14159265358979323846;
  Eigen::Index o = 0;
  if (cfg.include_input)
    for (int d = 0; d < 3; ++d) out(o++) = static_cast<S>(x[d]);
  // Angle doubling between exact sin/cos refreshes every fourth band keeps
  // the error within a few ulps while skipping most transcendental calls.
  std::array<double, 3> sn{}, cs{};
  for (int k = 0; k < cfg.bands; ++k) {
    for (int d = 0; d < 3; ++d) {
      if (k % 4 == 0) {
        const double angle = std::ldexp(kPi, k) * x[d];
        sn[d] = std::sin(angle);
        cs[d] = std::cos(angle);
      } else {
        const double s = sn[d], c = cs[d];
        sn[d] = 2.0 * s * c;
        cs[d] = (c - s) * (c + s);
      }
      out(o++) = static_cast<S>(sn[d]);
      out(o++) = static_cast<S>(cs[d]);
    }
  }
}

template <class S = double>
VectorX<S> positional_encode(const PosEncConfig& cfg, const Vec3& x) {
  if (cfg.bands < 1) throw Error(ErrorCode::kInvalidArgument, "positional encoding needs L >= 1");
  VectorX<S> out(cfg.output_size());
  positional_encode_into<S>(cfg, x, out);
  return out;
}

}  // namespace csdf
