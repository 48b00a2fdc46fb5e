#pragma once

#include <string>

#include "compact_sdf/model.hpp"
#include "compact_sdf/sampling.hpp"

namespace csdf {

struct ReconMesh {
  TriangleMesh mesh;
  int resolution = 0;
  std::string branch;  // "fused", "generalization", "overfitting" or "field"
  int layers = -1;     // band dilation; -1 when no band was used
};

// Classic 256-case marching cubes on the (R + 1)^3 corner lattice over
// [-1, 1]^3. Corners with value < 0 are inside. Vertices on shared lattice
// edges are welded; triangles face outward (towards positive values).
ReconMesh marching_cubes(const FieldFn& field, int resolution);

// Receives non-fatal diagnostics such as an empty band. Defaults to stderr.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

// Surface cells of the generalization field at R, dilated `layers` times.
// An empty result is reported through the warning sink.
template <class S>
Bandwidth compute_band(const ModelState<S>& state, const VectorX<S>& latent, int resolution,
                       int layers);

// Overfitting branch inside band cells, generalization branch elsewhere,
// with half-open cell membership.
template <class S>
FieldFn fused_field(const ModelState<S>& state, VectorX<S> latent, Bandwidth band);

// Band from the generalization field, then marching cubes over the fused
// field, both at `resolution`.
template <class S>
ReconMesh reconstruct(const ModelState<S>& state, const VectorX<S>& latent, int resolution,
                      int layers);

// Marching cubes over a single branch.
template <class S>
ReconMesh reconstruct_branch(const ModelState<S>& state, const VectorX<S>& latent, Branch branch,
                             int resolution);

}  // namespace csdf
