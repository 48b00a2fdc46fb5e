#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "compact_sdf/field.hpp"
#include "compact_sdf/sampling.hpp"

namespace csdf {

template <class S>
using WeightMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Architecture of both branches, the feature grid and the latent table.
struct ModelConfig {
  int latent_dim = 16;
  int grid_resolution = 32;
  int feature_dim = 16;
  int hidden_layers = 4;
  int hidden_width = 64;
  PosEncConfig pos_enc;
  double grid_init_std = 0.01;

  int gen_input_width() const { return pos_enc.output_size() + latent_dim; }
  int ovf_input_width() const { return 3 + feature_dim + latent_dim; }
};

struct TrainConfig {
  int epochs = 400;
  double lr_grid = 1e-1;
  double lr_latent = 1e-3;
  double lr_net = 5e-4;
  double decay = 0.5;
  int decay_every = 1000;
  double lambda_latent = 1e-4;
  double lambda_grid = 1e-4;
  double sigma_latent = 1.0;
  double sigma_grid = 1.0;
  std::size_t batch_size = 8192;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoint callbacks; 0 disables
  bool ovf_in_band_only = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  // Learning-rate multiplier in effect during `epoch` (0-based).
  double lr_scale(std::uint32_t epoch) const;
};

enum class ParamGroup { kNetwork, kGrid, kLatent };

// ReLU on hidden layers, identity on the single output.
template <class S>
struct Mlp {
  std::vector<WeightMatrix<S>> weights;  // layer l: width[l+1] x width[l]
  std::vector<VectorX<S>> biases;

  int layer_count() const { return static_cast<int>(weights.size()); }
  int input_width() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  std::vector<int> widths() const;
};

// Every learnable tensor. Raw storage order of each block equals its
// serialized order: weights row-major, grid features vertex-major, latents
// shape-major.
template <class S>
struct Parameters {
  Mlp<S> gen;
  Mlp<S> ovf;
  FeatureGrid<S> grid;
  Tensor<S> latents;  // latent_dim x shape_count

  // fn(S* data, Eigen::Index size, ParamGroup group) in declared order:
  // gen (W, b per layer), ovf (W, b per layer), grid, latents.
  template <class Fn>
  void for_each_block(Fn&& fn) {
    visit_mlp(gen, fn);
    visit_mlp(ovf, fn);
    fn(grid.features.data(), grid.features.size(), ParamGroup::kGrid);
    fn(latents.data(), latents.size(), ParamGroup::kLatent);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<Parameters*>(this)->for_each_block(
        [&](S* data, Eigen::Index n, ParamGroup g) { fn(static_cast<const S*>(data), n, g); });
  }

  Parameters zeros_like() const;
  void set_zero();
  std::size_t scalar_count() const;

 private:
  template <class M, class Fn>
  static void visit_mlp(M& mlp, Fn& fn) {
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
      fn(mlp.weights[l].data(), mlp.weights[l].size(), ParamGroup::kNetwork);
      fn(mlp.biases[l].data(), mlp.biases[l].size(), ParamGroup::kNetwork);
    }
  }
};

template <class S>
struct ModelState {
  ModelConfig config;
  Parameters<S> params;
  Parameters<S> adam_m;
  Parameters<S> adam_v;
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;

  std::uint32_t shape_count() const { return static_cast<std::uint32_t>(params.latents.cols()); }
  // Throws Error(kUnknownShape).
  VectorX<S> latent(std::uint32_t shape_id) const;
  // Mean of all trained latents.
  VectorX<S> mean_latent() const;

  template <class T>
  ModelState<T> cast() const;
};

// Kaiming-uniform (fan-in) weights, zero biases, N(0, grid_init_std) grid
// features, N(0, 1/sqrt(D)) latents, zero optimizer moments.
template <class S>
ModelState<S> create_model(const ModelConfig& config, std::uint32_t shape_count,
                           std::uint64_t seed);

// ------------------------------------------------------------ evaluation

enum class Branch { kGeneralization, kOverfitting };
const char* to_string(Branch branch);

// Batched inference for one branch with an explicit latent. Points are
// processed in fixed-size zero-padded chunks, so each point's value does
// not depend on which other points share the call.
template <class S>
void evaluate_branch(const ModelState<S>& state, Branch branch,
                     const Eigen::Ref<const VectorX<S>>& latent, std::span<const Vec3> points,
                     std::span<double> out);

template <class S>
double forward_gen(const ModelState<S>& state, const Vec3& x, std::uint32_t shape_id);
template <class S>
double forward_ovf(const ModelState<S>& state, const Vec3& x, std::uint32_t shape_id);

// Field adapter over one branch.
template <class S>
FieldFn branch_field(const ModelState<S>& state, Branch branch, VectorX<S> latent);

// ------------------------------------------------------------ loss

template <class S>
struct Batch {
  std::uint32_t shape_id = 0;
  Eigen::Matrix<S, 3, Eigen::Dynamic> points;
  Eigen::Matrix<S, 1, Eigen::Dynamic> targets;
  std::vector<std::uint8_t> in_band;
  // Optional per-point precomputation used by compute_loss when sized to
  // the batch: positional encodings (one row per point) and grid stencils.
  Tensor<S> encoded;
  std::vector<TrilinearStencil<S>> stencils;

  Eigen::Index size() const { return points.cols(); }
};

template <class S>
Batch<S> make_batch(const SampleSet& set, std::span<const std::size_t> indices);
template <class S>
Batch<S> make_batch(const SampleSet& set);

// Loss contributions with their coefficients applied; total() is the
// composite objective.
struct LossTerms {
  double gen = 0.0;     // (1/N) sum (s_g - s')^2
  double ovf = 0.0;     // (1/N) sum (s_o - s')^2
  double latent = 0.0;  // lambda1 / sigma_z^2 * |z|^2
  double grid = 0.0;    // lambda2 / M * sum_j |c_j|^2 / sigma_c^2
  double total() const { return gen + ovf + latent + grid; }
};

struct LossOptions {
  double lambda_latent = 1e-4;
  double lambda_grid = 1e-4;
  double sigma_latent = 1.0;
  double sigma_grid = 1.0;
  bool ovf_in_band_only = false;
  bool include_grid_term = true;
  // Multiplier on the grid-regularizer gradient; 0 leaves it out of grads.
  double grid_gradient_scale = 1.0;

  static LossOptions from(const TrainConfig& cfg);
};

// Diagnostics the loss exposes for tests: per-sample branch outputs.
template <class S>
struct LossTrace {
  Eigen::Matrix<S, 1, Eigen::Dynamic> gen_output;
  Eigen::Matrix<S, 1, Eigen::Dynamic> ovf_output;
  Eigen::Matrix<S, 1, Eigen::Dynamic> d_gen_output;
  Eigen::Matrix<S, 1, Eigen::Dynamic> d_ovf_output;
};

// Evaluates the composite loss on one single-shape batch using `latent` as
// that shape's code. When `grads` is non-null, network and grid gradients
// are accumulated into it (grid: only touched vertices, plus the scaled
// regularizer). When `latent_grad` is non-null, dL/dz is written to it.
template <class S>
LossTerms compute_loss(const ModelState<S>& state, const Batch<S>& batch,
                       const Eigen::Ref<const VectorX<S>>& latent, const LossOptions& options,
                       Parameters<S>* grads, VectorX<S>* latent_grad,
                       LossTrace<S>* trace = nullptr);

// Convenience: latent taken from the table; dL/dz lands in grads->latents.
template <class S>
LossTerms loss_and_gradients(const ModelState<S>& state, const Batch<S>& batch,
                             const LossOptions& options, Parameters<S>* grads);

// ------------------------------------------------------------ training

struct EpochLog {
  std::uint32_t epoch = 0;  // 1-based count of completed epochs
  double gen = 0.0;
  double ovf = 0.0;
  double latent = 0.0;
  double grid = 0.0;
  double total = 0.0;  // sample-weighted mean of per-batch totals
};

template <class S>
struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const ModelState<S>&)> on_checkpoint;
};

// Adam over three groups (grid, latents, network) with a step schedule.
// Runs from state.epoch up to cfg.epochs; each minibatch comes from one
// shape and shapes take turns. Deterministic for a fixed seed. Throws
// DivergenceError on a non-finite loss, after restoring the state from the
// last checkpoint boundary.
template <class S>
std::vector<EpochLog> train(ModelState<S>& state, std::span<const SampleSet> sets,
                            const TrainConfig& cfg, const TrainHooks<S>& hooks = {});

struct InferConfig {
  int iterations = 800;
  double lr = 1e-2;
  double lambda_latent = 1e-4;
  double sigma_latent = 1.0;
  std::size_t batch_size = 8192;
  std::uint64_t seed = 0;
};

// Auto-decoding: optimizes a fresh latent against observations with the
// networks and grid frozen, starting from the mean trained latent.
template <class S>
VectorX<S> infer_latent(const ModelState<S>& state, const SampleSet& observations,
                        const InferConfig& cfg);

template <class S>
VectorX<S> interpolate_latents(const Eigen::Ref<const VectorX<S>>& z0,
                               const Eigen::Ref<const VectorX<S>>& z1, double t);

// ------------------------------------------------------------ checkpoints

// CSDF: "CSDF", u32 version = 1, u32 D, u32 F, u32 G, u32 PE bands,
// u32 gen layer count + (count + 1) u32 widths, same for ovf, u32 shape
// count, u32 epoch, u64 Adam step; then f32 parameter blocks in declared
// order, first moments in the same order, second moments likewise.
std::string encode_checkpoint(const ModelState<float>& state);
ModelState<float> decode_checkpoint(std::string_view bytes);
void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& path);
ModelState<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace csdf
