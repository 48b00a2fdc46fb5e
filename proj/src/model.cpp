#include "compact_sdf/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <type_traits>

#include "compact_sdf/error.hpp"
#include "compact_sdf/parallel.hpp"
#include "rng.hpp"

namespace csdf {

// ------------------------------------------------------------ configs

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  if (!(lr_grid > 0.0 && lr_latent > 0.0 && lr_net > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "learning rates must be positive");
  if (!(decay > 0.0 && decay <= 1.0))
    throw Error(ErrorCode::kInvalidArgument, "decay must lie in (0, 1]");
  if (decay_every < 1) throw Error(ErrorCode::kInvalidArgument, "decay interval must be >= 1");
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  if (!(sigma_latent > 0.0 && sigma_grid > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "sigmas must be positive");
  if (lambda_latent < 0.0 || lambda_grid < 0.0)
    throw Error(ErrorCode::kInvalidArgument, "regularization weights must be >= 0");
}

double TrainConfig::lr_scale(std::uint32_t epoch) const {
  return std::pow(decay, static_cast<double>(epoch / static_cast<std::uint32_t>(decay_every)));
}

LossOptions LossOptions::from(const TrainConfig& cfg) {
  LossOptions o;
  o.lambda_latent = cfg.lambda_latent;
  o.lambda_grid = cfg.lambda_grid;
  o.sigma_latent = cfg.sigma_latent;
  o.sigma_grid = cfg.sigma_grid;
  o.ovf_in_band_only = cfg.ovf_in_band_only;
  return o;
}

const char* to_string(Branch branch) {
  return branch == Branch::kGeneralization ? "generalization" : "overfitting";
}

// ------------------------------------------------------------ parameters

template <class S>
std::vector<int> Mlp<S>::widths() const {
  std::vector<int> w;
  if (weights.empty()) return w;
  w.push_back(static_cast<int>(weights.front().cols()));
  for (const auto& m : weights) w.push_back(static_cast<int>(m.rows()));
  return w;
}

template <class S>
Parameters<S> Parameters<S>::zeros_like() const {
  Parameters<S> out = *this;
  out.set_zero();
  return out;
}

template <class S>
void Parameters<S>::set_zero() {
  for_each_block([](S* data, Eigen::Index n, ParamGroup) { std::fill(data, data + n, S(0)); });
}

template <class S>
std::size_t Parameters<S>::scalar_count() const {
  std::size_t n = 0;
  for_each_block([&](const S*, Eigen::Index size, ParamGroup) { n += static_cast<std::size_t>(size); });
  return n;
}

namespace {

template <class T, class S>
Mlp<T> cast_mlp(const Mlp<S>& in) {
  Mlp<T> out;
  for (const auto& w : in.weights) out.weights.push_back(w.template cast<T>());
  for (const auto& b : in.biases) out.biases.push_back(b.template cast<T>());
  return out;
}

template <class T, class S>
Parameters<T> cast_params(const Parameters<S>& in) {
  Parameters<T> out;
  out.gen = cast_mlp<T>(in.gen);
  out.ovf = cast_mlp<T>(in.ovf);
  out.grid.resolution = in.grid.resolution;
  out.grid.feature_dim = in.grid.feature_dim;
  out.grid.features = in.grid.features.template cast<T>();
  out.latents = in.latents.template cast<T>();
  return out;
}

template <class S>
Mlp<S> make_mlp(int input_width, int hidden_layers, int hidden_width, std::mt19937_64& rng) {
  Mlp<S> mlp;
  int fan_in = input_width;
  for (int l = 0; l <= hidden_layers; ++l) {
    const int fan_out = l == hidden_layers ? 1 : hidden_width;
    WeightMatrix<S> w(fan_out, fan_in);
    const double bound = std::sqrt(6.0 / fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = static_cast<S>((2.0 * detail::uniform01(rng) - 1.0) * bound);
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(VectorX<S>::Zero(fan_out));
    fan_in = fan_out;
  }
  return mlp;
}

}  // namespace

template <class S>
VectorX<S> ModelState<S>::latent(std::uint32_t shape_id) const {
  if (shape_id >= shape_count())
    throw Error(ErrorCode::kUnknownShape, "unknown shape id " + std::to_string(shape_id) +
                                              " (model has " + std::to_string(shape_count()) +
                                              " shapes)");
  return params.latents.col(shape_id);
}

template <class S>
VectorX<S> ModelState<S>::mean_latent() const {
  if (shape_count() == 0) throw Error(ErrorCode::kEmpty, "model has no latents");
  return params.latents.rowwise().mean();
}

template <class S>
template <class T>
ModelState<T> ModelState<S>::cast() const {
  ModelState<T> out;
  out.config = config;
  out.params = cast_params<T>(params);
  out.adam_m = cast_params<T>(adam_m);
  out.adam_v = cast_params<T>(adam_v);
  out.epoch = epoch;
  out.step = step;
  return out;
}

template <class S>
ModelState<S> create_model(const ModelConfig& config, std::uint32_t shape_count,
                           std::uint64_t seed) {
  if (config.latent_dim < 1 || config.hidden_layers < 1 || config.hidden_width < 1 ||
      config.pos_enc.bands < 1)
    throw Error(ErrorCode::kInvalidArgument, "invalid model architecture");
  if (shape_count < 1) throw Error(ErrorCode::kInvalidArgument, "model needs at least one shape");
  std::mt19937_64 rng(seed);
  ModelState<S> st;
  st.config = config;
  st.params.gen = make_mlp<S>(config.gen_input_width(), config.hidden_layers, config.hidden_width, rng);
  st.params.ovf = make_mlp<S>(config.ovf_input_width(), config.hidden_layers, config.hidden_width, rng);
  st.params.grid = FeatureGrid<S>(config.grid_resolution, config.feature_dim);
  st.params.grid.randomize(rng, config.grid_init_std);
  st.params.latents = Tensor<S>(config.latent_dim, shape_count);
  std::normal_distribution<double> latent_dist(0.0, 1.0 / std::sqrt(config.latent_dim));
  for (Eigen::Index c = 0; c < st.params.latents.cols(); ++c)
    for (Eigen::Index r = 0; r < st.params.latents.rows(); ++r)
      st.params.latents(r, c) = static_cast<S>(latent_dist(rng));
  st.adam_m = st.params.zeros_like();
  st.adam_v = st.params.zeros_like();
  return st;
}

// ------------------------------------------------------------ network passes

namespace {

// Activations are n x width, one row per point: the long point axis is
// then the row dimension of every product, which suits the GEMM kernels.

// Adds bias[c] to column c, clamping at zero when `relu` is set.
template <class S>
void add_bias(Tensor<S>& t, const VectorX<S>& bias, bool relu) {
  const Eigen::Index rows = t.rows();
  for (Eigen::Index c = 0; c < t.cols(); ++c) {
    S* col = t.col(c).data();
    const S b = bias[c];
    if (relu) {
      for (Eigen::Index r = 0; r < rows; ++r) col[r] = std::max(col[r] + b, S(0));
    } else {
      for (Eigen::Index r = 0; r < rows; ++r) col[r] += b;
    }
  }
}

// The latent fills the last D input columns of layer 0 and is shared by the
// whole batch, so its product is folded into the layer-0 bias and the input
// matrices carry only the point-dependent rows.
template <class S>
VectorX<S> first_bias(const Mlp<S>& mlp, const VectorX<S>& latent) {
  const auto& w0 = mlp.weights.front();
  return mlp.biases.front() + w0.rightCols(latent.size()) * latent;
}

// Layer inputs of one pass. The layer-0 input is borrowed so cached
// encodings need no copy.
template <class S>
struct Activations {
  const Tensor<S>* input = nullptr;
  std::vector<Tensor<S>> hidden;  // hidden[l - 1] is the input of layer l

  const Tensor<S>& at(int l) const { return l == 0 ? *input : hidden[static_cast<std::size_t>(l) - 1]; }
};

template <class S>
void mlp_forward(const Mlp<S>& mlp, const VectorX<S>& bias0, Activations<S>& acts, Tensor<S>& output) {
  const int layers = mlp.layer_count();
  const Tensor<S>& input = *acts.input;
  acts.hidden.resize(static_cast<std::size_t>(layers) - 1);
  for (int l = 0; l < layers; ++l) {
    Tensor<S>& next = l + 1 == layers ? output : acts.hidden[static_cast<std::size_t>(l)];
    next.resize(input.rows(), mlp.weights[l].rows());
    if (l == 0) {
      next.noalias() = input * mlp.weights[0].leftCols(input.cols()).transpose();
    } else {
      next.noalias() = acts.at(l) * mlp.weights[l].transpose();
    }
    add_bias(next, l == 0 ? bias0 : mlp.biases[l], l + 1 < layers);
  }
}

// Inference keeps one column per point instead: GEMM kernels treat leftover
// rows differently from full panels, but every column of a product is
// summed in the same order, so each output depends on its own point only.
template <class S>
void mlp_infer(const Mlp<S>& mlp, const VectorX<S>& bias0, Tensor<S>& input, Tensor<S>& output) {
  Tensor<S> next;
  const int layers = mlp.layer_count();
  for (int l = 0; l < layers; ++l) {
    if (l == 0) {
      next.noalias() = mlp.weights[0].leftCols(input.rows()) * input;
    } else {
      next.noalias() = mlp.weights[l] * input;
    }
    const VectorX<S>& b = l == 0 ? bias0 : mlp.biases[l];
    if (l + 1 < layers) {
      next = (next.colwise() + b).cwiseMax(S(0));
    } else {
      next.colwise() += b;
    }
    input.swap(next);
  }
  output.swap(input);
}

// Turns `delta` = dL/d(output), n x 1, into dL/d(layer-0 pre-activation).
// Weight gradients are accumulated into `grad` when non-null.
template <class S>
void mlp_backward(const Mlp<S>& mlp, const Activations<S>& acts, const VectorX<S>& latent,
                  Tensor<S>& delta, Mlp<S>* grad) {
  Tensor<S> scratch;
  for (int l = mlp.layer_count() - 1; l >= 0; --l) {
    if (grad) {
      const VectorX<S> col_sum = delta.colwise().sum().transpose();
      if (l == 0) {
        const Eigen::Index k = acts.input->cols();
        grad->weights[0].leftCols(k).noalias() += delta.transpose() * *acts.input;
        grad->weights[0].rightCols(latent.size()).noalias() += col_sum * latent.transpose();
      } else {
        grad->weights[l].noalias() += delta.transpose() * acts.at(l);
      }
      grad->biases[l] += col_sum;
    }
    if (l == 0) break;
    scratch.resize(delta.rows(), mlp.weights[l].cols());
    scratch.noalias() = delta * mlp.weights[l];
    const S* a = acts.at(l).data();
    S* p = scratch.data();
    for (Eigen::Index i = 0; i < scratch.size(); ++i)
      if (!(a[i] > S(0))) p[i] = S(0);
    delta.swap(scratch);
  }
}

template <class S, class Points>
void fill_gen_input(const ModelConfig& cfg, const Points& points, Tensor<S>& input) {
  input.resize(points.cols(), cfg.pos_enc.output_size());
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Vec3 x = points.col(i).template cast<double>();
    auto row = input.row(i);
    positional_encode_into<S>(cfg.pos_enc, x, row);
  }
}

template <class S, class Points>
void compute_stencils(const FeatureGrid<S>& grid, const Points& points,
                      std::vector<TrilinearStencil<S>>& stencils) {
  stencils.resize(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    stencils[static_cast<std::size_t>(i)] = trilinear_stencil(grid, Vec3(points.col(i).template cast<double>()));
}

template <class S, class Points>
void fill_ovf_input(const ModelConfig& cfg, const FeatureGrid<S>& grid, const Points& points,
                    const std::vector<TrilinearStencil<S>>& stencils, Tensor<S>& input) {
  const int f = cfg.feature_dim;
  input.resize(points.cols(), 3 + f);
  input.template leftCols<3>() = points.transpose().template cast<S>();
  VectorX<S> c(f);
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const auto& st = stencils[static_cast<std::size_t>(i)];
    c.setZero();
    for (int d = 0; d < 8; ++d)
      if (st.weights[d] != S(0))
        c.noalias() += st.weights[d] * grid.features.col(static_cast<Eigen::Index>(st.vertices[d]));
    input.row(i).segment(3, f) = c.transpose();
  }
}

constexpr Eigen::Index kEvalChunk = 256;

}  // namespace

template <class S>
void evaluate_branch(const ModelState<S>& state, Branch branch,
                     const Eigen::Ref<const VectorX<S>>& latent, std::span<const Vec3> points,
                     std::span<double> out) {
  if (points.size() != out.size())
    throw Error(ErrorCode::kInvalidArgument, "point and output spans differ in size");
  if (latent.size() != state.config.latent_dim)
    throw Error(ErrorCode::kInvalidArgument, "latent has wrong dimension");
  const VectorX<S> z = latent;
  const Mlp<S>& mlp = branch == Branch::kGeneralization ? state.params.gen : state.params.ovf;
  const VectorX<S> bias0 = first_bias(mlp, z);
  const std::size_t chunks = (points.size() + kEvalChunk - 1) / kEvalChunk;
  parallel_for(
      chunks,
      [&](std::size_t begin, std::size_t end) {
        Eigen::Matrix<double, 3, Eigen::Dynamic> block(3, kEvalChunk);
        Tensor<S> input, columns, output;
        std::vector<TrilinearStencil<S>> stencils;
        for (std::size_t ch = begin; ch < end; ++ch) {
          const std::size_t first = ch * kEvalChunk;
          const std::size_t count = std::min<std::size_t>(kEvalChunk, points.size() - first);
          block.setZero();
          for (std::size_t i = 0; i < count; ++i) block.col(static_cast<Eigen::Index>(i)) = points[first + i];
          if (branch == Branch::kGeneralization) {
            fill_gen_input<S>(state.config, block, input);
          } else {
            compute_stencils(state.params.grid, block, stencils);
            fill_ovf_input<S>(state.config, state.params.grid, block, stencils, input);
          }
          columns = input.transpose();
          mlp_infer(mlp, bias0, columns, output);
          for (std::size_t i = 0; i < count; ++i)
            out[first + i] = static_cast<double>(output(0, static_cast<Eigen::Index>(i)));
        }
      },
      1);
}

template <class S>
double forward_gen(const ModelState<S>& state, const Vec3& x, std::uint32_t shape_id) {
  const VectorX<S> z = state.latent(shape_id);
  double out = 0.0;
  evaluate_branch<S>(state, Branch::kGeneralization, z, std::span<const Vec3>(&x, 1),
                     std::span<double>(&out, 1));
  return out;
}

template <class S>
double forward_ovf(const ModelState<S>& state, const Vec3& x, std::uint32_t shape_id) {
  const VectorX<S> z = state.latent(shape_id);
  double out = 0.0;
  evaluate_branch<S>(state, Branch::kOverfitting, z, std::span<const Vec3>(&x, 1),
                     std::span<double>(&out, 1));
  return out;
}

template <class S>
FieldFn branch_field(const ModelState<S>& state, Branch branch, VectorX<S> latent) {
  return [&state, branch, z = std::move(latent)](std::span<const Vec3> points,
                                                  std::span<double> values) {
    evaluate_branch<S>(state, branch, z, points, values);
  };
}

// ------------------------------------------------------------ loss

template <class S>
Batch<S> make_batch(const SampleSet& set, std::span<const std::size_t> indices) {
  Batch<S> b;
  b.shape_id = set.shape_id;
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.points.resize(3, n);
  b.targets.resize(1, n);
  b.in_band.resize(indices.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t src = indices[static_cast<std::size_t>(i)];
    b.points.col(i) = set.points[src].template cast<S>();
    b.targets(0, i) = static_cast<S>(set.distances[src]);
    b.in_band[static_cast<std::size_t>(i)] = set.in_band[src];
  }
  return b;
}

template <class S>
Batch<S> make_batch(const SampleSet& set) {
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch<S>(set, all);
}

template <class S>
LossTerms compute_loss(const ModelState<S>& state, const Batch<S>& batch,
                       const Eigen::Ref<const VectorX<S>>& latent, const LossOptions& options,
                       Parameters<S>* grads, VectorX<S>* latent_grad, LossTrace<S>* trace) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw Error(ErrorCode::kEmpty, "loss needs a non-empty batch");
  const ModelConfig& cfg = state.config;
  const int d = cfg.latent_dim;
  const int f = cfg.feature_dim;
  if (latent.size() != d) throw Error(ErrorCode::kInvalidArgument, "latent has wrong dimension");
  const bool backward = grads != nullptr || latent_grad != nullptr;

  const VectorX<S> z = latent;
  const Mlp<S>& gen = state.params.gen;
  const Mlp<S>& ovf = state.params.ovf;
  Activations<S> gen_acts, ovf_acts;
  Tensor<S> gen_input, ovf_input, gen_out, ovf_out;
  if (batch.encoded.rows() == n) {
    gen_acts.input = &batch.encoded;
  } else {
    fill_gen_input<S>(cfg, batch.points, gen_input);
    gen_acts.input = &gen_input;
  }
  std::vector<TrilinearStencil<S>> own_stencils;
  if (batch.stencils.size() != static_cast<std::size_t>(n))
    compute_stencils(state.params.grid, batch.points, own_stencils);
  const auto& stencils = own_stencils.empty() ? batch.stencils : own_stencils;
  fill_ovf_input<S>(cfg, state.params.grid, batch.points, stencils, ovf_input);
  ovf_acts.input = &ovf_input;
  mlp_forward(gen, first_bias(gen, z), gen_acts, gen_out);
  mlp_forward(ovf, first_bias(ovf, z), ovf_acts, ovf_out);

  // Per-sample weights of the ovf term: 1/N, or 1/N_band over in-band samples.
  Eigen::Matrix<S, 1, Eigen::Dynamic> ovf_weight(1, n);
  if (options.ovf_in_band_only) {
    Eigen::Index band = 0;
    for (auto flag : batch.in_band) band += flag ? 1 : 0;
    for (Eigen::Index i = 0; i < n; ++i)
      ovf_weight(0, i) = (band > 0 && batch.in_band[static_cast<std::size_t>(i)])
                             ? S(1) / static_cast<S>(band)
                             : S(0);
  } else {
    ovf_weight.setConstant(S(1) / static_cast<S>(n));
  }

  const Eigen::Matrix<S, 1, Eigen::Dynamic> gen_diff = gen_out.transpose() - batch.targets;
  const Eigen::Matrix<S, 1, Eigen::Dynamic> ovf_diff = ovf_out.transpose() - batch.targets;

  LossTerms terms;
  terms.gen = static_cast<double>(gen_diff.squaredNorm()) / static_cast<double>(n);
  terms.ovf = static_cast<double>((ovf_diff.array().square() * ovf_weight.array()).sum());
  const double latent_coeff = options.lambda_latent / (options.sigma_latent * options.sigma_latent);
  terms.latent = latent_coeff * static_cast<double>(latent.squaredNorm());
  const auto& features = state.params.grid.features;
  const double grid_coeff = options.lambda_grid / (static_cast<double>(features.cols()) *
                                                   options.sigma_grid * options.sigma_grid);
  if (options.include_grid_term) terms.grid = grid_coeff * static_cast<double>(features.squaredNorm());

  if (trace) {
    trace->gen_output = gen_out.transpose();
    trace->ovf_output = ovf_out.transpose();
  }
  if (!backward) return terms;

  Tensor<S> d_gen = (S(2) / static_cast<S>(n)) * gen_diff.transpose();
  Tensor<S> d_ovf = S(2) * ovf_diff.cwiseProduct(ovf_weight).transpose();
  if (trace) {
    trace->d_gen_output = d_gen.transpose();
    trace->d_ovf_output = d_ovf.transpose();
  }
  mlp_backward(gen, gen_acts, z, d_gen, grads ? &grads->gen : nullptr);
  mlp_backward(ovf, ovf_acts, z, d_ovf, grads ? &grads->ovf : nullptr);
  const Tensor<S>& gen_delta0 = d_gen;
  const Tensor<S>& ovf_delta0 = d_ovf;

  const auto& gen_w0 = state.params.gen.weights.front();
  const auto& ovf_w0 = state.params.ovf.weights.front();
  VectorX<S> dz = gen_w0.rightCols(d).transpose() * gen_delta0.colwise().sum().transpose();
  dz.noalias() += ovf_w0.rightCols(d).transpose() * ovf_delta0.colwise().sum().transpose();
  dz += static_cast<S>(2.0 * latent_coeff) * latent;
  if (latent_grad) *latent_grad = dz;

  if (grads) {
    Tensor<S> d_features(f, n);
    d_features.noalias() = (ovf_delta0 * ovf_w0.middleCols(3, f)).transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      accumulate_interpolate_backward(stencils[static_cast<std::size_t>(i)], d_features.col(i),
                                      grads->grid.features);
    if (options.include_grid_term && options.grid_gradient_scale != 0.0)
      grads->grid.features += static_cast<S>(2.0 * grid_coeff * options.grid_gradient_scale) * features;
  }
  return terms;
}

template <class S>
LossTerms loss_and_gradients(const ModelState<S>& state, const Batch<S>& batch,
                             const LossOptions& options, Parameters<S>* grads) {
  const VectorX<S> z = state.latent(batch.shape_id);
  VectorX<S> dz;
  const LossTerms t = compute_loss<S>(state, batch, z, options, grads, grads ? &dz : nullptr);
  if (grads) grads->latents.col(batch.shape_id) += dz;
  return t;
}

// ------------------------------------------------------------ optimizer

namespace {

struct BlockRef {
  void* data;
  Eigen::Index size;
  ParamGroup group;
};

template <class S>
std::vector<BlockRef> blocks_of(Parameters<S>& p) {
  std::vector<BlockRef> out;
  p.for_each_block([&](S* data, Eigen::Index n, ParamGroup g) { out.push_back({data, n, g}); });
  return out;
}

template <class S>
void adam_step(ModelState<S>& st, Parameters<S>& grads, const TrainConfig& cfg, double lr_scale) {
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  const auto params = blocks_of(st.params);
  const auto ms = blocks_of(st.adam_m);
  const auto vs = blocks_of(st.adam_v);
  const auto gs = blocks_of(grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    double lr = cfg.lr_net;
    if (params[k].group == ParamGroup::kGrid) lr = cfg.lr_grid;
    if (params[k].group == ParamGroup::kLatent) lr = cfg.lr_latent;
    const S step_size = static_cast<S>(lr * lr_scale / bc1);
    const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
    const S fb1 = static_cast<S>(b1), gb1 = static_cast<S>(1.0 - b1);
    const S fb2 = static_cast<S>(b2), gb2 = static_cast<S>(1.0 - b2);
    const S eps = static_cast<S>(cfg.adam_eps);
    S* p = static_cast<S*>(params[k].data);
    S* m = static_cast<S*>(ms[k].data);
    S* v = static_cast<S*>(vs[k].data);
    const S* g = static_cast<const S*>(gs[k].data);
    for (Eigen::Index i = 0; i < params[k].size; ++i) {
      m[i] = fb1 * m[i] + gb1 * g[i];
      v[i] = fb2 * v[i] + gb2 * (g[i] * g[i]);
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

struct BatchSlice {
  std::size_t set;
  std::size_t begin;
  std::size_t end;
};

// Encodings and stencils depend only on the sample points, so training
// computes them once per set while they fit in this many bytes.
constexpr std::size_t kCacheBudget = std::size_t{1} << 30;

template <class S>
struct SetCache {
  Tensor<S> encoded;
  std::vector<TrilinearStencil<S>> stencils;
};

template <class S>
SetCache<S> build_cache(const ModelState<S>& state, const SampleSet& set) {
  SetCache<S> cache;
  cache.encoded.resize(state.config.pos_enc.output_size(), static_cast<Eigen::Index>(set.size()));
  cache.stencils.resize(set.size());
  parallel_for(set.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3 x = set.points[i].cast<double>();
      auto column = cache.encoded.col(static_cast<Eigen::Index>(i));
      positional_encode_into<S>(state.config.pos_enc, x, column);
      cache.stencils[i] = trilinear_stencil(state.params.grid, x);
    }
  });
  return cache;
}

template <class S>
void attach_cache(Batch<S>& batch, const SetCache<S>& cache, std::span<const std::size_t> indices) {
  if (cache.stencils.empty()) return;
  const auto n = static_cast<Eigen::Index>(indices.size());
  batch.encoded.resize(n, cache.encoded.rows());
  batch.stencils.resize(indices.size());
  const Eigen::Index width = cache.encoded.rows();
  S* dst = batch.encoded.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    const S* src = cache.encoded.col(static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)])).data();
    for (Eigen::Index c = 0; c < width; ++c) dst[c * n + i] = src[c];
  }
  for (std::size_t i = 0; i < indices.size(); ++i) batch.stencils[i] = cache.stencils[indices[i]];
}

}  // namespace

template <class S>
std::vector<EpochLog> train(ModelState<S>& state, std::span<const SampleSet> sets,
                            const TrainConfig& cfg, const TrainHooks<S>& hooks) {
  cfg.validate();
  if (sets.empty()) throw Error(ErrorCode::kEmpty, "training needs at least one sample set");
  for (const auto& s : sets) {
    if (s.empty()) throw Error(ErrorCode::kEmpty, "sample set " + std::to_string(s.shape_id) + " is empty");
    if (s.shape_id >= state.shape_count())
      throw Error(ErrorCode::kUnknownShape, "sample set refers to unknown shape " + std::to_string(s.shape_id));
  }
  LossOptions options = LossOptions::from(cfg);
  Parameters<S> grads = state.params.zeros_like();
  ModelState<S> last_good = state;
  std::vector<EpochLog> history;

  std::vector<SetCache<S>> caches(sets.size());
  std::size_t total_points = 0;
  for (const auto& s : sets) total_points += s.size();
  const std::size_t point_bytes =
      sizeof(S) * static_cast<std::size_t>(state.config.pos_enc.output_size()) + sizeof(TrilinearStencil<S>);
  if (total_points * point_bytes <= kCacheBudget)
    for (std::size_t s = 0; s < sets.size(); ++s) caches[s] = build_cache(state, sets[s]);

  std::vector<std::vector<std::size_t>> order(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) order[s].resize(sets[s].size());

  for (std::uint32_t epoch = state.epoch; epoch < static_cast<std::uint32_t>(cfg.epochs); ++epoch) {
    std::vector<BatchSlice> slices;
    std::size_t max_batches = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      std::iota(order[s].begin(), order[s].end(), std::size_t{0});
      shuffle_indices(order[s], detail::mix_seed(cfg.seed, epoch, s));
      max_batches = std::max(max_batches, (sets[s].size() + cfg.batch_size - 1) / cfg.batch_size);
    }
    for (std::size_t r = 0; r < max_batches; ++r)
      for (std::size_t s = 0; s < sets.size(); ++s) {
        const std::size_t begin = r * cfg.batch_size;
        if (begin < sets[s].size())
          slices.push_back({s, begin, std::min(sets[s].size(), begin + cfg.batch_size)});
      }

    const double lr_scale = cfg.lr_scale(epoch);
    EpochLog log;
    log.epoch = epoch + 1;
    double seen = 0.0;
    for (std::size_t b = 0; b < slices.size(); ++b) {
      const auto& slice = slices[b];
      const SampleSet& set = sets[slice.set];
      const auto indices =
          std::span<const std::size_t>(order[slice.set]).subspan(slice.begin, slice.end - slice.begin);
      Batch<S> batch = make_batch<S>(set, indices);
      attach_cache(batch, caches[slice.set], indices);
      // The grid regularizer gradient is applied once per epoch, scaled to
      // stand in for every step.
      options.grid_gradient_scale = b == 0 ? static_cast<double>(slices.size()) : 0.0;
      grads.set_zero();
      const LossTerms t = loss_and_gradients(state, batch, options, &grads);
      if (!std::isfinite(t.total())) {
        state = last_good;
        throw DivergenceError(epoch + 1, "non-finite loss on shape " + std::to_string(set.shape_id));
      }
      adam_step(state, grads, cfg, lr_scale);
      const double w = static_cast<double>(batch.size());
      log.gen += w * t.gen;
      log.ovf += w * t.ovf;
      log.latent += w * t.latent;
      log.grid += w * t.grid;
      log.total += w * t.total();
      seen += w;
    }
    log.gen /= seen;
    log.ovf /= seen;
    log.latent /= seen;
    log.grid /= seen;
    log.total /= seen;
    state.epoch = epoch + 1;
    history.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (cfg.checkpoint_every > 0 && state.epoch % static_cast<std::uint32_t>(cfg.checkpoint_every) == 0) {
      last_good = state;
      if (hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
  }
  return history;
}

template <class S>
VectorX<S> infer_latent(const ModelState<S>& state, const SampleSet& observations,
                        const InferConfig& cfg) {
  if (observations.empty()) throw Error(ErrorCode::kEmpty, "latent inference needs observations");
  if (cfg.iterations < 0 || !(cfg.lr > 0.0) || cfg.batch_size == 0)
    throw Error(ErrorCode::kInvalidArgument, "invalid latent inference settings");
  VectorX<S> z = state.mean_latent();
  VectorX<S> m = VectorX<S>::Zero(z.size());
  VectorX<S> v = VectorX<S>::Zero(z.size());
  LossOptions options;
  options.lambda_latent = cfg.lambda_latent;
  options.sigma_latent = cfg.sigma_latent;
  options.include_grid_term = false;
  options.grid_gradient_scale = 0.0;

  std::vector<std::size_t> order(observations.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::min(cfg.batch_size, observations.size());
  std::size_t cursor = observations.size();
  std::uint64_t reshuffles = 0;
  Batch<S> full;
  if (bs == observations.size()) full = make_batch<S>(observations);

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 0; it < cfg.iterations; ++it) {
    Batch<S> partial;
    const Batch<S>* batch = &full;
    if (bs < observations.size()) {
      if (cursor + bs > order.size()) {
        shuffle_indices(order, detail::mix_seed(cfg.seed, reshuffles++));
        cursor = 0;
      }
      partial = make_batch<S>(observations, std::span<const std::size_t>(order).subspan(cursor, bs));
      cursor += bs;
      batch = &partial;
    }
    VectorX<S> dz;
    const LossTerms t = compute_loss<S>(state, *batch, z, options, nullptr, &dz);
    if (!std::isfinite(t.total()))
      throw DivergenceError(static_cast<unsigned>(it + 1), "non-finite loss during latent inference");
    const double bc1 = 1.0 - std::pow(b1, it + 1);
    const double bc2 = 1.0 - std::pow(b2, it + 1);
    m = static_cast<S>(b1) * m + static_cast<S>(1.0 - b1) * dz;
    v = static_cast<S>(b2) * v + static_cast<S>(1.0 - b2) * dz.cwiseAbs2();
    z.array() -= static_cast<S>(cfg.lr / bc1) * m.array() /
                 (v.array().sqrt() / static_cast<S>(std::sqrt(bc2)) + static_cast<S>(eps));
  }
  return z;
}

template <class S>
VectorX<S> interpolate_latents(const Eigen::Ref<const VectorX<S>>& z0,
                               const Eigen::Ref<const VectorX<S>>& z1, double t) {
  if (z0.size() != z1.size()) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  if (t == 0.0) return z0;
  if (t == 1.0) return z1;
  return static_cast<S>(1.0 - t) * z0 + static_cast<S>(t) * z1;
}

// ------------------------------------------------------------ instantiation

#define CSDF_INSTANTIATE(S)                                                                      \
  template struct Mlp<S>;                                                                        \
  template struct Parameters<S>;                                                                 \
  template struct ModelState<S>;                                                                 \
  template ModelState<S> create_model<S>(const ModelConfig&, std::uint32_t, std::uint64_t);      \
  template void evaluate_branch<S>(const ModelState<S>&, Branch, const Eigen::Ref<const VectorX<S>>&, \
                                   std::span<const Vec3>, std::span<double>);                    \
  template double forward_gen<S>(const ModelState<S>&, const Vec3&, std::uint32_t);              \
  template double forward_ovf<S>(const ModelState<S>&, const Vec3&, std::uint32_t);              \
  template FieldFn branch_field<S>(const ModelState<S>&, Branch, VectorX<S>);                    \
  template Batch<S> make_batch<S>(const SampleSet&, std::span<const std::size_t>);               \
  template Batch<S> make_batch<S>(const SampleSet&);                                             \
  template LossTerms compute_loss<S>(const ModelState<S>&, const Batch<S>&,                      \
                                     const Eigen::Ref<const VectorX<S>>&, const LossOptions&,    \
                                     Parameters<S>*, VectorX<S>*, LossTrace<S>*);                \
  template LossTerms loss_and_gradients<S>(const ModelState<S>&, const Batch<S>&,                \
                                           const LossOptions&, Parameters<S>*);                  \
  template std::vector<EpochLog> train<S>(ModelState<S>&, std::span<const SampleSet>,            \
                                          const TrainConfig&, const TrainHooks<S>&);             \
  template VectorX<S> infer_latent<S>(const ModelState<S>&, const SampleSet&, const InferConfig&); \
  template VectorX<S> interpolate_latents<S>(const Eigen::Ref<const VectorX<S>>&,                \
                                             const Eigen::Ref<const VectorX<S>>&, double);

CSDF_INSTANTIATE(float)
CSDF_INSTANTIATE(double)
#undef CSDF_INSTANTIATE

template ModelState<double> ModelState<float>::cast<double>() const;
template ModelState<float> ModelState<double>::cast<float>() const;

}  // namespace csdf
