#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "compact_sdf/error.hpp"
#include "compact_sdf/model.hpp"

using namespace csdf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.latent_dim = 3;
  c.feature_dim = 2;
  c.grid_resolution = 4;
  c.hidden_layers = 2;
  c.hidden_width = 8;
  c.pos_enc = {3, true};
  c.grid_init_std = 0.3;
  return c;
}

SampleSet random_samples(std::size_t n, std::uint32_t shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SampleSet s;
  s.shape_id = shape;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3f p(u(rng), u(rng), u(rng));
    s.points.push_back(p);
    s.distances.push_back(p.norm() - 0.5f);
    s.in_band.push_back(i % 3 == 0);
  }
  return s;
}

double loss_value(const ModelState<double>& st, const Batch<double>& b, const LossOptions& o) {
  return loss_and_gradients<double>(st, b, o, nullptr).total();
}

// Largest relative error of analytic against central-difference gradients
// over every scalar parameter.
double gradient_check(ModelState<double> st, const Batch<double>& batch, const LossOptions& o) {
  Parameters<double> grads = st.params.zeros_like();
  loss_and_gradients<double>(st, batch, o, &grads);
  std::vector<double> analytic;
  grads.for_each_block([&](const double* d, Eigen::Index n, ParamGroup) { analytic.insert(analytic.end(), d, d + n); });
  std::vector<double*> slots;
  st.params.for_each_block([&](double* d, Eigen::Index n, ParamGroup) {
    for (Eigen::Index i = 0; i < n; ++i) slots.push_back(d + i);
  });
  REQUIRE(slots.size() == analytic.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double h = 1e-6, saved = *slots[i];
    *slots[i] = saved + h;
    const double lp = loss_value(st, batch, o);
    *slots[i] = saved - h;
    const double lm = loss_value(st, batch, o);
    *slots[i] = saved;
    const double fd = (lp - lm) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace

// Zero biases put ReLU kinks exactly at the evaluation point whenever a
// sample kills every unit of a layer; jitter them off the kink.
ModelState<double> jittered_model(std::uint64_t seed) {
  auto st = create_model<double>(tiny_config(), 2, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n01(0.0, 0.1);
  for (auto* mlp : {&st.params.gen, &st.params.ovf})
    for (auto& b : mlp->biases)
      for (auto& v : b) v = n01(rng);
  return st;
}

TEST_CASE("gradients match finite differences for every parameter") {
  const auto st = jittered_model(5);
  const auto set = random_samples(48, 1, 6);
  const auto batch = make_batch<double>(set);
  LossOptions o;
  o.lambda_latent = 0.05;
  o.lambda_grid = 0.2;
  o.sigma_latent = 0.7;
  o.sigma_grid = 1.3;
  CHECK(gradient_check(st, batch, o) < 1e-5);
  o.ovf_in_band_only = true;
  CHECK(gradient_check(st, batch, o) < 1e-5);
}

TEST_CASE("zero network outputs its final bias") {
  auto st = create_model<double>(tiny_config(), 1, 1);
  for (auto* mlp : {&st.params.gen, &st.params.ovf}) {
    for (auto& w : mlp->weights) w.setZero();
    for (auto& b : mlp->biases) b.setZero();
  }
  st.params.gen.biases.back()[0] = 0.25;
  st.params.ovf.biases.back()[0] = -0.75;
  CHECK(forward_gen(st, Vec3(0.1, 0.2, 0.3), 0) == 0.25);
  CHECK(forward_ovf(st, Vec3(-0.4, 0.9, 0.0), 0) == -0.75);
}

TEST_CASE("forward passes match hand arithmetic on a width-2 network") {
  ModelConfig c = tiny_config();
  c.hidden_width = 2;
  c.latent_dim = 1;
  c.feature_dim = 1;
  c.pos_enc = {1, false};
  auto st = create_model<double>(c, 1, 3);
  st.params.latents(0, 0) = 0.5;
  st.params.grid.features.setConstant(0.2);
  const Vec3 x(0.25, -0.5, 0.0);

  // Generalization input: sin/cos pairs per axis, then z.
  const double pi = M_PI;
  const std::vector<double> gin = {std::sin(pi * 0.25), std::cos(pi * 0.25), std::sin(-pi * 0.5),
                                   std::cos(-pi * 0.5), 0.0, 1.0, 0.5};
  auto run = [](const Mlp<double>& mlp, std::vector<double> v) {
    for (int l = 0; l < mlp.layer_count(); ++l) {
      std::vector<double> next(mlp.weights[l].rows());
      for (Eigen::Index r = 0; r < mlp.weights[l].rows(); ++r) {
        double acc = mlp.biases[l][r];
        for (Eigen::Index k = 0; k < mlp.weights[l].cols(); ++k) acc += mlp.weights[l](r, k) * v[k];
        next[r] = l + 1 < mlp.layer_count() ? std::max(acc, 0.0) : acc;
      }
      v = next;
    }
    return v[0];
  };
  CHECK(forward_gen(st, x, 0) == doctest::Approx(run(st.params.gen, gin)).epsilon(1e-14));
  const std::vector<double> oin = {0.25, -0.5, 0.0, 0.2, 0.5};
  CHECK(forward_ovf(st, x, 0) == doctest::Approx(run(st.params.ovf, oin)).epsilon(1e-14));
}

TEST_CASE("forward is deterministic and continuous near a grid vertex") {
  const auto st = create_model<double>(tiny_config(), 1, 4);
  const Vec3 v = st.params.grid.vertex_position(1, 2, 1);
  CHECK(forward_ovf(st, v, 0) == forward_ovf(st, v, 0));
  CHECK(std::abs(forward_ovf(st, v, 0) - forward_ovf(st, v + Vec3::Constant(1e-9), 0)) < 1e-6);
}

TEST_CASE("unknown shape id throws") {
  const auto st = create_model<double>(tiny_config(), 2, 4);
  try {
    forward_gen(st, Vec3::Zero(), 2);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnknownShape);
  }
}

TEST_CASE("perfect predictions with zero codes give zero loss") {
  auto st = create_model<double>(tiny_config(), 1, 7);
  for (auto* mlp : {&st.params.gen, &st.params.ovf}) {
    for (auto& w : mlp->weights) w.setZero();
    for (auto& b : mlp->biases) b.setZero();
  }
  st.params.grid.features.setZero();
  st.params.latents.setZero();
  SampleSet s;
  s.points = {Eigen::Vector3f(0.1f, 0.2f, 0.3f), Eigen::Vector3f(-0.5f, 0.5f, 0.0f)};
  s.distances = {0.0f, 0.0f};
  s.in_band = {1, 0};
  CHECK(loss_value(st, make_batch<double>(s), LossOptions{}) == 0.0);
}

TEST_CASE("single sample: (0.3 - 0.1)^2 + 0 = 0.04") {
  auto st = create_model<double>(tiny_config(), 1, 7);
  for (auto* mlp : {&st.params.gen, &st.params.ovf}) {
    for (auto& w : mlp->weights) w.setZero();
    for (auto& b : mlp->biases) b.setZero();
  }
  st.params.gen.biases.back()[0] = 0.3;
  st.params.ovf.biases.back()[0] = 0.1;
  SampleSet s;
  s.points = {Eigen::Vector3f(0.2f, 0.2f, 0.2f)};
  s.distances = {0.1f};
  s.in_band = {1};
  LossOptions o;
  o.lambda_latent = o.lambda_grid = 0.0;
  const auto batch = make_batch<double>(s);
  // The stored target is 0.1 rounded to single precision.
  const double stored = static_cast<double>(0.1f);
  CHECK(loss_value(st, batch, o) == doctest::Approx((0.3 - stored) * (0.3 - stored)).epsilon(1e-14));
  CHECK(loss_value(st, batch, o) == doctest::Approx(0.04).epsilon(1e-7));

  // Both branches are supervised on the sample.
  LossTrace<double> trace;
  VectorX<double> dz;
  Parameters<double> g = st.params.zeros_like();
  compute_loss<double>(st, batch, st.latent(0), o, &g, &dz, &trace);
  const double target = static_cast<double>(0.1f);
  CHECK(trace.d_gen_output(0, 0) == doctest::Approx(2 * (0.3 - target)).epsilon(1e-14));
  CHECK(trace.d_ovf_output(0, 0) == doctest::Approx(2 * (0.1 - target)).epsilon(1e-14));
}

TEST_CASE("grid gradient touches at most 8 vertices per occupied cell") {
  auto st = create_model<double>(tiny_config(), 1, 8);
  const auto set = random_samples(10, 0, 9);
  LossOptions o;
  o.grid_gradient_scale = 0.0;
  Parameters<double> g = st.params.zeros_like();
  loss_and_gradients<double>(st, make_batch<double>(set), o, &g);
  std::set<std::array<int, 3>> cells;
  for (const auto& p : set.points) {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = std::min(2, static_cast<int>(std::floor((p[a] + 1.0) * 1.5)));
    cells.insert(c);
  }
  std::size_t touched = 0;
  for (Eigen::Index v = 0; v < g.grid.features.cols(); ++v) touched += !g.grid.features.col(v).isZero();
  CHECK(touched > 0);
  CHECK(touched <= 8 * cells.size());
}

TEST_CASE("full-batch training with a small step does not increase the loss") {
  auto st = create_model<double>(tiny_config(), 1, 10);
  const auto set = random_samples(64, 0, 11);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  cfg.lr_grid *= 0.01;
  cfg.lr_latent *= 0.01;
  cfg.lr_net *= 0.01;
  const auto log = train<double>(st, std::span<const SampleSet>(&set, 1), cfg);
  REQUIRE(log.size() == 30);
  for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].total <= log[i - 1].total + 1e-12);
}

TEST_CASE("training is deterministic and resumable") {
  const auto sets = std::vector<SampleSet>{random_samples(300, 0, 12), random_samples(200, 1, 13)};
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 64;
  cfg.seed = 3;
  auto a = create_model<float>(tiny_config(), 2, 1);
  auto b = a;
  train<float>(a, sets, cfg);
  train<float>(b, sets, cfg);
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));

  auto c = create_model<float>(tiny_config(), 2, 1);
  TrainConfig half = cfg;
  half.epochs = 3;
  train<float>(c, sets, half);
  CHECK(c.epoch == 3);
  auto resumed = decode_checkpoint(encode_checkpoint(c));
  const auto log = train<float>(resumed, sets, cfg);
  REQUIRE(log.size() == 3);
  CHECK(log.front().epoch == 4);
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(a));
}

TEST_CASE("divergence restores the last checkpoint and throws") {
  auto st = create_model<float>(tiny_config(), 1, 2);
  auto set = random_samples(50, 0, 14);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 50;
  cfg.checkpoint_every = 1;
  // A NaN target poisons the loss from the first step.
  set.distances[7] = std::numeric_limits<float>::quiet_NaN();
  const auto before = encode_checkpoint(st);
  try {
    train<float>(st, std::span<const SampleSet>(&set, 1), cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 1);
  }
  CHECK(encode_checkpoint(st) == before);
}

TEST_CASE("learning-rate schedule halves every interval") {
  TrainConfig cfg;
  cfg.decay = 0.5;
  cfg.decay_every = 1000;
  CHECK(cfg.lr_scale(0) == 1.0);
  CHECK(cfg.lr_scale(999) == 1.0);
  CHECK(cfg.lr_scale(1000) == 0.5);
  CHECK(cfg.lr_scale(3999) == 0.125);
  cfg.decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("checkpoint round trip is exact") {
  auto st = create_model<float>(tiny_config(), 3, 15);
  const auto set = random_samples(40, 2, 16);
  TrainConfig cfg;
  cfg.epochs = 2;
  train<float>(st, std::span<const SampleSet>(&set, 1), cfg);
  const auto bytes = encode_checkpoint(st);
  CHECK(bytes.substr(0, 4) == "CSDF");
  const auto back = decode_checkpoint(bytes);
  CHECK(back.epoch == 2);
  CHECK(back.step == st.step);
  CHECK(back.params.latents == st.params.latents);
  CHECK(back.params.grid.features == st.params.grid.features);
  CHECK(back.adam_v.gen.weights[1] == st.adam_v.gen.weights[1]);
  CHECK(back.config.pos_enc.include_input);
  CHECK(back.config.hidden_layers == 2);
  CHECK(encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "csdf_model_test.csdf";
  save_checkpoint(st, path);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  CHECK_THROWS_AS(decode_checkpoint("CSDF"), Error);
}

TEST_CASE("batched evaluation does not depend on batch composition") {
  const auto st = create_model<float>(tiny_config(), 1, 17);
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> pts(1000);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  std::vector<double> all(pts.size());
  const VectorX<float> z = st.latent(0);
  evaluate_branch<float>(st, Branch::kOverfitting, z, pts, all);
  for (std::size_t i = 0; i < pts.size(); i += 37)
    CHECK(forward_ovf(st, pts[i], 0) == all[i]);
  std::vector<Vec3> tail(pts.begin() + 500, pts.end());
  std::vector<double> part(tail.size());
  evaluate_branch<float>(st, Branch::kOverfitting, z, tail, part);
  for (std::size_t i = 0; i < tail.size(); ++i) CHECK(part[i] == all[500 + i]);
}

TEST_CASE("latent inference") {
  const auto st = create_model<double>(tiny_config(), 2, 19);
  const auto obs = random_samples(100, 0, 20);
  InferConfig cfg;
  cfg.iterations = 0;
  CHECK(infer_latent(st, obs, cfg) == st.mean_latent());
  cfg.iterations = 50;
  const auto z = infer_latent(st, obs, cfg);
  LossOptions o;
  o.include_grid_term = false;
  const auto batch = make_batch<double>(obs);
  const double before = compute_loss<double>(st, batch, st.mean_latent(), o, nullptr, nullptr).total();
  const double after = compute_loss<double>(st, batch, z, o, nullptr, nullptr).total();
  CHECK(after < before);
  CHECK_THROWS_AS(infer_latent(st, SampleSet{}, cfg), Error);
}

TEST_CASE("latent interpolation") {
  VectorX<double> a(2), b(2);
  a << 2, 0;
  b << 0, 2;
  CHECK(interpolate_latents<double>(a, b, 0.0) == a);
  CHECK(interpolate_latents<double>(a, b, 1.0) == b);
  CHECK(interpolate_latents<double>(a, b, 0.5) == VectorX<double>::Constant(2, 1.0));
  CHECK_THROWS_AS(interpolate_latents<double>(a, VectorX<double>::Zero(3), 0.5), Error);
}

TEST_CASE("model shapes follow the configuration") {
  const auto st = create_model<float>(tiny_config(), 2, 21);
  CHECK(st.params.gen.widths() == std::vector<int>{21 + 3, 8, 8, 1});
  CHECK(st.params.ovf.widths() == std::vector<int>{3 + 2 + 3, 8, 8, 1});
  CHECK(st.params.latents.rows() == 3);
  CHECK(st.params.latents.cols() == 2);
  CHECK(st.adam_m.scalar_count() == st.params.scalar_count());
  for (const auto& b : st.params.gen.biases) CHECK(b.isZero());
  const double bound = std::sqrt(6.0 / 24);
  CHECK(st.params.gen.weights[0].cwiseAbs().maxCoeff() <= bound);
}
