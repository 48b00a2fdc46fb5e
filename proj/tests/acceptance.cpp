// Acceptance run: one PASS/FAIL line per criterion. Arguments select a
// subset by number; no arguments runs all of them.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "compact_sdf/bvh.hpp"
#include "compact_sdf/config.hpp"
#include "compact_sdf/metrics.hpp"
#include "compact_sdf/model.hpp"
#include "compact_sdf/reconstruct.hpp"
#include "oracles.hpp"

using namespace csdf;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double extent = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

void note(const std::string& line) { std::printf("    %s\n", line.c_str()); std::fflush(stdout); }

// ------------------------------------------------------------ shared fits

struct DeskFit {
  TriangleMesh gt;
  SampleSet samples;
  SampleStats stats;
  ModelState<float> model{};
  std::vector<EpochLog> history;
  EvalReport report;
  double seconds = 0.0;
};

// Samples, trains, reconstructs and scores one shape with the desk preset.
DeskFit fit_desk(const TriangleMesh& mesh) {
  const auto t0 = Clock::now();
  const RunConfig cfg = make_preset("desk");
  DeskFit fit;
  fit.gt = mesh;
  const SignedDistanceOracle sdf(mesh);
  fit.samples = generate_queries(sdf, cfg.sampling, 0, &fit.stats);
  fit.model = create_model<float>(cfg.model, 1, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  fit.history = train<float>(fit.model, std::span<const SampleSet>(&fit.samples, 1), tc);
  const auto recon = reconstruct(fit.model, fit.model.latent(0), cfg.recon_resolution, cfg.recon_layers);
  fit.report = evaluate(recon.mesh, mesh, cfg.eval_points, cfg.eval_tau, cfg.seed);
  fit.seconds = seconds_since(t0);
  return fit;
}

TriangleMesh desk_sphere() { return normalize_mesh(make_icosphere(3, 1.0)); }
TriangleMesh desk_torus() { return normalize_mesh(make_torus(48, 24, 1.0, 0.4)); }

std::optional<DeskFit> sphere_fit;

const DeskFit& sphere() {
  if (!sphere_fit) sphere_fit = fit_desk(desk_sphere());
  return *sphere_fit;
}

// ------------------------------------------------------------ 1

double gradient_check(ModelState<double> st, const Batch<double>& batch, const LossOptions& o) {
  Parameters<double> grads = st.params.zeros_like();
  loss_and_gradients<double>(st, batch, o, &grads);
  std::vector<double> analytic;
  grads.for_each_block([&](const double* d, Eigen::Index n, ParamGroup) { analytic.insert(analytic.end(), d, d + n); });
  std::vector<double*> slots;
  st.params.for_each_block([&](double* d, Eigen::Index n, ParamGroup) {
    for (Eigen::Index i = 0; i < n; ++i) slots.push_back(d + i);
  });
  double worst = 0.0;
  // Near the cube root of machine epsilon, where rounding and truncation
  // error of a central difference balance.
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double h = 1e-5, saved = *slots[i];
    *slots[i] = saved + h;
    const double lp = loss_and_gradients<double>(st, batch, o, nullptr).total();
    *slots[i] = saved - h;
    const double lm = loss_and_gradients<double>(st, batch, o, nullptr).total();
    *slots[i] = saved;
    const double fd = (lp - lm) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.latent_dim = 3;
  c.feature_dim = 2;
  c.grid_resolution = 4;
  c.hidden_layers = 2;
  c.hidden_width = 8;
  c.grid_init_std = 0.3;
  auto st = create_model<double>(c, 2, 11);
  // Zero biases can leave a pre-activation exactly on the ReLU kink, where
  // central differences are meaningless; move them off it.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01(0.0, 0.1);
  for (auto* mlp : {&st.params.gen, &st.params.ovf})
    for (auto& b : mlp->biases)
      for (auto& v : b) v = n01(rng);

  SampleSet set;
  set.shape_id = 1;
  for (const auto& p : random_points(64, 13)) {
    set.points.push_back(p.cast<float>());
    set.distances.push_back(static_cast<float>(p.norm() - 0.5));
    set.in_band.push_back(set.points.size() % 3 == 0);
  }
  const auto batch = make_batch<double>(set);
  LossOptions o;
  o.lambda_latent = 0.05;
  o.lambda_grid = 0.2;
  double worst = gradient_check(st, batch, o);
  o.ovf_in_band_only = true;
  worst = std::max(worst, gradient_check(st, batch, o));
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0,
          "max rel err " + fmt("%.3e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------ 2

Outcome criterion_oracles() {
  const auto t0 = Clock::now();
  const auto mesh = make_uv_sphere(25, 11, 0.6);
  const SignedDistanceOracle sdf(mesh);
  double worst_sdf = 0.0;
  for (const auto& p : random_points(1000, 21))
    worst_sdf = std::max(worst_sdf, std::abs(sdf(p) - oracle::signed_distance(mesh, p)));

  FeatureGrid<double> grid(7, 3);
  std::mt19937_64 rng(22);
  grid.randomize(rng, 1.0);
  double worst_tri = 0.0;
  const double h = 2.0 / 6.0;
  for (const auto& x : random_points(2000, 23)) {
    const auto got = interpolate(grid, x);
    std::array<int, 3> base{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
      const double u = (x[a] + 1.0) / h;
      base[a] = std::min(5, static_cast<int>(std::floor(u)));
      t[a] = u - base[a];
    }
    Eigen::VectorXd want = Eigen::VectorXd::Zero(3);
    for (int dx = 0; dx < 2; ++dx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dz = 0; dz < 2; ++dz) {
          const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
          want += w * grid.features.col(static_cast<Eigen::Index>(
                          grid.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz)));
        }
    worst_tri = std::max(worst_tri, (got - want).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {mesh.triangles.size() == 500 && worst_sdf < 1e-9 && worst_tri < 1e-12 && secs < 30.0,
          std::to_string(mesh.triangles.size()) + " triangles, sdf diff " + fmt("%.2e", worst_sdf) +
              ", trilinear diff " + fmt("%.2e", worst_tri) + ", " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------ 3

Outcome criterion_marching_cubes() {
  const auto t0 = Clock::now();
  const auto recon = marching_cubes(pointwise_field([](const Vec3& x) { return x.norm() - 0.5; }), 32);
  const auto& mesh = recon.mesh;
  const double bound = 2.0 * std::sqrt(3.0) / 32.0;
  double worst = 0.0;
  for (const auto& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - 0.5));
  const bool closed = !mesh.triangles.empty() && count_open_edges(mesh) == 0;
  const long chi = oracle::euler_characteristic(mesh);
  const auto empty = marching_cubes(pointwise_field([](const Vec3&) { return 1.0; }), 32);
  const double secs = seconds_since(t0);
  return {closed && chi == 2 && worst <= bound && empty.mesh.triangles.empty() &&
              empty.mesh.vertices.empty() && secs < 10.0,
          std::to_string(mesh.triangles.size()) + " triangles, euler " + std::to_string(chi) +
              ", max radial error " + fmt("%.4f", worst) + " (bound " + fmt("%.4f", bound) +
              "), empty field -> " + std::to_string(empty.mesh.triangles.size()) + " triangles, " +
              fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------ 4

Outcome criterion_fusion() {
  // A briefly trained desk model, so that the band is a real shell.
  const auto mesh = desk_sphere();
  const SignedDistanceOracle sdf(mesh);
  RunConfig cfg = make_preset("desk");
  const auto samples = generate_queries(sdf, QueryConfig{16, 64, 2}, 0);
  auto st = create_model<float>(cfg.model, 1, 41);
  TrainConfig tc = cfg.train;
  tc.epochs = 30;
  tc.checkpoint_every = 0;
  train<float>(st, std::span<const SampleSet>(&samples, 1), tc);

  const VectorX<float> z = st.latent(0);
  const Bandwidth band = compute_band(st, z, 64, 3);
  const auto fused = fused_field(st, z, band);
  const auto pts = random_points(100000, 42);
  std::vector<double> got(pts.size()), gen(pts.size()), ovf(pts.size());
  fused(pts, got);
  evaluate_branch<float>(st, Branch::kGeneralization, z, pts, gen);
  evaluate_branch<float>(st, Branch::kOverfitting, z, pts, ovf);
  std::size_t inside = 0, violations = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = std::min(63, static_cast<int>(std::floor((pts[i][a] + 1.0) * 32.0)));
    const bool in = band.contains(c[0], c[1], c[2]);
    inside += in;
    violations += got[i] != (in ? ovf[i] : gen[i]);
  }
  return {violations == 0 && inside > 0 && inside < pts.size(),
          std::to_string(inside) + " of " + std::to_string(pts.size()) + " points in band cells, " +
              std::to_string(violations) + " violations"};
}

// ------------------------------------------------------------ 5

Outcome criterion_desk_fit() {
  const DeskFit& fit = sphere();
  const auto& r = fit.report;
  // In-band mean squared error of the overfitting branch on its own samples.
  std::vector<Vec3> band_pts;
  std::vector<double> band_s;
  for (std::size_t i = 0; i < fit.samples.size(); ++i)
    if (fit.samples.in_band[i]) {
      band_pts.push_back(fit.samples.points[i].cast<double>());
      band_s.push_back(fit.samples.distances[i]);
    }
  std::vector<double> pred(band_pts.size());
  evaluate_branch<float>(fit.model, Branch::kOverfitting, fit.model.latent(0), band_pts, pred);
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - band_s[i]) * (pred[i] - band_s[i]);
  mse /= static_cast<double>(pred.size());
  note("final loss total " + fmt("%.4e", fit.history.back().total) + " (gen " +
       fmt("%.3e", fit.history.back().gen) + ", ovf " + fmt("%.3e", fit.history.back().ovf) + ", z " +
       fmt("%.3e", fit.history.back().latent) + ", c " + fmt("%.3e", fit.history.back().grid) +
       "), in-band s_o mse " + fmt("%.3e", mse));
  return {r.cd < 5e-5 && r.f_score > 0.98 && fit.seconds < 900.0,
          "cd " + fmt("%.4e", r.cd) + ", f-score " + fmt("%.5f", r.f_score) + ", " +
              std::to_string(fit.history.size()) + " epochs, " + fmt("%.0f", fit.seconds) + " s"};
}

// ------------------------------------------------------------ 6

Outcome criterion_dual_vs_overfitting() {
  const auto t0 = Clock::now();
  const RunConfig cfg = make_preset("desk");
  const std::vector<TriangleMesh> meshes = {desk_sphere(), desk_torus()};
  std::vector<SampleSet> sets;
  for (std::uint32_t s = 0; s < meshes.size(); ++s)
    sets.push_back(generate_queries(SignedDistanceOracle(meshes[s]), cfg.sampling, s));
  auto st = create_model<float>(cfg.model, 2, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  train<float>(st, sets, tc);

  bool ordered = true;
  std::string detail;
  for (std::uint32_t s = 0; s < meshes.size(); ++s) {
    const auto z = st.latent(s);
    const auto fused = reconstruct(st, z, cfg.recon_resolution, 3);
    const auto over = reconstruct_branch(st, z, Branch::kOverfitting, cfg.recon_resolution);
    const double cd_fused = evaluate(fused.mesh, meshes[s], cfg.eval_points, cfg.eval_tau, cfg.seed, s).cd;
    const double cd_over = evaluate(over.mesh, meshes[s], cfg.eval_points, cfg.eval_tau, cfg.seed, s).cd;
    ordered = ordered && cd_fused < cd_over;
    detail += "shape " + std::to_string(s) + " fused " + fmt("%.4e", cd_fused) + " vs over-only " +
              fmt("%.4e", cd_over) + "; ";
    std::string layers = "shape " + std::to_string(s) + " cd by band layers:";
    for (int n : {1, 3, 6}) {
      const auto r = reconstruct(st, z, cfg.recon_resolution, n);
      layers += " n=" + std::to_string(n) + " " +
                fmt("%.4e", evaluate(r.mesh, meshes[s], cfg.eval_points, cfg.eval_tau, cfg.seed, s).cd);
    }
    note(layers);
  }
  const double secs = seconds_since(t0);
  return {ordered && secs < 1800.0, detail + fmt("%.0f", secs) + " s"};
}

// ------------------------------------------------------------ 7

Outcome criterion_sampling_economy() {
  const DeskFit& fit = sphere();
  const RunConfig cfg = make_preset("desk");
  const SignedDistanceOracle sdf(fit.gt);
  const int rc = cfg.sampling.coarse_resolution, rf = cfg.sampling.fine_resolution;
  const int step = rf / rc;

  std::set<std::array<int, 3>> all;
  for (int i = 0; i <= rc; ++i)
    for (int j = 0; j <= rc; ++j)
      for (int k = 0; k <= rc; ++k) all.insert({step * i, step * j, step * k});
  for (const auto& c : dilate(surface_cells(oracle_field(sdf), rf), cfg.sampling.layers).cells())
    for (int d = 0; d < 8; ++d) all.insert({c[0] + (d & 1), c[1] + ((d >> 1) & 1), c[2] + ((d >> 2) & 1)});
  const std::size_t dense = static_cast<std::size_t>(rf + 1) * (rf + 1) * (rf + 1);

  const auto uniform = generate_uniform_queries(oracle_field(sdf), rc, 0);
  auto st = create_model<float>(cfg.model, 1, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  train<float>(st, std::span<const SampleSet>(&uniform, 1), tc);
  const auto recon = reconstruct(st, st.latent(0), cfg.recon_resolution, cfg.recon_layers);
  const double cd_uniform = evaluate(recon.mesh, fit.gt, cfg.eval_points, cfg.eval_tau, cfg.seed).cd;

  const std::size_t n = fit.samples.size();
  return {n < dense && n == all.size() && fit.report.cd <= cd_uniform,
          std::to_string(n) + " samples (union " + std::to_string(all.size()) + ", dense " +
              std::to_string(dense) + "), cd banded " + fmt("%.4e", fit.report.cd) + " vs uniform " +
              std::to_string(uniform.size()) + "-point run " + fmt("%.4e", cd_uniform)};
}

// ------------------------------------------------------------ 8

Outcome criterion_latent_regularization() {
  const auto mesh = desk_sphere();
  const auto samples = generate_queries(SignedDistanceOracle(mesh), QueryConfig{16, 64, 1}, 0);
  const RunConfig cfg = make_preset("desk");
  auto norm_after = [&](double lambda) {
    auto st = create_model<float>(cfg.model, 1, cfg.seed);
    TrainConfig tc = cfg.train;
    // Small batches give Adam enough steps at lr_latent to move |z| by O(1).
    tc.epochs = 20;
    tc.batch_size = 512;
    tc.checkpoint_every = 0;
    tc.lambda_latent = lambda;
    train<float>(st, std::span<const SampleSet>(&samples, 1), tc);
    return static_cast<double>(st.latent(0).norm());
  };
  const double strong = norm_after(1e2), weak = norm_after(1e-4);
  return {strong * 10.0 <= weak,
          "|z| " + fmt("%.4e", strong) + " at 1e2 vs " + fmt("%.4e", weak) + " at 1e-4 (ratio " +
              fmt("%.1f", weak / strong) + ")"};
}

// ------------------------------------------------------------ 9

Outcome criterion_metrics() {
  const auto a = random_points(200, 91), b = random_points(300, 92);
  const double cd = chamfer(a, b), want = oracle::chamfer(a, b);
  const double rel = std::abs(cd - want) / want;
  bool ok = rel < 1e-12 && chamfer(a, a) == 0.0;
  const auto self = fscore(a, a, 0.01);
  ok = ok && self.precision == 1.0 && self.recall == 1.0 && self.f_score == 1.0;
  double prev_p = -1.0, prev_r = -1.0, worst_count = 0.0;
  for (double tau : {0.02, 0.05, 0.1, 0.2, 0.4}) {
    const auto f = fscore(a, b, tau);
    worst_count = std::max({worst_count, std::abs(f.precision - oracle::share_within(a, b, tau)),
                            std::abs(f.recall - oracle::share_within(b, a, tau))});
    ok = ok && f.precision >= prev_p && f.recall >= prev_r;
    prev_p = f.precision;
    prev_r = f.recall;
  }
  ok = ok && worst_count < 1e-12;
  return {ok, "chamfer rel err " + fmt("%.2e", rel) + ", fscore count diff " + fmt("%.2e", worst_count)};
}

// ------------------------------------------------------------ 10

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return out;
}

Outcome criterion_determinism() {
  const fs::path base = fs::temp_directory_path() / ("compact_sdf_acceptance_" + std::to_string(getpid()));
  fs::remove_all(base);
  const std::string common = std::string(" -q -c ") + COMPACT_SDF_DATA_DIR + "/fixtures.conf --set data.dir=" +
                             COMPACT_SDF_DATA_DIR +
                             " --set sampling.coarse_resolution=16 --set sampling.fine_resolution=64"
                             " --set train.epochs=4 --set train.checkpoint_every=2 --set run.seed=7";
  int status = 0;
  for (const char* run : {"a", "b"}) {
    const std::string out = " --set output.dir=" + (base / run).string();
    for (const char* cmd : {"sample", "train"}) {
      const std::string line = std::string(COMPACT_SDF_CLI) + " " + cmd + common + out + " > /dev/null";
      status |= std::system(line.c_str());
    }
  }
  if (status != 0) {
    fs::remove_all(base);
    return {false, "cli exited with a failure status"};
  }
  const auto a = tree_contents(base / "a"), b = tree_contents(base / "b");
  fs::remove_all(base);
  std::size_t bytes = 0;
  for (const auto& [name, data] : a) bytes += data.size();
  const bool has_outputs = a.count("model.csdf") && a.count("loss.csv") && a.count("samples/shape_0.csmp") &&
                           a.count("checkpoints/epoch_000002.csdf");
  return {has_outputs && a == b,
          std::to_string(a.size()) + " files, " + std::to_string(bytes) + " bytes, " +
              (a == b ? "identical" : "different")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  set_warning_sink([](const std::string& m) { note("warning: " + m); });
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", criterion_gradients},
      {2, "oracle equivalence", criterion_oracles},
      {3, "marching cubes", criterion_marching_cubes},
      {4, "fusion exactness", criterion_fusion},
      {5, "end-to-end desk fit", criterion_desk_fit},
      {6, "dual vs over-only", criterion_dual_vs_overfitting},
      {7, "sampling economy", criterion_sampling_economy},
      {8, "latent regularization", criterion_latent_regularization},
      {9, "metrics correctness", criterion_metrics},
      {10, "determinism", criterion_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
