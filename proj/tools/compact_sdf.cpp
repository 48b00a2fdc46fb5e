// compact-sdf: sampling, training, reconstruction and evaluation driver.
// Talks to the library only through the C interface.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "compact_sdf/compact_sdf.h"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

struct CommandError : std::runtime_error {
  CommandError(ExitCode code, const std::string& what) : std::runtime_error(what), code(code) {}
  ExitCode code;
};

[[noreturn]] void usage_error(const std::string& what) { throw CommandError(kUsage, what); }
[[noreturn]] void data_error(const std::string& what) { throw CommandError(kDataError, what); }

void check(csdf_status status, const std::string& context) {
  if (status == CSDF_OK) return;
  std::string what = context + ": " + csdf_last_error();
  if (status == CSDF_ERR_DIVERGED) throw CommandError(kDiverged, what);
  throw CommandError(kDataError, what);
}

struct Deleter {
  void operator()(csdf_config* p) const { csdf_config_free(p); }
  void operator()(csdf_mesh* p) const { csdf_mesh_free(p); }
  void operator()(csdf_samples* p) const { csdf_samples_free(p); }
  void operator()(csdf_model* p) const { csdf_model_free(p); }
};
using Config = std::unique_ptr<csdf_config, Deleter>;
using Mesh = std::unique_ptr<csdf_mesh, Deleter>;
using Samples = std::unique_ptr<csdf_samples, Deleter>;
using Model = std::unique_ptr<csdf_model, Deleter>;

template <class Fn>
std::string read_string(Fn&& fn) {
  std::size_t needed = 0;
  fn(nullptr, 0, &needed);
  std::string out(needed, '\0');
  fn(out.data(), out.size(), &needed);
  out.resize(needed > 0 ? needed - 1 : 0);
  return out;
}

void write_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out.flush()) data_error("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) data_error("cannot rename " + tmp.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// ------------------------------------------------------------ configuration

struct GlobalOptions {
  std::string preset = "desk";
  std::vector<std::string> config_files;
  std::vector<std::string> overrides;
  int threads = 0;
  bool quiet = false;
};

struct Run {
  Config cfg;

  std::string get(const std::string& key) const {
    std::string value = read_string([&](char* buf, std::size_t cap, std::size_t* needed) {
      check(csdf_config_get(cfg.get(), key.c_str(), buf, cap, needed), "config " + key);
    });
    return value;
  }
  long long get_int(const std::string& key) const { return std::stoll(get(key)); }
  double get_double(const std::string& key) const { return std::stod(get(key)); }

  fs::path output_dir() const { return get("output.dir"); }
  std::size_t shape_count() const {
    std::size_t n = 0;
    check(csdf_config_shape_count(cfg.get(), &n), "config");
    return n;
  }
  fs::path shape_path(std::size_t id) const {
    return read_string([&](char* buf, std::size_t cap, std::size_t* needed) {
      check(csdf_config_shape_path(cfg.get(), id, buf, cap, needed), "shape " + std::to_string(id));
    });
  }
  fs::path samples_path(std::size_t id) const {
    return output_dir() / "samples" / ("shape_" + std::to_string(id) + ".csmp");
  }
  fs::path model_path() const { return output_dir() / "model.csdf"; }
  fs::path recon_path(std::size_t id, csdf_branch branch, int layers) const {
    std::string name = "shape_" + std::to_string(id);
    if (branch == CSDF_BRANCH_FUSED) name += "_fused_n" + std::to_string(layers);
    if (branch == CSDF_BRANCH_GENERALIZATION) name += "_generalization";
    if (branch == CSDF_BRANCH_OVERFITTING) name += "_overfitting";
    return output_dir() / "recon" / (name + ".obj");
  }
};

Run make_run(const GlobalOptions& g) {
  if (g.threads > 0) setenv("COMPACT_SDF_THREADS", std::to_string(g.threads).c_str(), 1);
  Run run;
  csdf_config* raw = nullptr;
  if (csdf_config_preset(g.preset.c_str(), &raw) != CSDF_OK) usage_error(csdf_last_error());
  run.cfg.reset(raw);
  for (const auto& file : g.config_files)
    if (csdf_config_load(raw, file.c_str()) != CSDF_OK) usage_error(csdf_last_error());
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + kv + "'");
    if (csdf_config_set(raw, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != CSDF_OK)
      usage_error(csdf_last_error());
  }
  if (csdf_config_validate(raw) != CSDF_OK) usage_error(csdf_last_error());
  return run;
}

std::vector<std::size_t> selected_shapes(const Run& run, const std::optional<std::size_t>& shape) {
  const std::size_t n = run.shape_count();
  if (n == 0) usage_error("no shapes configured (set data.shapes)");
  if (shape) {
    if (*shape >= n) data_error("unknown shape id " + std::to_string(*shape));
    return {*shape};
  }
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

Mesh load_mesh(const fs::path& path, int flags) {
  csdf_mesh* raw = nullptr;
  check(csdf_mesh_load(path.c_str(), flags, &raw), path.string());
  return Mesh(raw);
}

Model load_model(const fs::path& path) {
  csdf_model* raw = nullptr;
  check(csdf_model_load(path.c_str(), &raw), path.string());
  return Model(raw);
}

csdf_model_info model_info(const csdf_model* model) {
  csdf_model_info info{};
  check(csdf_model_get_info(model, &info), "model");
  return info;
}

std::vector<float> model_latent(const csdf_model* model, std::size_t id) {
  const auto info = model_info(model);
  if (id >= info.shape_count)
    data_error("unknown shape id " + std::to_string(id) + " (model has " +
               std::to_string(info.shape_count) + " shapes)");
  std::vector<float> z(info.latent_dim);
  check(csdf_model_get_latent(model, static_cast<uint32_t>(id), z.data(), z.size()), "latent");
  return z;
}

Mesh reconstruct(const csdf_model* model, const std::vector<float>& z, int resolution, int layers,
                 csdf_branch branch) {
  csdf_mesh* raw = nullptr;
  check(csdf_model_reconstruct(model, z.data(), z.size(), resolution, layers, branch, &raw),
        "reconstruct");
  return Mesh(raw);
}

void save_obj(const csdf_mesh* mesh, const fs::path& path, const std::string& header = {}) {
  ensure_parent(path);
  check(csdf_mesh_save_obj(mesh, path.c_str(), header.empty() ? nullptr : header.c_str()),
        path.string());
}

csdf_branch parse_branch(const std::string& name) {
  if (name == "fused") return CSDF_BRANCH_FUSED;
  if (name == "generalization") return CSDF_BRANCH_GENERALIZATION;
  if (name == "overfitting") return CSDF_BRANCH_OVERFITTING;
  usage_error("unknown branch '" + name + "'");
}

const char* branch_name(csdf_branch b) {
  switch (b) {
    case CSDF_BRANCH_FUSED: return "fused";
    case CSDF_BRANCH_GENERALIZATION: return "generalization";
    case CSDF_BRANCH_OVERFITTING: return "overfitting";
  }
  return "?";
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      usage_error("expected a comma-separated list of integers, got '" + text + "'");
    }
  }
  if (out.empty()) usage_error("empty integer list");
  return out;
}

// ------------------------------------------------------------ metrics

struct EvalRow {
  std::string label;
  csdf_eval_report report;
};

csdf_eval_report evaluate(const Run& run, const csdf_mesh* recon, const csdf_mesh* gt, std::size_t id) {
  csdf_eval_report r{};
  check(csdf_evaluate(recon, gt, static_cast<std::size_t>(run.get_int("metrics.n_points")),
                      run.get_double("metrics.tau"), static_cast<uint64_t>(run.get_int("run.seed")),
                      static_cast<uint32_t>(id), &r),
        "evaluate");
  return r;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "shape_id,mesh,cd,f_score,precision,recall,tau,n_points,seed\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out += std::to_string(r.shape_id) + "," + row.label + "," + format_double(r.cd) + "," +
           format_double(r.f_score) + "," + format_double(r.precision) + "," +
           format_double(r.recall) + "," + format_double(r.tau) + "," + std::to_string(r.n_points) +
           "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

void print_eval_table(const std::vector<EvalRow>& rows) {
  std::printf("%-6s %-40s %14s %9s %9s %9s\n", "shape", "mesh", "chamfer", "f-score", "precision",
              "recall");
  for (const auto& row : rows) {
    const auto& r = row.report;
    std::printf("%-6u %-40s %14.6e %9.5f %9.5f %9.5f\n", r.shape_id, row.label.c_str(), r.cd,
                r.f_score, r.precision, r.recall);
  }
}

// ------------------------------------------------------------ sample

int cmd_sample(const Run& run, std::optional<std::size_t> shape, bool quiet) {
  const auto ids = selected_shapes(run, shape);
  std::string summary = "shape_id,mesh,coarse,band,overlap,merged,band_cells\n";
  int failures = 0;
  if (!quiet)
    std::printf("%-6s %10s %10s %10s %10s  %s\n", "shape", "coarse", "band", "merged", "cells", "mesh");
  for (std::size_t id : ids) {
    const fs::path mesh_path = run.shape_path(id);
    try {
      const Mesh mesh = load_mesh(mesh_path, CSDF_LOAD_NORMALIZE);
      csdf_samples* raw = nullptr;
      csdf_sample_stats stats{};
      check(csdf_samples_generate(mesh.get(), run.cfg.get(), static_cast<uint32_t>(id), &raw, &stats),
            mesh_path.string());
      const Samples samples(raw);
      const fs::path out = run.samples_path(id);
      ensure_parent(out);
      check(csdf_samples_write(samples.get(), out.c_str()), out.string());
      if (!quiet)
        std::printf("%-6zu %10zu %10zu %10zu %10zu  %s\n", id, stats.coarse, stats.band_vertices,
                    stats.merged, stats.band_cells, mesh_path.string().c_str());
      summary += std::to_string(id) + "," + mesh_path.string() + "," + std::to_string(stats.coarse) +
                 "," + std::to_string(stats.band_vertices) + "," + std::to_string(stats.overlap) + "," +
                 std::to_string(stats.merged) + "," + std::to_string(stats.band_cells) + "\n";
    } catch (const CommandError& e) {
      ++failures;
      std::fprintf(stderr, "shape %zu: %s\n", id, e.what());
    }
  }
  write_atomic(run.output_dir() / "samples" / "summary.csv", summary);
  if (failures > 0) data_error(std::to_string(failures) + " of " + std::to_string(ids.size()) +
                               " shapes failed");
  return kOk;
}

// ------------------------------------------------------------ train

constexpr const char* kLossHeader = "epoch,l_gen,l_ovf,l_z,l_c,total";

struct TrainSession {
  const Run* run = nullptr;
  std::vector<std::string> rows;
  int log_every = 10;
  bool quiet = false;
  std::string error;

  void write_loss() const {
    std::string text = std::string(kLossHeader) + "\n";
    for (const auto& r : rows) text += r + "\n";
    write_atomic(run->output_dir() / "loss.csv", text);
  }
};

void on_epoch(const csdf_epoch_log* log, void* user) {
  auto* s = static_cast<TrainSession*>(user);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%u,%.17g,%.17g,%.17g,%.17g,%.17g", log->epoch, log->gen, log->ovf,
                log->latent, log->grid, log->total);
  s->rows.emplace_back(buf);
  if (!s->quiet && (log->epoch == 1 || log->epoch % static_cast<uint32_t>(s->log_every) == 0))
    std::printf("epoch %5u  gen %.4e  ovf %.4e  z %.4e  c %.4e  total %.4e\n", log->epoch, log->gen,
                log->ovf, log->latent, log->grid, log->total);
  std::fflush(stdout);
}

void on_checkpoint(const csdf_model* model, void* user) {
  auto* s = static_cast<TrainSession*>(user);
  if (!s->error.empty()) return;
  try {
    char name[64];
    std::snprintf(name, sizeof(name), "epoch_%06u.csdf", model_info(model).epoch);
    const fs::path path = s->run->output_dir() / "checkpoints" / name;
    ensure_parent(path);
    check(csdf_model_save(model, path.c_str()), path.string());
    s->write_loss();
  } catch (const std::exception& e) {
    s->error = e.what();
  }
}

std::vector<std::string> previous_loss_rows(const fs::path& path, uint32_t up_to_epoch) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  if (line != kLossHeader) data_error(path.string() + ": unexpected loss log header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const unsigned long epoch = std::stoul(line.substr(0, line.find(',')));
    if (epoch <= up_to_epoch) rows.push_back(line);
  }
  return rows;
}

int cmd_train(const Run& run, const std::string& resume, int log_every, bool quiet) {
  const auto ids = selected_shapes(run, std::nullopt);
  std::vector<Samples> sets;
  std::vector<const csdf_samples*> set_ptrs;
  for (std::size_t id : ids) {
    const fs::path path = run.samples_path(id);
    if (!fs::exists(path))
      data_error("missing samples for shape " + std::to_string(id) + " (" + path.string() +
                 "); run `compact-sdf sample` first");
    csdf_samples* raw = nullptr;
    check(csdf_samples_read(path.c_str(), &raw), path.string());
    sets.emplace_back(raw);
    uint32_t shape_id = 0;
    check(csdf_samples_info(raw, &shape_id, nullptr, nullptr), path.string());
    if (shape_id != id) data_error(path.string() + " holds shape " + std::to_string(shape_id));
    set_ptrs.push_back(raw);
  }

  TrainSession session;
  session.run = &run;
  session.log_every = std::max(1, log_every);
  session.quiet = quiet;

  Model model;
  if (!resume.empty()) {
    model = load_model(resume);
    const auto info = model_info(model.get());
    if (info.shape_count != ids.size())
      data_error("checkpoint has " + std::to_string(info.shape_count) + " shapes, config lists " +
                 std::to_string(ids.size()));
    session.rows = previous_loss_rows(run.output_dir() / "loss.csv", info.epoch);
    if (!quiet) std::printf("resuming at epoch %u\n", info.epoch);
  } else {
    csdf_model* raw = nullptr;
    check(csdf_model_create(run.cfg.get(), static_cast<uint32_t>(ids.size()), &raw), "model");
    model.reset(raw);
  }

  const csdf_status status = csdf_model_train(model.get(), set_ptrs.data(), set_ptrs.size(),
                                              run.cfg.get(), on_epoch, on_checkpoint, &session);
  const std::string train_error = csdf_last_error();
  session.write_loss();
  if (!session.error.empty()) data_error("checkpoint: " + session.error);
  if (status == CSDF_ERR_DIVERGED)
    throw CommandError(kDiverged, "training diverged: " + train_error +
                                      "; the last periodic checkpoint is kept");
  if (status != CSDF_OK) data_error("train: " + train_error);

  const fs::path out = run.model_path();
  ensure_parent(out);
  check(csdf_model_save(model.get(), out.c_str()), out.string());
  if (!quiet) std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// ------------------------------------------------------------ reconstruct

int cmd_reconstruct(const Run& run, const std::string& model_arg, std::optional<std::size_t> shape,
                    int resolution, const std::string& layers_arg, const std::string& branch_arg,
                    bool with_eval, bool quiet) {
  const Model model = load_model(model_arg.empty() ? run.model_path() : fs::path(model_arg));
  const auto info = model_info(model.get());
  const int r = resolution > 0 ? resolution : static_cast<int>(run.get_int("reconstruct.resolution"));
  const std::vector<int> layers =
      parse_int_list(layers_arg.empty() ? run.get("reconstruct.layers") : layers_arg);

  std::vector<csdf_branch> branches;
  if (branch_arg == "all") {
    branches = {CSDF_BRANCH_FUSED, CSDF_BRANCH_GENERALIZATION, CSDF_BRANCH_OVERFITTING};
  } else {
    branches = {parse_branch(branch_arg)};
  }

  std::vector<std::size_t> ids;
  if (shape) {
    ids = {*shape};
  } else {
    for (uint32_t i = 0; i < info.shape_count; ++i) ids.push_back(i);
  }

  std::vector<EvalRow> rows;
  for (std::size_t id : ids) {
    const auto z = model_latent(model.get(), id);
    Mesh gt;
    if (with_eval) gt = load_mesh(run.shape_path(id), CSDF_LOAD_NORMALIZE);
    for (csdf_branch b : branches) {
      const std::vector<int> ns = b == CSDF_BRANCH_FUSED ? layers : std::vector<int>{-1};
      for (int n : ns) {
        const Mesh mesh = reconstruct(model.get(), z, r, std::max(n, 0), b);
        const fs::path out = run.recon_path(id, b, n);
        save_obj(mesh.get(), out);
        std::size_t nv = 0, nt = 0;
        check(csdf_mesh_counts(mesh.get(), &nv, &nt), "mesh");
        if (!quiet) std::printf("shape %zu %-14s -> %s (%zu vertices, %zu triangles)\n", id,
                                b == CSDF_BRANCH_FUSED ? ("fused n=" + std::to_string(n)).c_str()
                                                       : branch_name(b),
                                out.string().c_str(), nv, nt);
        if (with_eval) rows.push_back({out.filename().string(), evaluate(run, mesh.get(), gt.get(), id)});
      }
    }
  }
  if (with_eval) {
    print_eval_table(rows);
    write_atomic(run.output_dir() / "reports" / "reconstruct.csv", eval_csv(rows));
  }
  return kOk;
}

// ------------------------------------------------------------ eval

int cmd_eval(const Run& run, std::optional<std::size_t> shape, const std::string& mesh_arg,
             const std::string& gt_arg, bool normalize_mesh, const std::string& report) {
  std::vector<EvalRow> rows;
  if (!mesh_arg.empty()) {
    const std::size_t id = shape.value_or(0);
    const fs::path gt_path = gt_arg.empty() ? run.shape_path(id) : fs::path(gt_arg);
    const Mesh gt = load_mesh(gt_path, CSDF_LOAD_NORMALIZE);
    const Mesh recon = load_mesh(mesh_arg, normalize_mesh ? CSDF_LOAD_NORMALIZE
                                                          : CSDF_LOAD_UNCHECKED);
    rows.push_back({fs::path(mesh_arg).filename().string(), evaluate(run, recon.get(), gt.get(), id)});
  } else {
    if (!gt_arg.empty()) usage_error("--gt needs --mesh");
    const int layers = static_cast<int>(run.get_int("reconstruct.layers"));
    for (std::size_t id : selected_shapes(run, shape)) {
      const fs::path recon_path = run.recon_path(id, CSDF_BRANCH_FUSED, layers);
      if (!fs::exists(recon_path))
        data_error("missing reconstruction " + recon_path.string() + "; run `compact-sdf reconstruct` first");
      const Mesh gt = load_mesh(run.shape_path(id), CSDF_LOAD_NORMALIZE);
      const Mesh recon = load_mesh(recon_path, CSDF_LOAD_UNCHECKED);
      rows.push_back({recon_path.filename().string(), evaluate(run, recon.get(), gt.get(), id)});
    }
  }
  print_eval_table(rows);
  write_atomic(report.empty() ? run.output_dir() / "reports" / "eval.csv" : fs::path(report),
               eval_csv(rows));
  return kOk;
}

// ------------------------------------------------------------ interp

int cmd_interp(const Run& run, const std::string& model_arg, std::size_t a, std::size_t b, int steps,
               int resolution, int layers, bool quiet) {
  if (steps < 1) usage_error("--steps must be at least 1");
  const Model model = load_model(model_arg.empty() ? run.model_path() : fs::path(model_arg));
  const auto za = model_latent(model.get(), a);
  const auto zb = model_latent(model.get(), b);
  const int r = resolution > 0 ? resolution : static_cast<int>(run.get_int("reconstruct.resolution"));
  const int n = layers >= 0 ? layers : static_cast<int>(run.get_int("reconstruct.layers"));
  const int width = static_cast<int>(std::to_string(steps).size());
  std::vector<float> z(za.size());
  for (int j = 0; j <= steps; ++j) {
    const double t = static_cast<double>(j) / steps;
    check(csdf_latent_lerp(za.data(), zb.data(), z.size(), t, z.data()), "interpolate");
    const Mesh mesh = reconstruct(model.get(), z, r, n, CSDF_BRANCH_FUSED);
    char name[96];
    std::snprintf(name, sizeof(name), "interp_%zu_%zu_%0*d.obj", a, b, width, j);
    const fs::path out = run.output_dir() / "interp" / name;
    save_obj(mesh.get(), out, "interpolation " + std::to_string(a) + " " + std::to_string(b) + " t " +
                                  format_double(t));
    if (!quiet) std::printf("t=%-8s -> %s\n", format_double(t).c_str(), out.string().c_str());
  }
  return kOk;
}

// ------------------------------------------------------------ complete

int cmd_complete(const Run& run, const std::string& model_arg, const std::string& input,
                 const std::string& gt_arg, const std::string& output_arg, int jitter_copies,
                 double jitter_sigma, int resolution, int layers, bool quiet) {
  const Model model = load_model(model_arg.empty() ? run.model_path() : fs::path(model_arg));
  const auto info = model_info(model.get());

  double* raw_xyz = nullptr;
  std::size_t count = 0;
  check(csdf_points_load(input.c_str(), &raw_xyz, &count), input);
  std::vector<double> xyz(raw_xyz, raw_xyz + 3 * count);
  csdf_points_free(raw_xyz);

  std::vector<double> distances;
  std::string protocol;
  Mesh gt;
  if (gt_arg.empty()) {
    protocol = "zero-level: every input point is an observation with signed distance 0";
  } else {
    if (jitter_copies < 0 || !(jitter_sigma >= 0.0)) usage_error("invalid jitter settings");
    gt = load_mesh(gt_arg, CSDF_LOAD_NORMALIZE);
    std::mt19937_64 rng(static_cast<uint64_t>(run.get_int("run.seed")));
    std::normal_distribution<double> noise(0.0, jitter_sigma);
    const std::size_t base = count;
    for (std::size_t i = 0; i < base; ++i)
      for (int c = 0; c < jitter_copies; ++c)
        for (int d = 0; d < 3; ++d)
          xyz.push_back(std::clamp(xyz[3 * i + d] + noise(rng), -1.0, 1.0));
    count = xyz.size() / 3;
    distances.resize(count);
    check(csdf_mesh_signed_distance(gt.get(), xyz.data(), count, distances.data()), gt_arg);
    protocol = "gt-labeled: each input point plus " + std::to_string(jitter_copies) +
               " gaussian jitters (sigma " + format_double(jitter_sigma) +
               ") labeled with the ground-truth signed distance";
  }

  csdf_samples* raw_obs = nullptr;
  check(csdf_samples_from_points(xyz.data(), distances.empty() ? nullptr : distances.data(), count,
                                 info.shape_count, &raw_obs),
        "observations");
  const Samples obs(raw_obs);
  std::vector<float> z(info.latent_dim);
  check(csdf_model_infer_latent(model.get(), obs.get(), run.cfg.get(), z.data(), z.size()),
        "latent inference");

  const int r = resolution > 0 ? resolution : static_cast<int>(run.get_int("reconstruct.resolution"));
  const int n = layers >= 0 ? layers : static_cast<int>(run.get_int("reconstruct.layers"));
  const Mesh mesh = reconstruct(model.get(), z, r, n, CSDF_BRANCH_FUSED);
  const fs::path out = output_arg.empty()
                           ? run.output_dir() / "complete" / (fs::path(input).stem().string() + ".obj")
                           : fs::path(output_arg);
  const std::string header = "completion input " + fs::path(input).filename().string() +
                             "\ncompletion protocol " + protocol + "\ncompletion observations " +
                             std::to_string(count) + "\ncompletion infer iterations " +
                             run.get("infer.iterations") + " lr " + run.get("infer.lr");
  save_obj(mesh.get(), out, header);
  if (!quiet) std::printf("%zu observations (%s) -> %s\n", count, gt_arg.empty() ? "zero-level" : "gt-labeled",
                          out.string().c_str());
  if (gt) {
    std::vector<EvalRow> rows{{out.filename().string(), evaluate(run, mesh.get(), gt.get(), info.shape_count)}};
    print_eval_table(rows);
    fs::path report = out;
    report.replace_extension(".csv");
    write_atomic(report, eval_csv(rows));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit many signed distance fields in one latent space and reconstruct meshes."};
  app.set_version_flag("--version", csdf_version());
  app.require_subcommand(1);

  GlobalOptions g;
  auto add_globals = [&](CLI::App* cmd) {
    cmd->add_option("--preset", g.preset, "desk or paper")->capture_default_str();
    cmd->add_option("-c,--config", g.config_files, "key = value config file, applied in order");
    cmd->add_option("-s,--set", g.overrides, "override one setting, key=value");
    cmd->add_option("--threads", g.threads, "worker threads (default: COMPACT_SDF_THREADS or all cores)");
    cmd->add_flag("-q,--quiet", g.quiet, "only print errors and reports");
  };

  std::optional<std::size_t> shape;
  std::string model_path, resume, layers_arg, branch = "fused", mesh_arg, gt_arg, report, input, output;
  int resolution = 0, layers = -1, steps = 8, log_every = 10, jitter_copies = 2;
  double jitter_sigma = 0.02;
  std::size_t from = 0, to = 1;
  bool with_eval = false, normalize_mesh = false, print_config = false;

  auto* sample = app.add_subcommand("sample", "write one CSMP sample file per shape");
  add_globals(sample);
  sample->add_option("--shape", shape, "only this shape id");

  auto* train = app.add_subcommand("train", "train the shared model on all sample files");
  add_globals(train);
  train->add_option("--resume", resume, "continue from this checkpoint");
  train->add_option("--log-every", log_every, "print every N epochs")->capture_default_str();

  auto* recon = app.add_subcommand("reconstruct", "extract meshes from a trained model");
  add_globals(recon);
  recon->add_option("--model", model_path, "checkpoint (default <output.dir>/model.csdf)");
  recon->add_option("--shape", shape, "only this shape id");
  recon->add_option("-r,--resolution", resolution, "marching cubes resolution");
  recon->add_option("-n,--layers", layers_arg, "band dilation(s), comma-separated");
  recon->add_option("--branch", branch, "fused, generalization, overfitting or all")->capture_default_str();
  recon->add_flag("--eval", with_eval, "score each mesh against its ground truth");

  auto* eval = app.add_subcommand("eval", "chamfer distance and F-score against ground truth");
  add_globals(eval);
  eval->add_option("--shape", shape, "shape id (ground truth from the config)");
  eval->add_option("--mesh", mesh_arg, "mesh to score (default: fused reconstructions)");
  eval->add_option("--gt", gt_arg, "ground-truth mesh, normalized on load");
  eval->add_flag("--normalize-mesh", normalize_mesh, "normalize --mesh as well (raw input meshes)");
  eval->add_option("--report", report, "CSV report path");

  auto* interp = app.add_subcommand("interp", "meshes along a latent interpolation");
  add_globals(interp);
  interp->add_option("--model", model_path, "checkpoint (default <output.dir>/model.csdf)");
  interp->add_option("--from", from, "first shape id")->required();
  interp->add_option("--to", to, "second shape id")->required();
  interp->add_option("--steps", steps, "intervals; steps + 1 meshes are written")->capture_default_str();
  interp->add_option("-r,--resolution", resolution, "marching cubes resolution");
  interp->add_option("-n,--layers", layers, "band dilation");

  auto* complete = app.add_subcommand("complete", "fit a latent to a partial point cloud");
  add_globals(complete);
  complete->add_option("--model", model_path, "checkpoint (default <output.dir>/model.csdf)");
  complete->add_option("-i,--input", input, "partial point cloud (PLY or OBJ), model frame")->required();
  complete->add_option("--gt", gt_arg, "ground-truth mesh; enables signed-distance labels");
  complete->add_option("-o,--output", output, "output mesh");
  complete->add_option("--jitter-copies", jitter_copies, "labeled jitters per point with --gt")
      ->capture_default_str();
  complete->add_option("--jitter-sigma", jitter_sigma, "jitter standard deviation")->capture_default_str();
  complete->add_option("-r,--resolution", resolution, "marching cubes resolution");
  complete->add_option("-n,--layers", layers, "band dilation");

  auto* config = app.add_subcommand("config", "print the effective configuration");
  add_globals(config);
  config->callback([&] { print_config = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const Run run = make_run(g);
    if (print_config) {
      std::fputs(read_string([&](char* buf, std::size_t cap, std::size_t* needed) {
                   check(csdf_config_to_text(run.cfg.get(), buf, cap, needed), "config");
                 }).c_str(),
                 stdout);
      return kOk;
    }
    if (*sample) return cmd_sample(run, shape, g.quiet);
    if (*train) return cmd_train(run, resume, log_every, g.quiet);
    if (*recon) return cmd_reconstruct(run, model_path, shape, resolution, layers_arg, branch, with_eval, g.quiet);
    if (*eval) return cmd_eval(run, shape, mesh_arg, gt_arg, normalize_mesh, report);
    if (*interp) return cmd_interp(run, model_path, from, to, steps, resolution, layers, g.quiet);
    if (*complete)
      return cmd_complete(run, model_path, input, gt_arg, output, jitter_copies, jitter_sigma, resolution,
                          layers, g.quiet);
  } catch (const CommandError& e) {
    std::fprintf(stderr, "compact-sdf: %s\n", e.what());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "compact-sdf: %s\n", e.what());
    return kDataError;
  }
  return kUsage;
}
