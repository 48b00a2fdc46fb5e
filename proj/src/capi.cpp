#include "compact_sdf/compact_sdf.h"

#include <cstring>
#include <memory>
#include <sstream>

#include "compact_sdf/bvh.hpp"
#include "compact_sdf/config.hpp"
#include "compact_sdf/error.hpp"
#include "compact_sdf/metrics.hpp"
#include "compact_sdf/model.hpp"
#include "compact_sdf/reconstruct.hpp"

struct csdf_config {
  csdf::RunConfig cfg;
};

struct csdf_mesh {
  csdf::TriangleMesh mesh;
  std::vector<std::string> header;
  std::unique_ptr<csdf::SignedDistanceOracle> oracle;

  const csdf::SignedDistanceOracle& sdf() {
    if (!oracle) oracle = std::make_unique<csdf::SignedDistanceOracle>(mesh);
    return *oracle;
  }
};

struct csdf_samples {
  csdf::SampleSet set;
};

struct csdf_model {
  csdf::ModelState<float> state;
};

namespace {

thread_local std::string last_error;

csdf_status status_of(csdf::ErrorCode code) {
  switch (code) {
    case csdf::ErrorCode::kInvalidArgument: return CSDF_ERR_INVALID_ARGUMENT;
    case csdf::ErrorCode::kIo: return CSDF_ERR_IO;
    case csdf::ErrorCode::kParse: return CSDF_ERR_PARSE;
    case csdf::ErrorCode::kNonWatertight: return CSDF_ERR_NON_WATERTIGHT;
    case csdf::ErrorCode::kDegenerate: return CSDF_ERR_DEGENERATE;
    case csdf::ErrorCode::kOutOfDomain: return CSDF_ERR_OUT_OF_DOMAIN;
    case csdf::ErrorCode::kUnknownShape: return CSDF_ERR_UNKNOWN_SHAPE;
    case csdf::ErrorCode::kDiverged: return CSDF_ERR_DIVERGED;
    case csdf::ErrorCode::kEmpty: return CSDF_ERR_EMPTY;
  }
  return CSDF_ERR_INTERNAL;
}

template <class Fn>
csdf_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return CSDF_OK;
  } catch (const csdf::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return CSDF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return CSDF_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw csdf::Error(csdf::ErrorCode::kInvalidArgument, what);
}

void copy_out(const std::string& value, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = value.size() + 1;
  if (buf && cap > 0) {
    const std::size_t n = std::min(cap - 1, value.size());
    std::memcpy(buf, value.data(), n);
    buf[n] = '\0';
  }
}

std::vector<csdf::Vec3> to_points(const double* xyz, std::size_t count) {
  std::vector<csdf::Vec3> pts(count);
  for (std::size_t i = 0; i < count; ++i) pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  return pts;
}

csdf::VectorX<float> to_latent(const csdf_model* model, const float* latent, std::size_t dim) {
  require(latent != nullptr, "latent is null");
  if (dim != static_cast<std::size_t>(model->state.config.latent_dim))
    throw csdf::Error(csdf::ErrorCode::kInvalidArgument,
                      "latent dimension " + std::to_string(dim) + " does not match model (" +
                          std::to_string(model->state.config.latent_dim) + ")");
  return Eigen::Map<const csdf::VectorX<float>>(latent, static_cast<Eigen::Index>(dim));
}

void write_latent(const csdf::VectorX<float>& z, float* out, std::size_t dim) {
  require(out != nullptr, "output buffer is null");
  if (dim != static_cast<std::size_t>(z.size()))
    throw csdf::Error(csdf::ErrorCode::kInvalidArgument,
                      "latent buffer holds " + std::to_string(dim) + " values, model needs " +
                          std::to_string(z.size()));
  std::copy(z.data(), z.data() + z.size(), out);
}

}  // namespace

extern "C" {

const char* csdf_version(void) { return "0.1.0"; }

const char* csdf_status_string(csdf_status status) {
  switch (status) {
    case CSDF_OK: return "ok";
    case CSDF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CSDF_ERR_IO: return "i/o error";
    case CSDF_ERR_PARSE: return "parse error";
    case CSDF_ERR_NON_WATERTIGHT: return "mesh not watertight";
    case CSDF_ERR_DEGENERATE: return "degenerate geometry";
    case CSDF_ERR_OUT_OF_DOMAIN: return "point outside domain";
    case CSDF_ERR_UNKNOWN_SHAPE: return "unknown shape";
    case CSDF_ERR_DIVERGED: return "training diverged";
    case CSDF_ERR_EMPTY: return "empty input";
    case CSDF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* csdf_last_error(void) { return last_error.c_str(); }

void csdf_set_warning_handler(csdf_warning_fn fn, void* user) {
  if (!fn) {
    csdf::set_warning_sink([](const std::string& m) { std::fprintf(stderr, "warning: %s\n", m.c_str()); });
    return;
  }
  csdf::set_warning_sink([fn, user](const std::string& m) { fn(m.c_str(), user); });
}

// ---------------------------------------------------------------- config

csdf_status csdf_config_preset(const char* name, csdf_config** out) {
  return guarded([&] {
    require(name && out, "null argument");
    *out = new csdf_config{csdf::make_preset(name)};
  });
}

csdf_status csdf_config_load(csdf_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg && path, "null argument");
    cfg->cfg.apply_file(path);
  });
}

csdf_status csdf_config_set(csdf_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "null argument");
    cfg->cfg.set(key, value);
  });
}

csdf_status csdf_config_get(const csdf_config* cfg, const char* key, char* buf, size_t cap,
                            size_t* needed) {
  return guarded([&] {
    require(cfg && key, "null argument");
    copy_out(cfg->cfg.get(key), buf, cap, needed);
  });
}

csdf_status csdf_config_to_text(const csdf_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    copy_out(cfg->cfg.to_text(), buf, cap, needed);
  });
}

csdf_status csdf_config_validate(const csdf_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    cfg->cfg.validate();
  });
}

csdf_status csdf_config_shape_count(const csdf_config* cfg, size_t* out) {
  return guarded([&] {
    require(cfg && out, "null argument");
    *out = cfg->cfg.shapes.size();
  });
}

csdf_status csdf_config_shape_path(const csdf_config* cfg, size_t index, char* buf, size_t cap,
                                   size_t* needed) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    copy_out(cfg->cfg.shape_path(index).string(), buf, cap, needed);
  });
}

void csdf_config_free(csdf_config* cfg) { delete cfg; }

// ---------------------------------------------------------------- meshes

csdf_status csdf_mesh_load(const char* path, int flags, csdf_mesh** out) {
  return guarded([&] {
    require(path && out, "null argument");
    require((flags & ~(CSDF_LOAD_NORMALIZE | CSDF_LOAD_UNCHECKED)) == 0, "unknown mesh load flags");
    auto m = std::make_unique<csdf_mesh>();
    m->mesh = (flags & CSDF_LOAD_UNCHECKED) ? csdf::read_mesh(path) : csdf::load_mesh(path);
    if (flags & CSDF_LOAD_NORMALIZE) m->mesh = csdf::normalize_mesh(m->mesh);
    *out = m.release();
  });
}

csdf_status csdf_mesh_create(const double* xyz, size_t vertex_count, const uint32_t* tris,
                             size_t triangle_count, csdf_mesh** out) {
  return guarded([&] {
    require(out && (xyz || vertex_count == 0) && (tris || triangle_count == 0), "null argument");
    auto m = std::make_unique<csdf_mesh>();
    m->mesh.vertices = to_points(xyz, vertex_count);
    m->mesh.triangles.resize(triangle_count);
    for (std::size_t t = 0; t < triangle_count; ++t) {
      for (int k = 0; k < 3; ++k) {
        require(tris[3 * t + k] < vertex_count, "triangle index out of range");
        m->mesh.triangles[t][k] = tris[3 * t + k];
      }
    }
    *out = m.release();
  });
}

csdf_status csdf_points_load(const char* path, double** xyz, size_t* count) {
  return guarded([&] {
    require(path && xyz && count, "null argument");
    const auto pts = csdf::load_points(path);
    auto* buf = new double[3 * pts.size() + 1];
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (int k = 0; k < 3; ++k) buf[3 * i + k] = pts[i][k];
    *xyz = buf;
    *count = pts.size();
  });
}

void csdf_points_free(double* xyz) { delete[] xyz; }

csdf_status csdf_mesh_save_obj(const csdf_mesh* mesh, const char* path, const char* header) {
  return guarded([&] {
    require(mesh && path, "null argument");
    std::vector<std::string> lines = mesh->header;
    if (header) {
      std::istringstream in(header);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    }
    csdf::write_obj(mesh->mesh, path, lines);
  });
}

csdf_status csdf_mesh_counts(const csdf_mesh* mesh, size_t* vertices, size_t* triangles) {
  return guarded([&] {
    require(mesh != nullptr, "null argument");
    if (vertices) *vertices = mesh->mesh.vertices.size();
    if (triangles) *triangles = mesh->mesh.triangles.size();
  });
}

csdf_status csdf_mesh_signed_distance(csdf_mesh* mesh, const double* xyz, size_t count,
                                      double* out) {
  return guarded([&] {
    require(mesh && (xyz || count == 0) && (out || count == 0), "null argument");
    const auto pts = to_points(xyz, count);
    mesh->sdf().evaluate(pts, std::span<double>(out, count));
  });
}

void csdf_mesh_free(csdf_mesh* mesh) { delete mesh; }

// ---------------------------------------------------------------- samples

csdf_status csdf_samples_generate(csdf_mesh* mesh, const csdf_config* cfg, uint32_t shape_id,
                                  csdf_samples** out, csdf_sample_stats* stats) {
  return guarded([&] {
    require(mesh && cfg && out, "null argument");
    csdf::SampleStats s;
    auto set = csdf::generate_queries(mesh->sdf(), cfg->cfg.sampling, shape_id, &s);
    if (stats) *stats = {s.coarse, s.band_vertices, s.overlap, s.merged, s.band_cells};
    *out = new csdf_samples{std::move(set)};
  });
}

csdf_status csdf_samples_from_points(const double* xyz, const double* distances, size_t count,
                                     uint32_t shape_id, csdf_samples** out) {
  return guarded([&] {
    require(out && (xyz || count == 0), "null argument");
    csdf::SampleSet set;
    set.shape_id = shape_id;
    for (std::size_t i = 0; i < count; ++i) {
      const csdf::Vec3 p(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
      if (!(p.cwiseAbs().maxCoeff() <= 1.0))
        throw csdf::Error(csdf::ErrorCode::kOutOfDomain, "observation outside [-1, 1]^3");
      set.points.push_back(p.cast<float>());
      set.distances.push_back(distances ? static_cast<float>(distances[i]) : 0.0f);
      set.in_band.push_back(1);
    }
    *out = new csdf_samples{std::move(set)};
  });
}

csdf_status csdf_samples_read(const char* path, csdf_samples** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new csdf_samples{csdf::read_samples(path)};
  });
}

csdf_status csdf_samples_write(const csdf_samples* samples, const char* path) {
  return guarded([&] {
    require(samples && path, "null argument");
    csdf::write_samples(samples->set, path);
  });
}

csdf_status csdf_samples_info(const csdf_samples* samples, uint32_t* shape_id, size_t* count,
                              size_t* in_band) {
  return guarded([&] {
    require(samples != nullptr, "null argument");
    if (shape_id) *shape_id = samples->set.shape_id;
    if (count) *count = samples->set.size();
    if (in_band) *in_band = samples->set.in_band_count();
  });
}

void csdf_samples_free(csdf_samples* samples) { delete samples; }

void csdf_model_free(csdf_model* model) { delete model; }

// ---------------------------------------------------------------- models

csdf_status csdf_model_create(const csdf_config* cfg, uint32_t shape_count, csdf_model** out) {
  return guarded([&] {
    require(cfg && out, "null argument");
    *out = new csdf_model{csdf::create_model<float>(cfg->cfg.model, shape_count, cfg->cfg.seed)};
  });
}

csdf_status csdf_model_load(const char* path, csdf_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new csdf_model{csdf::load_checkpoint(path)};
  });
}

csdf_status csdf_model_save(const csdf_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "null argument");
    csdf::save_checkpoint(model->state, path);
  });
}

csdf_status csdf_model_get_info(const csdf_model* model, csdf_model_info* out) {
  return guarded([&] {
    require(model && out, "null argument");
    const auto& c = model->state.config;
    *out = {model->state.shape_count(),
            static_cast<uint32_t>(c.latent_dim),
            static_cast<uint32_t>(c.feature_dim),
            static_cast<uint32_t>(c.grid_resolution),
            static_cast<uint32_t>(c.hidden_layers),
            static_cast<uint32_t>(c.hidden_width),
            model->state.epoch,
            model->state.step};
  });
}

csdf_status csdf_model_train(csdf_model* model, const csdf_samples* const* sets, size_t set_count,
                             const csdf_config* cfg, csdf_epoch_fn on_epoch,
                             csdf_checkpoint_fn on_checkpoint, void* user) {
  return guarded([&] {
    require(model && cfg && (sets || set_count == 0), "null argument");
    std::vector<csdf::SampleSet> data;
    data.reserve(set_count);
    for (std::size_t i = 0; i < set_count; ++i) {
      require(sets[i] != nullptr, "null sample set");
      data.push_back(sets[i]->set);
    }
    csdf::TrainConfig tc = cfg->cfg.train;
    tc.seed = cfg->cfg.seed;
    csdf::TrainHooks<float> hooks;
    if (on_epoch)
      hooks.on_epoch = [&](const csdf::EpochLog& l) {
        const csdf_epoch_log log{l.epoch, l.gen, l.ovf, l.latent, l.grid, l.total};
        on_epoch(&log, user);
      };
    if (on_checkpoint)
      hooks.on_checkpoint = [&](const csdf::ModelState<float>&) { on_checkpoint(model, user); };
    csdf::train(model->state, std::span<const csdf::SampleSet>(data), tc, hooks);
  });
}

csdf_status csdf_model_get_latent(const csdf_model* model, uint32_t shape_id, float* out,
                                  size_t dim) {
  return guarded([&] {
    require(model != nullptr, "null argument");
    write_latent(model->state.latent(shape_id), out, dim);
  });
}

csdf_status csdf_model_infer_latent(const csdf_model* model, const csdf_samples* obs,
                                    const csdf_config* cfg, float* out, size_t dim) {
  return guarded([&] {
    require(model && obs && cfg, "null argument");
    csdf::InferConfig ic = cfg->cfg.infer;
    ic.seed = cfg->cfg.seed;
    write_latent(csdf::infer_latent(model->state, obs->set, ic), out, dim);
  });
}

csdf_status csdf_latent_lerp(const float* a, const float* b, size_t dim, double t, float* out) {
  return guarded([&] {
    require(a && b && out, "null argument");
    using V = csdf::VectorX<float>;
    const Eigen::Map<const V> za(a, static_cast<Eigen::Index>(dim));
    const Eigen::Map<const V> zb(b, static_cast<Eigen::Index>(dim));
    const V z = csdf::interpolate_latents<float>(za, zb, t);
    std::copy(z.data(), z.data() + z.size(), out);
  });
}

csdf_status csdf_model_reconstruct(const csdf_model* model, const float* latent, size_t dim,
                                   int resolution, int layers, csdf_branch branch,
                                   csdf_mesh** out) {
  return guarded([&] {
    require(model && out, "null argument");
    const auto z = to_latent(model, latent, dim);
    csdf::ReconMesh r;
    switch (branch) {
      case CSDF_BRANCH_FUSED:
        require(layers >= 0, "band layers must be >= 0");
        r = csdf::reconstruct(model->state, z, resolution, layers);
        break;
      case CSDF_BRANCH_GENERALIZATION:
        r = csdf::reconstruct_branch(model->state, z, csdf::Branch::kGeneralization, resolution);
        break;
      case CSDF_BRANCH_OVERFITTING:
        r = csdf::reconstruct_branch(model->state, z, csdf::Branch::kOverfitting, resolution);
        break;
      default:
        require(false, "unknown branch");
    }
    auto m = std::make_unique<csdf_mesh>();
    m->mesh = std::move(r.mesh);
    m->header.push_back("resolution " + std::to_string(r.resolution));
    m->header.push_back("branch " + r.branch);
    if (r.layers >= 0) m->header.push_back("layers " + std::to_string(r.layers));
    *out = m.release();
  });
}

// ---------------------------------------------------------------- metrics

csdf_status csdf_evaluate(const csdf_mesh* recon, const csdf_mesh* gt, size_t n_points, double tau,
                          uint64_t seed, uint32_t shape_id, csdf_eval_report* out) {
  return guarded([&] {
    require(recon && gt && out, "null argument");
    const auto r = csdf::evaluate(recon->mesh, gt->mesh, n_points, tau, seed, shape_id);
    *out = {r.shape_id, r.cd, r.f_score, r.precision, r.recall, r.tau, r.n_points, r.seed};
  });
}

}  // extern "C"
