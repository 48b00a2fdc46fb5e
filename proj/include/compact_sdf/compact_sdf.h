/* C interface to the compact_sdf library. Every function returns a status;
 * on failure csdf_last_error() describes the problem for the calling thread.
 * Handles are opaque and released with the matching *_free function. */
#ifndef COMPACT_SDF_H
#define COMPACT_SDF_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(CSDF_BUILDING_LIBRARY)
#define CSDF_API __attribute__((visibility("default")))
#else
#define CSDF_API
#endif

typedef enum csdf_status {
  CSDF_OK = 0,
  CSDF_ERR_INVALID_ARGUMENT = 1,
  CSDF_ERR_IO = 2,
  CSDF_ERR_PARSE = 3,
  CSDF_ERR_NON_WATERTIGHT = 4,
  CSDF_ERR_DEGENERATE = 5,
  CSDF_ERR_OUT_OF_DOMAIN = 6,
  CSDF_ERR_UNKNOWN_SHAPE = 7,
  CSDF_ERR_DIVERGED = 8,
  CSDF_ERR_EMPTY = 9,
  CSDF_ERR_INTERNAL = 10
} csdf_status;

typedef enum csdf_branch {
  CSDF_BRANCH_FUSED = 0,
  CSDF_BRANCH_GENERALIZATION = 1,
  CSDF_BRANCH_OVERFITTING = 2
} csdf_branch;

typedef struct csdf_config csdf_config;
typedef struct csdf_mesh csdf_mesh;
typedef struct csdf_samples csdf_samples;
typedef struct csdf_model csdf_model;

CSDF_API const char* csdf_version(void);
CSDF_API const char* csdf_status_string(csdf_status status);
/* Message of the last failed call on this thread; "" if none. */
CSDF_API const char* csdf_last_error(void);

/* Non-fatal diagnostics (for example an empty fusion band). NULL restores
 * the default, which prints to stderr. */
typedef void (*csdf_warning_fn)(const char* message, void* user);
CSDF_API void csdf_set_warning_handler(csdf_warning_fn fn, void* user);

/* ---- configuration ---- */

CSDF_API csdf_status csdf_config_preset(const char* name, csdf_config** out);
/* Applies a `key = value` file with [section] headers on top of cfg. */
CSDF_API csdf_status csdf_config_load(csdf_config* cfg, const char* path);
CSDF_API csdf_status csdf_config_set(csdf_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncated to cap). *needed, if
 * non-NULL, receives the full length including the terminator. */
CSDF_API csdf_status csdf_config_get(const csdf_config* cfg, const char* key, char* buf, size_t cap,
                                     size_t* needed);
CSDF_API csdf_status csdf_config_to_text(const csdf_config* cfg, char* buf, size_t cap,
                                         size_t* needed);
CSDF_API csdf_status csdf_config_validate(const csdf_config* cfg);
CSDF_API csdf_status csdf_config_shape_count(const csdf_config* cfg, size_t* out);
CSDF_API csdf_status csdf_config_shape_path(const csdf_config* cfg, size_t index, char* buf,
                                            size_t cap, size_t* needed);
CSDF_API void csdf_config_free(csdf_config* cfg);

/* ---- meshes ---- */

enum {
  /* Center and scale into [-0.9, 0.9]^3. */
  CSDF_LOAD_NORMALIZE = 1,
  /* Skip the watertight and degeneracy checks (reconstructions). */
  CSDF_LOAD_UNCHECKED = 2
};

/* Loads OBJ or PLY, rejecting open or degenerate meshes unless
 * CSDF_LOAD_UNCHECKED is given. */
CSDF_API csdf_status csdf_mesh_load(const char* path, int flags, csdf_mesh** out);
/* Builds a mesh from raw arrays; no validation. */
CSDF_API csdf_status csdf_mesh_create(const double* xyz, size_t vertex_count, const uint32_t* tris,
                                      size_t triangle_count, csdf_mesh** out);
/* Vertex positions of an OBJ or PLY file. */
CSDF_API csdf_status csdf_points_load(const char* path, double** xyz, size_t* count);
CSDF_API void csdf_points_free(double* xyz);
/* Reconstructed meshes carry resolution/branch/layers comment lines; header
 * adds newline-separated lines after them and may be NULL. */
CSDF_API csdf_status csdf_mesh_save_obj(const csdf_mesh* mesh, const char* path, const char* header);
CSDF_API csdf_status csdf_mesh_counts(const csdf_mesh* mesh, size_t* vertices, size_t* triangles);
/* Signed distance to the mesh (negative inside); the mesh must be watertight. */
CSDF_API csdf_status csdf_mesh_signed_distance(csdf_mesh* mesh, const double* xyz, size_t count,
                                               double* out);
CSDF_API void csdf_mesh_free(csdf_mesh* mesh);

/* ---- training samples ---- */

typedef struct csdf_sample_stats {
  size_t coarse;
  size_t band_vertices;
  size_t overlap;
  size_t merged;
  size_t band_cells;
} csdf_sample_stats;

/* Coarse lattice plus the fine band around the surface of a normalized mesh,
 * using the sampling.* settings. stats may be NULL. */
CSDF_API csdf_status csdf_samples_generate(csdf_mesh* mesh, const csdf_config* cfg,
                                           uint32_t shape_id, csdf_samples** out,
                                           csdf_sample_stats* stats);
/* Observations for latent inference; distances may be NULL (zero level). */
CSDF_API csdf_status csdf_samples_from_points(const double* xyz, const double* distances,
                                              size_t count, uint32_t shape_id, csdf_samples** out);
CSDF_API csdf_status csdf_samples_read(const char* path, csdf_samples** out);
CSDF_API csdf_status csdf_samples_write(const csdf_samples* samples, const char* path);
CSDF_API csdf_status csdf_samples_info(const csdf_samples* samples, uint32_t* shape_id,
                                       size_t* count, size_t* in_band);
CSDF_API void csdf_samples_free(csdf_samples* samples);

/* ---- models ---- */

typedef struct csdf_model_info {
  uint32_t shape_count;
  uint32_t latent_dim;
  uint32_t feature_dim;
  uint32_t grid_resolution;
  uint32_t hidden_layers;
  uint32_t hidden_width;
  uint32_t epoch;
  uint64_t step;
} csdf_model_info;

typedef struct csdf_epoch_log {
  uint32_t epoch;
  double gen;
  double ovf;
  double latent;
  double grid;
  double total;
} csdf_epoch_log;

typedef void (*csdf_epoch_fn)(const csdf_epoch_log* log, void* user);
/* Called at checkpoint boundaries with the model mid-training. */
typedef void (*csdf_checkpoint_fn)(const csdf_model* model, void* user);

CSDF_API csdf_status csdf_model_create(const csdf_config* cfg, uint32_t shape_count,
                                       csdf_model** out);
CSDF_API csdf_status csdf_model_load(const char* path, csdf_model** out);
/* Atomic write. */
CSDF_API csdf_status csdf_model_save(const csdf_model* model, const char* path);
CSDF_API csdf_status csdf_model_get_info(const csdf_model* model, csdf_model_info* out);
CSDF_API void csdf_model_free(csdf_model* model);
/* Trains up to train.epochs total epochs with the train.* settings. On
 * divergence the model is rolled back to its last checkpoint boundary and
 * CSDF_ERR_DIVERGED is returned. */
CSDF_API csdf_status csdf_model_train(csdf_model* model, const csdf_samples* const* sets,
                                      size_t set_count, const csdf_config* cfg,
                                      csdf_epoch_fn on_epoch, csdf_checkpoint_fn on_checkpoint,
                                      void* user);
CSDF_API csdf_status csdf_model_get_latent(const csdf_model* model, uint32_t shape_id, float* out,
                                           size_t dim);
/* Optimizes a new latent against observations with the networks frozen,
 * using the infer.* settings. */
CSDF_API csdf_status csdf_model_infer_latent(const csdf_model* model, const csdf_samples* obs,
                                             const csdf_config* cfg, float* out, size_t dim);
/* Linear blend (1 - t) * a + t * b. */
CSDF_API csdf_status csdf_latent_lerp(const float* a, const float* b, size_t dim, double t,
                                      float* out);
/* Fused reconstruction uses `layers` band dilations; the single-branch modes
 * ignore it. */
CSDF_API csdf_status csdf_model_reconstruct(const csdf_model* model, const float* latent,
                                            size_t dim, int resolution, int layers,
                                            csdf_branch branch, csdf_mesh** out);

/* ---- metrics ---- */

typedef struct csdf_eval_report {
  uint32_t shape_id;
  double cd;
  double f_score;
  double precision;
  double recall;
  double tau;
  size_t n_points;
  uint64_t seed;
} csdf_eval_report;

CSDF_API csdf_status csdf_evaluate(const csdf_mesh* recon, const csdf_mesh* gt, size_t n_points,
                                   double tau, uint64_t seed, uint32_t shape_id,
                                   csdf_eval_report* out);

#ifdef __cplusplus
}
#endif

#endif
