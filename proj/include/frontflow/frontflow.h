#ifndef FRONTFLOW_FRONTFLOW_H
#define FRONTFLOW_FRONTFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(FRONTFLOW_BUILDING)
#    define FF_API __declspec(dllexport)
#  else
#    define FF_API __declspec(dllimport)
#  endif
#else
#  define FF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ff_status {
  FF_OK = 0,
  FF_ERR_GENERIC = 1,
  FF_ERR_CONFIG = 2,
  FF_ERR_NUMERICAL = 3,
  FF_ERR_NONCONVERGENCE = 4,
  FF_ERR_IO = 5,
  FF_ERR_PARSE = 6,
  FF_ERR_VALIDATION = 7,
  FF_ERR_INVALID_ARGUMENT = 8,
  FF_ERR_FORMAT = 9,
  FF_ERR_CHECKSUM = 10,
  FF_ERR_SHAPE_MISMATCH = 11
} ff_status;

typedef struct ff_config ff_config;
typedef struct ff_mesh ff_mesh;
typedef struct ff_params ff_params;
typedef struct ff_record ff_record;
typedef struct ff_surrogate ff_surrogate;

typedef void (*ff_progress_fn)(const char* message, void* user);

FF_API const char* ff_version(void);

/* Message of the last failed call on this thread ("" if none). */
FF_API const char* ff_last_error(void);

/* Process exit code for a status: 0 ok, 2 config, 3 numerical, 4 nonconvergence, 1 otherwise. */
FF_API int ff_exit_code(ff_status status);

/* Run configuration. `overrides` alternates dotted keys and values and ends
   with NULL, e.g. {"seed", "7", "eki.J", "200", NULL}; it may be NULL.
   Precedence: overrides > FRONTFLOW_* environment (when use_env) > file > defaults. */
FF_API ff_status ff_config_load(const char* path, const char* const* overrides, int use_env, ff_config** out);
FF_API ff_status ff_config_parse(const char* json_text, const char* const* overrides, ff_config** out);
/* Resolved document; owned by the handle. */
FF_API const char* ff_config_json(const ff_config* config);
FF_API const char* ff_config_default_json(void);
FF_API void ff_config_free(ff_config* config);

/* Pipeline commands. */
FF_API ff_status ff_cmd_sample_prior(const ff_config* config, int n, const char* out_dir);
FF_API ff_status ff_cmd_simulate(const ff_config* config, const char* params_file, const char* out_dir);
FF_API ff_status ff_cmd_make_data(const ff_config* config, const char* truth_file, const char* out_csv);
FF_API ff_status ff_cmd_make_corpus(const ff_config* config, int n, const char* out_dir, ff_progress_fn progress,
                                    void* user);

typedef struct ff_inversion_report {
  int iterations;
  int converged;
  double wall_seconds;
  double final_misfit;
  uint64_t failures;
} ff_inversion_report;

/* `report` may be NULL. */
FF_API ff_status ff_cmd_invert(const ff_config* config, const char* data_csv, const char* out_dir,
                               ff_progress_fn progress, void* user, ff_inversion_report* report);
FF_API ff_status ff_cmd_summarize(const ff_config* config, const char* ensemble_file, const char* out_dir);

/* Meshes. */
FF_API ff_status ff_mesh_generate(int nx, int ny, double dx, double dy, ff_mesh** out);
FF_API ff_status ff_mesh_load(const char* path, ff_mesh** out);
FF_API ff_status ff_mesh_from_config(const ff_config* config, ff_mesh** out);
FF_API size_t ff_mesh_node_count(const ff_mesh* mesh);
FF_API size_t ff_mesh_element_count(const ff_mesh* mesh);
/* xy holds 2 * node_count doubles. */
FF_API ff_status ff_mesh_nodes(const ff_mesh* mesh, double* xy);
FF_API void ff_mesh_free(ff_mesh* mesh);

/* Parameter vectors (PRM1). */
FF_API ff_status ff_params_sample(const ff_config* config, uint64_t seed, ff_params** out);
FF_API ff_status ff_params_load(const char* path, ff_params** out);
FF_API ff_status ff_params_save(const ff_params* params, const char* path);
/* Scalars in order K_nom, phi_T, phi_B, phi_nom, phi_def, mu, P_I, lambda, beta, chi. */
FF_API ff_status ff_params_scalars(const ff_params* params, double out[10]);
FF_API void ff_params_free(ff_params* params);

/* Forward simulation on the configured mesh and observation times. */
FF_API ff_status ff_simulate_params(const ff_config* config, const ff_params* params, ff_record** out);
FF_API ff_status ff_simulate_file(const ff_config* config, const char* params_file, ff_record** out);
FF_API size_t ff_record_snapshot_count(const ff_record* record);
FF_API double ff_record_snapshot_time(const ff_record* record, size_t k);
/* pressure and fill hold node_count doubles each; either may be NULL. */
FF_API ff_status ff_record_snapshot(const ff_record* record, size_t k, double* pressure, double* fill, size_t node_count);
/* Returns 0 when the mould did not fill before the horizon. */
FF_API int ff_record_fill_time(const ff_record* record, double* time);
/* Noise-free sensor pressures, time-major; values holds M * N doubles. */
FF_API ff_status ff_record_observe(const ff_config* config, const ff_record* record, double* values, size_t count);
FF_API void ff_record_free(ff_record* record);

/* Surrogate (DONW1 weights). */
FF_API ff_status ff_surrogate_load(const char* path, ff_surrogate** out);
FF_API ff_status ff_surrogate_grid(const ff_surrogate* model, int* height, int* width);
/* log_k and phi are H x W row-major; scalars are mu, P_I, lambda, beta, chi;
   queries holds (x, y, t) triples. p and f receive n_queries values each. */
FF_API ff_status ff_surrogate_predict(const ff_surrogate* model, const double* log_k, const double* phi,
                                      const double scalars[5], const double* queries, size_t n_queries, double* p,
                                      double* f);
FF_API void ff_surrogate_free(ff_surrogate* model);

#ifdef __cplusplus
}
#endif

#endif
