#include "frontflow/frontflow.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "frontflow/onet.hpp"
#include "frontflow/pipeline.hpp"

using namespace frontflow;

struct ff_config {
  RunConfig cfg;
};
struct ff_mesh {
  Mesh mesh;
};
struct ff_params {
  ParameterVector u;
};
struct ff_record {
  Mesh mesh;
  SimulationRecord rec;
};
struct ff_surrogate {
  Surrogate model;
};

namespace {

thread_local std::string last_error;

template <class F>
ff_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return FF_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return static_cast<ff_status>(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return FF_ERR_GENERIC;
  } catch (const std::exception& e) {
    last_error = e.what();
    return FF_ERR_GENERIC;
  } catch (...) {
    last_error = "unknown error";
    return FF_ERR_GENERIC;
  }
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

std::vector<Override> overrides_of(const char* const* kv) {
  std::vector<Override> out;
  if (!kv) return out;
  for (; kv[0]; kv += 2) {
    if (!kv[1]) fail(ErrorCode::InvalidArgument, std::string("override '") + kv[0] + "' has no value");
    out.emplace_back(kv[0], kv[1]);
  }
  return out;
}

ProgressSink sink(ff_progress_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& msg) { fn(msg.c_str(), user); };
}

ff_record* simulate_into(const RunConfig& cfg, const MaterialInputs* material, const ParameterVector* u) {
  auto r = new ff_record{cfg.build_mesh(), {}};
  try {
    const auto volumes = build_control_volumes(r->mesh);
    r->rec = material ? simulate_material(*material, r->mesh, volumes, cfg.forward)
                      : forward_operator(*u, cfg.prior, r->mesh, volumes, cfg.forward);
  } catch (...) {
    delete r;
    throw;
  }
  return r;
}

}  // namespace

extern "C" {

const char* ff_version(void) { return FRONTFLOW_VERSION_STRING; }

const char* ff_last_error(void) { return last_error.c_str(); }

int ff_exit_code(ff_status status) { return status == FF_OK ? 0 : exit_code_for(static_cast<ErrorCode>(status)); }

ff_status ff_config_load(const char* path, const char* const* overrides, int use_env, ff_config** out) {
  return guarded([&] {
    need(out, "out");
    std::optional<std::filesystem::path> file;
    if (path) file = path;
    *out = new ff_config{load_run_config(file, overrides_of(overrides), use_env ? process_environment() : EnvLookup{})};
  });
}

ff_status ff_config_parse(const char* json_text, const char* const* overrides, ff_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    *out = new ff_config{parse_run_config(json_text, overrides_of(overrides))};
  });
}

const char* ff_config_json(const ff_config* config) { return config ? config->cfg.resolved_json.c_str() : ""; }

const char* ff_config_default_json(void) {
  static const std::string text = default_config_json();
  return text.c_str();
}

void ff_config_free(ff_config* config) { delete config; }

ff_status ff_cmd_sample_prior(const ff_config* config, int n, const char* out_dir) {
  return guarded([&] {
    need(config, "config");
    need(out_dir, "out_dir");
    cmd_sample_prior(config->cfg, n, out_dir);
  });
}

ff_status ff_cmd_simulate(const ff_config* config, const char* params_file, const char* out_dir) {
  return guarded([&] {
    need(config, "config");
    need(params_file, "params_file");
    need(out_dir, "out_dir");
    cmd_simulate(config->cfg, params_file, out_dir);
  });
}

ff_status ff_cmd_make_data(const ff_config* config, const char* truth_file, const char* out_csv) {
  return guarded([&] {
    need(config, "config");
    need(truth_file, "truth_file");
    need(out_csv, "out_csv");
    cmd_make_data(config->cfg, truth_file, out_csv);
  });
}

ff_status ff_cmd_make_corpus(const ff_config* config, int n, const char* out_dir, ff_progress_fn progress, void* user) {
  return guarded([&] {
    need(config, "config");
    need(out_dir, "out_dir");
    cmd_make_corpus(config->cfg, n, out_dir, sink(progress, user));
  });
}

ff_status ff_cmd_invert(const ff_config* config, const char* data_csv, const char* out_dir, ff_progress_fn progress,
                        void* user, ff_inversion_report* report) {
  return guarded([&] {
    need(config, "config");
    need(data_csv, "data_csv");
    need(out_dir, "out_dir");
    const auto r = cmd_invert(config->cfg, data_csv, out_dir, sink(progress, user));
    if (report) {
      report->iterations = r.iterations;
      report->converged = r.converged ? 1 : 0;
      report->wall_seconds = r.wall_seconds;
      report->final_misfit = r.final_misfit;
      report->failures = r.failures;
    }
  });
}

ff_status ff_cmd_summarize(const ff_config* config, const char* ensemble_file, const char* out_dir) {
  return guarded([&] {
    need(config, "config");
    need(ensemble_file, "ensemble_file");
    need(out_dir, "out_dir");
    cmd_summarize(config->cfg, ensemble_file, out_dir);
  });
}

ff_status ff_mesh_generate(int nx, int ny, double dx, double dy, ff_mesh** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ff_mesh{generate_structured_mesh(nx, ny, {dx, dy})};
  });
}

ff_status ff_mesh_load(const char* path, ff_mesh** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ff_mesh{load_mesh(path)};
  });
}

ff_status ff_mesh_from_config(const ff_config* config, ff_mesh** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = new ff_mesh{config->cfg.build_mesh()};
  });
}

size_t ff_mesh_node_count(const ff_mesh* mesh) { return mesh ? mesh->mesh.node_count() : 0; }

size_t ff_mesh_element_count(const ff_mesh* mesh) { return mesh ? mesh->mesh.triangle_count() : 0; }

ff_status ff_mesh_nodes(const ff_mesh* mesh, double* xy) {
  return guarded([&] {
    need(mesh, "mesh");
    need(xy, "xy");
    for (const auto& p : mesh->mesh.nodes()) {
      *xy++ = p.x;
      *xy++ = p.y;
    }
  });
}

void ff_mesh_free(ff_mesh* mesh) { delete mesh; }

ff_status ff_params_sample(const ff_config* config, uint64_t seed, ff_params** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = new ff_params{sample_prior(config->cfg.prior, seed)};
  });
}

ff_status ff_params_load(const char* path, ff_params** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ff_params{load_parameter_vector(path)};
  });
}

ff_status ff_params_save(const ff_params* params, const char* path) {
  return guarded([&] {
    need(params, "params");
    need(path, "path");
    save_parameter_vector(path, params->u);
  });
}

ff_status ff_params_scalars(const ff_params* params, double out[10]) {
  return guarded([&] {
    need(params, "params");
    need(out, "out");
    std::memcpy(out, params->u.scalars.data(), sizeof(double) * kScalarCount);
  });
}

void ff_params_free(ff_params* params) { delete params; }

ff_status ff_simulate_params(const ff_config* config, const ff_params* params, ff_record** out) {
  return guarded([&] {
    need(config, "config");
    need(params, "params");
    need(out, "out");
    *out = simulate_into(config->cfg, nullptr, &params->u);
  });
}

ff_status ff_simulate_file(const ff_config* config, const char* params_file, ff_record** out) {
  return guarded([&] {
    need(config, "config");
    need(params_file, "params_file");
    need(out, "out");
    const auto material = load_simulation_input(config->cfg, params_file);
    *out = simulate_into(config->cfg, &material, nullptr);
  });
}

size_t ff_record_snapshot_count(const ff_record* record) { return record ? record->rec.snapshots.size() : 0; }

double ff_record_snapshot_time(const ff_record* record, size_t k) {
  if (!record || k >= record->rec.snapshots.size()) return 0.0;
  return record->rec.snapshots[k].time;
}

ff_status ff_record_snapshot(const ff_record* record, size_t k, double* pressure, double* fill, size_t node_count) {
  return guarded([&] {
    need(record, "record");
    require(k < record->rec.snapshots.size(), ErrorCode::InvalidArgument, "snapshot index out of range");
    const auto& s = record->rec.snapshots[k];
    require(node_count == s.pressure.size(), ErrorCode::ShapeMismatch, "node_count does not match the record");
    if (pressure) std::copy(s.pressure.begin(), s.pressure.end(), pressure);
    if (fill) std::copy(s.fill.begin(), s.fill.end(), fill);
  });
}

int ff_record_fill_time(const ff_record* record, double* time) {
  if (!record || !record->rec.fill_complete_time) return 0;
  if (time) *time = *record->rec.fill_complete_time;
  return 1;
}

ff_status ff_record_observe(const ff_config* config, const ff_record* record, double* values, size_t count) {
  return guarded([&] {
    need(config, "config");
    need(record, "record");
    need(values, "values");
    const auto m = observe(record->rec, config->cfg.observation, record->mesh);
    require(count == m.values.size(), ErrorCode::ShapeMismatch,
            "count must be " + std::to_string(m.values.size()) + " (sensors x times)");
    std::copy(m.values.begin(), m.values.end(), values);
  });
}

void ff_record_free(ff_record* record) { delete record; }

ff_status ff_surrogate_load(const char* path, ff_surrogate** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ff_surrogate{load_surrogate(path)};
  });
}

ff_status ff_surrogate_grid(const ff_surrogate* model, int* height, int* width) {
  return guarded([&] {
    need(model, "model");
    if (height) *height = model->model.config().grid_h;
    if (width) *width = model->model.config().grid_w;
  });
}

ff_status ff_surrogate_predict(const ff_surrogate* model, const double* log_k, const double* phi,
                               const double scalars[5], const double* queries, size_t n_queries, double* p, double* f) {
  return guarded([&] {
    need(model, "model");
    need(log_k, "log_k");
    need(phi, "phi");
    need(scalars, "scalars");
    need(queries, "queries");
    need(p, "p");
    need(f, "f");
    const auto& c = model->model.config();
    const auto cells = static_cast<std::size_t>(c.grid_h) * static_cast<std::size_t>(c.grid_w);
    std::vector<std::array<double, 3>> q(n_queries);
    for (std::size_t i = 0; i < n_queries; ++i) q[i] = {queries[3 * i], queries[3 * i + 1], queries[3 * i + 2]};
    const auto out = model->model.predict({log_k, cells}, {phi, cells}, std::span<const double, 5>(scalars, 5), q);
    for (std::size_t i = 0; i < n_queries; ++i) {
      p[i] = out[i].p;
      f[i] = out[i].f;
    }
  });
}

void ff_surrogate_free(ff_surrogate* model) { delete model; }

}  // extern "C"
