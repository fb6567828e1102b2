#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "frontflow/config.hpp"
#include "frontflow/error.hpp"

namespace frontflow {

using ProgressSink = std::function<void(const std::string&)>;

/// A simulation input read from a params file. Accepted forms:
///  - PRM1 parameter vector (binary);
///  - JSON {"truth": "benchmark" | "single_strip", "grid": n, "process": {...}};
///  - JSON {"truth": "homogeneous", "k": K, "phi": phi, "grid": n, "process": {...}};
///  - JSON {"fields": "file.fld", "process": {...}}.
/// "process" keys: mu, P_I, lambda, beta, chi (all optional).
MaterialInputs load_simulation_input(const RunConfig& config, const std::filesystem::path& params);

/// n prior draws: sample_NNN.fld (fields on the prior grid), sample_NNN.prm, manifest.json.
void cmd_sample_prior(const RunConfig& config, int n, const std::filesystem::path& out_dir);

/// record.csv, fill_events.csv, manifest.json.
void cmd_simulate(const RunConfig& config, const std::filesystem::path& params, const std::filesystem::path& out_dir);

/// Noisy sensor data as time_s,sensor_id,pressure_Pa plus <out>.manifest.json.
void cmd_make_data(const RunConfig& config, const std::filesystem::path& truth, const std::filesystem::path& out_csv);

/// Training corpus for the surrogate trainer: mesh.txt, quadrature.csv and one
/// directory per successful draw (fields.fld, params.prm, record.csv).
void cmd_make_corpus(const RunConfig& config, int n, const std::filesystem::path& out_dir,
                     const ProgressSink& progress = {});

struct InversionReport {
  int iterations = 0;
  double wall_seconds = 0.0;
  double final_misfit = 0.0;  // (1/J) sum ||Gamma^{-1/2}(d - G_j)||^2 / MN
  std::size_t failures = 0;
  bool converged = false;
};

/// EKI on a measurement CSV. Writes the posterior summary, ensemble.ens,
/// alpha_history.csv, predictive.csv and manifest.json. On non-convergence the
/// last ensemble is written, the manifest is flagged and the error rethrown.
InversionReport cmd_invert(const RunConfig& config, const std::filesystem::path& data_csv,
                           const std::filesystem::path& out_dir, const ProgressSink& progress = {});

/// Posterior summary of a saved ensemble.
void cmd_summarize(const RunConfig& config, const std::filesystem::path& ensemble, const std::filesystem::path& out_dir);

/// Process exit code for an error code: 2 config, 3 numerical, 4 non-convergence, 1 otherwise.
int exit_code_for(ErrorCode code);

}  // namespace frontflow
