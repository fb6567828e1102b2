#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "frontflow/cvfem.hpp"
#include "frontflow/eki.hpp"
#include "frontflow/fields.hpp"
#include "frontflow/mesh.hpp"
#include "frontflow/observe.hpp"

namespace frontflow {

enum class InversionMode : std::uint8_t { Full, Surrogate };
enum class TruthKind : std::uint8_t { Benchmark, SingleStrip };

/// Fully resolved run configuration (defaults < file < environment < flags).
struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 0;  // 0: available parallelism

  std::optional<std::filesystem::path> mesh_file;
  int mesh_nx = 41;
  int mesh_ny = 41;
  Vec2 domain{0.3, 0.3};

  PriorSpec prior;

  std::string layout = "m23";  // m23 | grid100 | path to a layout CSV
  ObservationConfig observation;

  int ensemble_size = 500;
  double rho = 0.65;
  int max_iterations = 100;
  DampingNorm damping_norm = DampingNorm::GammaHalf;
  InversionMode mode = InversionMode::Full;
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> stats;

  ForwardSettings forward;

  TruthKind truth = TruthKind::Benchmark;
  int truth_grid = 120;

  /// The resolved document as JSON text, for manifests.
  std::string resolved_json;

  int resolved_workers() const;
  Mesh build_mesh() const;
  EkiOptions eki_options() const;
  /// Seed of a named stage ("ensemble", "eki", "data", "sample-prior", "corpus").
  std::uint64_t stage_seed(const std::string& stage) const;
};

/// Looks up an environment variable; empty optional when unset.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_environment();

/// Dotted key ("eki.J") and raw value text.
using Override = std::pair<std::string, std::string>;

/// Parses and validates. Unknown keys, type mismatches and invalid values
/// raise ErrorCode::Config. Environment variables are FRONTFLOW_ followed by
/// the upper-cased dotted key with dots replaced by underscores
/// (FRONTFLOW_EKI_J, FRONTFLOW_SEED).
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<Override>& flags = {},
                          const EnvLookup& env = process_environment());
RunConfig parse_run_config(const std::string& json_text, const std::vector<Override>& flags = {},
                           const EnvLookup& env = {});

/// The default document, pretty-printed.
std::string default_config_json();

}  // namespace frontflow
