#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "frontflow/fields.hpp"
#include "frontflow/mesh.hpp"

namespace frontflow {

enum class ConductivityAverage : std::uint8_t { Arithmetic, Harmonic };

/// P1 Galerkin matrix of -div((K/mu) grad p). Symmetric, constants in the null space.
Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, std::span<const double> log_k, double mu,
                                               ConductivityAverage average = ConductivityAverage::Arithmetic);

/// Pressure on the saturated set: p_I on inlet nodes, p_0 on saturated outlet
/// nodes and on every unsaturated node, discrete Laplace elsewhere.
std::vector<double> solve_pressure(const Mesh& mesh, const Eigen::SparseMatrix<double>& stiffness,
                                   std::span<const std::uint8_t> saturated, double inlet_value, double p0);

struct SimulationInputs {
  const Mesh* mesh = nullptr;
  const ControlVolumes* volumes = nullptr;
  std::vector<double> log_k;  // per node
  std::vector<double> phi;    // per node
  ProcessScalars process;
  double p0 = 0.0;
  double horizon = 110.0;
  std::vector<double> times;  // observation instants, sorted, within [0, horizon]
  ConductivityAverage average = ConductivityAverage::Arithmetic;
  bool keep_trace = false;
};

struct Snapshot {
  double time = 0.0;
  std::vector<double> pressure;
  std::vector<double> fill;
};

struct FillEvent {
  double time = 0.0;
  std::uint32_t node = 0;
};

/// One time step: inflow through the inlet, outflow through saturated vents,
/// resin volume stored in partially filled control volumes.
struct StepTrace {
  double time = 0.0;
  double dt = 0.0;
  double inlet_flux = 0.0;
  double vent_flux = 0.0;
  double volume_added = 0.0;
};

struct SimulationRecord {
  std::vector<Snapshot> snapshots;  // one per observation time
  std::vector<FillEvent> fill_events;
  std::optional<double> fill_complete_time;
  std::vector<StepTrace> trace;
  double initial_volume = 0.0;  // resin in the inlet control volumes at t = 0
  std::size_t steps = 0;
};

SimulationRecord simulate(const SimulationInputs& inputs);

struct ForwardSettings {
  double p0 = 0.0;
  double horizon = 110.0;
  std::vector<double> times;
  ConductivityAverage average = ConductivityAverage::Arithmetic;
};

/// realise_fields, nearest-neighbour transfer to the mesh, simulate.
SimulationRecord forward_operator(const ParameterVector& u, const PriorSpec& prior, const Mesh& mesh,
                                  const ControlVolumes& volumes, const ForwardSettings& settings);

/// Simulate from grid-defined material inputs (e.g. a synthetic truth).
SimulationRecord simulate_material(const MaterialInputs& material, const Mesh& mesh, const ControlVolumes& volumes,
                                   const ForwardSettings& settings);

/// Front position of a left-to-right fill: stored resin volume / (phi D_y),
/// interpolated linearly inside the step containing t.
double front_position_1d(const SimulationRecord& record, double t, double phi, double domain_y);

/// record.csv: time_s,node_id,pressure_Pa,fill_factor.
void write_record_csv(const std::filesystem::path& path, const SimulationRecord& record);
/// fill_events.csv: time_s,node_id.
void write_fill_events_csv(const std::filesystem::path& path, const SimulationRecord& record);
SimulationRecord read_record_csv(const std::filesystem::path& path);

}  // namespace frontflow
