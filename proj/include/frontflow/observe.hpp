#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "frontflow/cvfem.hpp"
#include "frontflow/mesh.hpp"

namespace frontflow {

/// How the noise floor enters Gamma.
/// Deviation: sd_k = max(sigma0 * v_k, floor), i.e. sensor precision `floor` Pa.
/// Value:     sd_k = sigma0 * max(v_k, floor).
enum class FloorMode : std::uint8_t { Deviation, Value };

struct ObservationConfig {
  std::vector<Vec2> sensors;
  std::vector<int> sensor_ids;  // parallel to sensors; defaults to 0..M-1
  std::vector<double> times;
  double sigma0 = 0.025;
  double floor = 100.0;  // Pa
  FloorMode floor_mode = FloorMode::Deviation;

  std::size_t size() const { return sensors.size() * times.size(); }
  void validate(double horizon) const;
};

/// Pressures ordered time-major: all sensors at t_1, then t_2, ...
struct MeasurementVector {
  std::vector<double> values;
  std::vector<double> gamma_diag;  // Pa^2
};

/// Nearest mesh node per sensor; rejects sensors outside the domain.
std::vector<std::uint32_t> sensor_nodes(const ObservationConfig& config, const Mesh& mesh);

/// Noise-free sensor pressures; gamma_diag from noise_covariance.
MeasurementVector observe(const SimulationRecord& record, const ObservationConfig& config, const Mesh& mesh);
std::vector<double> observe_values(const SimulationRecord& record, std::span<const std::uint32_t> nodes,
                                   std::span<const double> times);

std::vector<double> noise_covariance(std::span<const double> noise_free, double sigma0, double floor,
                                     FloorMode mode = FloorMode::Deviation);

MeasurementVector synthesize_data(const SimulationRecord& truth, const ObservationConfig& config, const Mesh& mesh,
                                  std::uint64_t seed);

/// 10x10 cell-centred interior grid.
std::vector<Vec2> layout_grid100(Vec2 domain);
/// Bundled 23-sensor layout, scaled from its 0.3 m reference square to `domain`.
std::vector<Vec2> layout_m23(Vec2 domain);
/// n instants uniformly spaced over (0, horizon].
std::vector<double> uniform_times(int n, double horizon);

struct SensorLayout {
  std::vector<int> ids;
  std::vector<Vec2> positions;
};
SensorLayout read_layout_csv(const std::filesystem::path& path);
void write_layout_csv(const std::filesystem::path& path, const SensorLayout& layout);

void write_measurements_csv(const std::filesystem::path& path, const ObservationConfig& config,
                            std::span<const double> values);
/// For each configured time and sensor, the row with the nearest timestamp.
/// gamma_diag is computed from the ingested values.
MeasurementVector read_measurements_csv(const std::filesystem::path& path, const ObservationConfig& config);

}  // namespace frontflow
