#include "frontflow/observe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>

#include "frontflow/error.hpp"
#include "frontflow/rng.hpp"
#include "io_util.hpp"

namespace frontflow {

namespace detail {
extern const char* const kSensorsM23Csv;
}

void ObservationConfig::validate(double horizon) const {
  require(!sensors.empty(), ErrorCode::Config, "observation config needs at least one sensor");
  require(sensor_ids.empty() || sensor_ids.size() == sensors.size(), ErrorCode::Config,
          "sensor ids must match the sensor list");
  require(!times.empty(), ErrorCode::Config, "observation config needs at least one time");
  for (std::size_t k = 0; k < times.size(); ++k) {
    require(times[k] >= 0.0 && times[k] <= horizon, ErrorCode::Config, "observation time outside [0, T]");
    if (k > 0) require(times[k] > times[k - 1], ErrorCode::Config, "observation times must be strictly increasing");
  }
  require(sigma0 > 0.0 && floor > 0.0, ErrorCode::Config, "sigma0 and floor must be positive");
}

std::vector<std::uint32_t> sensor_nodes(const ObservationConfig& config, const Mesh& mesh) {
  const Vec2 d = mesh.domain();
  std::vector<std::uint32_t> nodes;
  nodes.reserve(config.sensors.size());
  for (std::size_t s = 0; s < config.sensors.size(); ++s) {
    const Vec2 p = config.sensors[s];
    require(p.x >= 0.0 && p.x <= d.x && p.y >= 0.0 && p.y <= d.y, ErrorCode::InvalidArgument,
            "sensor " + std::to_string(s) + " lies outside the domain");
    nodes.push_back(mesh.nearest_node(p));
  }
  return nodes;
}

std::vector<double> observe_values(const SimulationRecord& record, std::span<const std::uint32_t> nodes,
                                   std::span<const double> times) {
  require(record.snapshots.size() == times.size(), ErrorCode::ShapeMismatch,
          "record has " + std::to_string(record.snapshots.size()) + " snapshots, expected " +
              std::to_string(times.size()));
  std::vector<double> out;
  out.reserve(nodes.size() * times.size());
  for (std::size_t n = 0; n < times.size(); ++n) {
    const auto& snap = record.snapshots[n];
    require(snap.time == times[n], ErrorCode::ShapeMismatch, "record snapshot times do not match the observation times");
    for (auto v : nodes) out.push_back(snap.pressure[v]);
  }
  return out;
}

std::vector<double> noise_covariance(std::span<const double> noise_free, double sigma0, double floor, FloorMode mode) {
  require(sigma0 > 0.0 && floor > 0.0, ErrorCode::InvalidArgument, "sigma0 and floor must be positive");
  std::vector<double> gamma(noise_free.size());
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    const double s = mode == FloorMode::Deviation ? std::max(sigma0 * noise_free[k], floor)
                                                  : sigma0 * std::max(noise_free[k], floor);
    gamma[k] = s * s;
  }
  return gamma;
}

MeasurementVector observe(const SimulationRecord& record, const ObservationConfig& config, const Mesh& mesh) {
  MeasurementVector m;
  m.values = observe_values(record, sensor_nodes(config, mesh), config.times);
  m.gamma_diag = noise_covariance(m.values, config.sigma0, config.floor, config.floor_mode);
  return m;
}

MeasurementVector synthesize_data(const SimulationRecord& truth, const ObservationConfig& config, const Mesh& mesh,
                                  std::uint64_t seed) {
  MeasurementVector m = observe(truth, config, mesh);
  auto stream = RandomStream::named(seed, "observation-noise");
  for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] += std::sqrt(m.gamma_diag[k]) * stream.normal();
  return m;
}

std::vector<Vec2> layout_grid100(Vec2 domain) {
  std::vector<Vec2> out;
  for (int j = 0; j < 10; ++j)
    for (int i = 0; i < 10; ++i) out.push_back({(i + 0.5) * domain.x / 10.0, (j + 0.5) * domain.y / 10.0});
  return out;
}

namespace {

SensorLayout parse_layout(std::string_view text, const std::string& source) {
  SensorLayout layout;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line_no == 1) {
      require(line == "sensor_id,x_m,y_m", ErrorCode::Parse, source + ": expected header sensor_id,x_m,y_m");
      continue;
    }
    if (line.empty()) continue;
    const auto cols = detail::split(line, ',');
    const std::string ctx = source + " line " + std::to_string(line_no);
    require(cols.size() == 3, ErrorCode::Parse, ctx + ": expected 3 columns");
    layout.ids.push_back(static_cast<int>(detail::parse_int(detail::trim(cols[0]), ctx)));
    layout.positions.push_back({detail::parse_double(detail::trim(cols[1]), ctx), detail::parse_double(detail::trim(cols[2]), ctx)});
  }
  require(!layout.ids.empty(), ErrorCode::Parse, source + ": no sensors");
  auto sorted = layout.ids;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::Parse, source + ": duplicate sensor id");
  return layout;
}

}  // namespace

std::vector<Vec2> layout_m23(Vec2 domain) {
  auto layout = parse_layout(detail::kSensorsM23Csv, "bundled 23-sensor layout");
  for (auto& p : layout.positions) p = {p.x * domain.x / 0.3, p.y * domain.y / 0.3};
  return layout.positions;
}

std::vector<double> uniform_times(int n, double horizon) {
  require(n >= 1 && horizon > 0.0, ErrorCode::InvalidArgument, "uniform times need n >= 1 and T > 0");
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) t[static_cast<std::size_t>(k)] = horizon * (k + 1) / n;
  return t;
}

SensorLayout read_layout_csv(const std::filesystem::path& path) {
  return parse_layout(detail::read_all_text(path), path.string());
}

void write_layout_csv(const std::filesystem::path& path, const SensorLayout& layout) {
  require(layout.ids.size() == layout.positions.size(), ErrorCode::InvalidArgument, "layout ids and positions differ in length");
  auto out = detail::open_out(path);
  out << "sensor_id,x_m,y_m\n";
  for (std::size_t s = 0; s < layout.ids.size(); ++s)
    out << layout.ids[s] << ',' << detail::format_double(layout.positions[s].x) << ','
        << detail::format_double(layout.positions[s].y) << '\n';
}

namespace {

int sensor_id(const ObservationConfig& config, std::size_t s) {
  return config.sensor_ids.empty() ? static_cast<int>(s) : config.sensor_ids[s];
}

}  // namespace

void write_measurements_csv(const std::filesystem::path& path, const ObservationConfig& config,
                            std::span<const double> values) {
  require(values.size() == config.size(), ErrorCode::ShapeMismatch, "measurement vector length must be M*N");
  auto out = detail::open_out(path);
  out << "time_s,sensor_id,pressure_Pa\n";
  const std::size_t m = config.sensors.size();
  for (std::size_t n = 0; n < config.times.size(); ++n)
    for (std::size_t s = 0; s < m; ++s)
      out << detail::format_double(config.times[n]) << ',' << sensor_id(config, s) << ','
          << detail::format_double(values[n * m + s]) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

MeasurementVector read_measurements_csv(const std::filesystem::path& path, const ObservationConfig& config) {
  const std::string text = detail::read_all_text(path);
  std::map<int, std::vector<std::pair<double, double>>> series;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = detail::trim(std::string_view(text).substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line_no == 1) {
      require(line == "time_s,sensor_id,pressure_Pa", ErrorCode::Parse,
              path.string() + ": expected header time_s,sensor_id,pressure_Pa");
      continue;
    }
    if (line.empty()) continue;
    const auto cols = detail::split(line, ',');
    const std::string ctx = path.string() + " line " + std::to_string(line_no);
    require(cols.size() == 3, ErrorCode::Parse, ctx + ": expected 3 columns");
    const double t = detail::parse_double(detail::trim(cols[0]), ctx);
    const int id = static_cast<int>(detail::parse_int(detail::trim(cols[1]), ctx));
    series[id].emplace_back(t, detail::parse_double(detail::trim(cols[2]), ctx));
  }

  const std::size_t m = config.sensors.size();
  MeasurementVector out;
  out.values.resize(config.size());
  for (std::size_t s = 0; s < m; ++s) {
    const int id = sensor_id(config, s);
    const auto it = series.find(id);
    require(it != series.end(), ErrorCode::Parse, path.string() + ": no rows for sensor " + std::to_string(id));
    const auto& rows = it->second;
    for (std::size_t n = 0; n < config.times.size(); ++n) {
      // Nearest timestamp; the earlier row wins a tie.
      std::size_t best = 0;
      double best_gap = std::abs(rows[0].first - config.times[n]);
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const double gap = std::abs(rows[r].first - config.times[n]);
        if (gap < best_gap || (gap == best_gap && rows[r].first < rows[best].first)) {
          best = r;
          best_gap = gap;
        }
      }
      out.values[n * m + s] = rows[best].second;
    }
  }
  out.gamma_diag = noise_covariance(out.values, config.sigma0, config.floor, config.floor_mode);
  return out;
}

}  // namespace frontflow
