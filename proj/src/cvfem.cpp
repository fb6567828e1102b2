#include "frontflow/cvfem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include <Eigen/SparseCholesky>

#include "frontflow/error.hpp"
#include "io_util.hpp"

namespace frontflow {

Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, std::span<const double> log_k, double mu,
                                               ConductivityAverage average) {
  require(log_k.size() == mesh.node_count(), ErrorCode::ShapeMismatch, "log_K must have one value per node");
  require(mu > 0.0 && std::isfinite(mu), ErrorCode::InvalidArgument, "viscosity must be positive");
  const auto nodes = mesh.nodes();
  const auto tris = mesh.triangles();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(tris.size() * 9);
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const auto& tri = tris[t];
    const double area = mesh.triangle_area(t);
    require(area > 0.0, ErrorCode::Numerical, "degenerate triangle " + std::to_string(t));
    double k_e;
    if (average == ConductivityAverage::Arithmetic) {
      k_e = (std::exp(log_k[tri[0]]) + std::exp(log_k[tri[1]]) + std::exp(log_k[tri[2]])) / 3.0;
    } else {
      k_e = 3.0 / (std::exp(-log_k[tri[0]]) + std::exp(-log_k[tri[1]]) + std::exp(-log_k[tri[2]]));
    }
    require(k_e > 0.0 && std::isfinite(k_e), ErrorCode::Numerical, "non-positive permeability in triangle " + std::to_string(t));
    double gx[3], gy[3];
    for (int k = 0; k < 3; ++k) {
      const Vec2 p1 = nodes[tri[(k + 1) % 3]], p2 = nodes[tri[(k + 2) % 3]];
      gx[k] = p1.y - p2.y;
      gy[k] = p2.x - p1.x;
    }
    const double scale = k_e / mu / (4.0 * area);
    for (int k = 0; k < 3; ++k)
      for (int l = 0; l < 3; ++l)
        entries.emplace_back(tri[k], tri[l], scale * (gx[k] * gx[l] + gy[k] * gy[l]));
  }
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  a.makeCompressed();
  return a;
}

std::vector<double> solve_pressure(const Mesh& mesh, const Eigen::SparseMatrix<double>& stiffness,
                                   std::span<const std::uint8_t> saturated, double inlet_value, double p0) {
  const std::size_t n = mesh.node_count();
  require(saturated.size() == n, ErrorCode::ShapeMismatch, "saturated mask must have one entry per node");
  for (auto v : mesh.inlet_nodes())
    require(saturated[v] != 0, ErrorCode::InvalidArgument, "saturated set must contain every inlet node");

  std::vector<double> p(n, p0);
  std::vector<int> index(n, -1);
  std::vector<std::uint32_t> unknowns;
  for (std::uint32_t v = 0; v < n; ++v) {
    if (mesh.is_inlet(v)) p[v] = inlet_value;
    else if (saturated[v] && !mesh.is_outlet(v)) {
      index[v] = static_cast<int>(unknowns.size());
      unknowns.push_back(v);
    }
  }
  if (unknowns.empty()) return p;

  const auto m = static_cast<Eigen::Index>(unknowns.size());
  std::vector<Eigen::Triplet<double>> entries;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(stiffness, unknowns[r]); it; ++it) {
      const auto j = static_cast<std::size_t>(it.row());
      if (index[j] >= 0) entries.emplace_back(r, index[j], it.value());
      else rhs[r] -= it.value() * p[j];
    }
  }
  Eigen::SparseMatrix<double> a(m, m);
  a.setFromTriplets(entries.begin(), entries.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  require(ldlt.info() == Eigen::Success, ErrorCode::Numerical, "singular restricted pressure system");
  const Eigen::VectorXd x = ldlt.solve(rhs);
  for (Eigen::Index r = 0; r < m; ++r) {
    require(std::isfinite(x[r]), ErrorCode::Numerical, "non-finite pressure");
    p[unknowns[r]] = x[r];
  }
  return p;
}

namespace {

/// Cholesky factor grown one row at a time as nodes join the unknown set.
/// Rows are stored sparsely; with unknowns numbered in fill order the factor
/// keeps a profile about one front wide.
class GrowingCholesky {
 public:
  std::size_t size() const { return diag_.size(); }

  void append(std::span<const std::pair<std::uint32_t, double>> couplings, double diagonal) {
    const std::size_t n = size();
    work_.resize(n + 1, 0.0);
    std::size_t first = n;
    for (const auto& [c, v] : couplings) {
      work_[c] += v;
      first = std::min<std::size_t>(first, c);
    }
    double sum_sq = 0.0;
    for (std::size_t k = first; k < n; ++k) {
      double s = work_[k];
      const auto begin = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[k]);
      const auto end = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[k + 1]);
      for (auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(first)); it != end; ++it)
        s -= vals_[static_cast<std::size_t>(it - cols_.begin())] * work_[*it];
      work_[k] = s / diag_[k];
      sum_sq += work_[k] * work_[k];
    }
    const double d2 = diagonal - sum_sq;
    require(d2 > 1e-13 * diagonal, ErrorCode::Numerical, "singular restricted pressure system");
    for (std::size_t k = first; k < n; ++k) {
      if (work_[k] != 0.0) {
        cols_.push_back(static_cast<std::uint32_t>(k));
        vals_.push_back(work_[k]);
      }
      work_[k] = 0.0;
    }
    row_ptr_.push_back(cols_.size());
    diag_.push_back(std::sqrt(d2));
  }

  /// In-place solve of L L^T x = b.
  void solve(std::vector<double>& b) const {
    const std::size_t n = size();
    for (std::size_t k = 0; k < n; ++k) {
      double s = b[k];
      for (std::size_t e = row_ptr_[k]; e < row_ptr_[k + 1]; ++e) s -= vals_[e] * b[cols_[e]];
      b[k] = s / diag_[k];
    }
    for (std::size_t k = n; k-- > 0;) {
      const double x = b[k] / diag_[k];
      b[k] = x;
      for (std::size_t e = row_ptr_[k]; e < row_ptr_[k + 1]; ++e) b[cols_[e]] -= vals_[e] * x;
    }
  }

 private:
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> cols_;
  std::vector<double> vals_;
  std::vector<double> diag_;
  std::vector<double> work_;
};

void check_inputs(const SimulationInputs& in) {
  require(in.mesh != nullptr && in.volumes != nullptr, ErrorCode::InvalidArgument, "simulation needs a mesh and control volumes");
  const std::size_t n = in.mesh->node_count();
  require(in.log_k.size() == n && in.phi.size() == n, ErrorCode::ShapeMismatch, "material fields must have one value per node");
  require(in.volumes->cv_area.size() == n, ErrorCode::ShapeMismatch, "control volumes do not match the mesh");
  for (std::size_t i = 0; i < n; ++i) {
    require(in.phi[i] > 0.0 && in.phi[i] < 1.0, ErrorCode::InvalidArgument, "porosity must lie in (0,1)");
    require(std::isfinite(in.log_k[i]), ErrorCode::InvalidArgument, "log permeability must be finite");
  }
  require(in.horizon > 0.0, ErrorCode::InvalidArgument, "horizon must be positive");
  for (std::size_t k = 0; k < in.times.size(); ++k) {
    require(in.times[k] >= 0.0 && in.times[k] <= in.horizon, ErrorCode::InvalidArgument, "observation time outside [0, T]");
    if (k > 0) require(in.times[k] > in.times[k - 1], ErrorCode::InvalidArgument, "observation times must increase");
  }
  const auto& s = in.process;
  require(s.mu > 0.0 && s.inlet.lambda > 0.0 && s.inlet.beta > 0.0 && s.inlet.chi >= 0.0 && s.inlet.chi <= 1.0,
          ErrorCode::InvalidArgument, "invalid process scalars");
}

}  // namespace

SimulationRecord simulate(const SimulationInputs& in) {
  check_inputs(in);
  const Mesh& mesh = *in.mesh;
  const std::size_t n = mesh.node_count();
  const auto a = assemble_stiffness(mesh, in.log_k, in.process.mu, in.average);
  const auto& vol = in.volumes->cv_area;

  SimulationRecord rec;
  std::vector<double> f(n, 0.0), p(n, in.p0);
  std::vector<std::uint8_t> saturated(n, 0), active(n, 0);
  std::vector<int> index(n, -1);
  std::vector<std::uint32_t> unknowns, front;
  std::size_t saturated_count = 0;
  GrowingCholesky chol;
  std::vector<double> x;
  std::vector<std::pair<std::uint32_t, double>> couplings;

  auto activate_neighbours = [&](std::uint32_t v) {
    for (auto w : mesh.neighbours(v))
      if (!saturated[w] && !active[w]) {
        active[w] = 1;
        front.push_back(w);
      }
  };
  auto saturate = [&](std::uint32_t v) {
    saturated[v] = 1;
    f[v] = 1.0;
    ++saturated_count;
    if (!mesh.is_inlet(v) && !mesh.is_outlet(v)) {
      couplings.clear();
      double diagonal = 0.0;
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, v); it; ++it) {
        const auto j = static_cast<std::size_t>(it.row());
        if (j == v) diagonal = it.value();
        else if (index[j] >= 0) couplings.emplace_back(static_cast<std::uint32_t>(index[j]), it.value());
      }
      chol.append(couplings, diagonal);
      index[v] = static_cast<int>(unknowns.size());
      unknowns.push_back(v);
    }
  };
  auto solve_at = [&](double inlet_value) {
    for (auto v : mesh.inlet_nodes()) p[v] = inlet_value;
    x.assign(unknowns.size(), 0.0);
    for (std::size_t r = 0; r < unknowns.size(); ++r) {
      double s = 0.0;
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, unknowns[r]); it; ++it)
        if (index[static_cast<std::size_t>(it.row())] < 0) s -= it.value() * p[static_cast<std::size_t>(it.row())];
      x[r] = s;
    }
    chol.solve(x);
    for (std::size_t r = 0; r < unknowns.size(); ++r) {
      if (!std::isfinite(x[r])) fail(ErrorCode::Numerical, "non-finite pressure at node " + std::to_string(unknowns[r]));
      p[unknowns[r]] = x[r];
    }
  };
  auto influx = [&](std::uint32_t v) {
    double s = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, v); it; ++it) s -= it.value() * p[static_cast<std::size_t>(it.row())];
    return s;
  };
  std::size_t next_obs = 0;
  auto record_until = [&](double t_end) {
    while (next_obs < in.times.size() && in.times[next_obs] < t_end) {
      rec.snapshots.push_back({in.times[next_obs], p, f});
      ++next_obs;
    }
  };

  for (auto v : mesh.inlet_nodes()) {
    saturate(v);
    rec.initial_volume += in.phi[v] * vol[v];
  }
  for (auto v : mesh.inlet_nodes()) activate_neighbours(v);

  double t = 0.0;
  std::vector<double> q(n, 0.0);
  std::vector<std::uint32_t> filled;
  while (saturated_count < n) {
    solve_at(inlet_pressure(t, in.process.inlet));

    // Drop saturated entries from the front list, evaluate influx on the rest.
    std::erase_if(front, [&](std::uint32_t v) { return saturated[v] != 0; });
    double dt = std::numeric_limits<double>::infinity();
    for (auto v : front) {
      q[v] = influx(v);
      if (q[v] > 0.0) dt = std::min(dt, (1.0 - f[v]) * in.phi[v] * vol[v] / q[v]);
    }
    if (!std::isfinite(dt) || !(dt > 0.0)) {
      const std::uint32_t where = front.empty() ? 0 : front.front();
      const Vec2 c = mesh.nodes()[where];
      fail(ErrorCode::Numerical, "stalled front: no positive influx with " + std::to_string(n - saturated_count) +
                                     " unsaturated nodes remaining (front near x=" + detail::format_double(c.x) +
                                     ", y=" + detail::format_double(c.y) + ")");
    }
    const double t_next = t + dt;
    record_until(t_next);
    if (t_next > in.horizon) break;

    StepTrace step{t, dt, 0.0, 0.0, 0.0};
    for (auto v : mesh.inlet_nodes()) step.inlet_flux -= influx(v);
    for (auto v : mesh.outlet_nodes())
      if (saturated[v]) step.vent_flux += influx(v);

    filled.clear();
    const double tie = dt * (1.0 + 1e-12);
    for (auto v : front) {
      if (!(q[v] > 0.0)) continue;
      const double cap = in.phi[v] * vol[v];
      const double need = (1.0 - f[v]) * cap / q[v];
      if (need <= tie) {
        step.volume_added += (1.0 - f[v]) * cap;
        filled.push_back(v);
      } else {
        const double df = std::min(q[v] * dt / cap, 1.0 - f[v]);
        f[v] += df;
        step.volume_added += df * cap;
        if (f[v] >= 1.0) filled.push_back(v);
      }
    }
    std::sort(filled.begin(), filled.end());
    for (auto v : filled) {
      saturate(v);
      rec.fill_events.push_back({t_next, v});
    }
    for (auto v : filled) activate_neighbours(v);
    if (in.keep_trace) rec.trace.push_back(step);
    ++rec.steps;
    t = t_next;
  }

  if (saturated_count == n) {
    rec.fill_complete_time = t;
    while (next_obs < in.times.size()) {
      solve_at(inlet_pressure(in.times[next_obs], in.process.inlet));
      rec.snapshots.push_back({in.times[next_obs], p, f});
      ++next_obs;
    }
  }
  record_until(std::numeric_limits<double>::infinity());
  return rec;
}

SimulationRecord simulate_material(const MaterialInputs& material, const Mesh& mesh, const ControlVolumes& volumes,
                                   const ForwardSettings& settings) {
  SimulationInputs in;
  in.mesh = &mesh;
  in.volumes = &volumes;
  in.log_k = nearest_neighbour_transfer(material.fields.log_k, material.fields.grid, mesh);
  in.phi = nearest_neighbour_transfer(material.fields.phi, material.fields.grid, mesh);
  in.process = material.process;
  in.p0 = settings.p0;
  in.horizon = settings.horizon;
  in.times = settings.times;
  in.average = settings.average;
  return simulate(in);
}

SimulationRecord forward_operator(const ParameterVector& u, const PriorSpec& prior, const Mesh& mesh,
                                  const ControlVolumes& volumes, const ForwardSettings& settings) {
  MaterialInputs material{realise_fields(u, prior, u.discretisation.grid), process_scalars(u)};
  return simulate_material(material, mesh, volumes, settings);
}

double front_position_1d(const SimulationRecord& record, double t, double phi, double domain_y) {
  require(!record.trace.empty(), ErrorCode::InvalidArgument, "front position needs a step trace");
  double stored = record.initial_volume;
  for (const auto& s : record.trace) {
    if (t <= s.time) break;
    if (t < s.time + s.dt) {
      stored += s.volume_added * (t - s.time) / s.dt;
      break;
    }
    stored += s.volume_added;
  }
  return stored / (phi * domain_y);
}

void write_record_csv(const std::filesystem::path& path, const SimulationRecord& record) {
  auto out = detail::open_out(path);
  out << "time_s,node_id,pressure_Pa,fill_factor\n";
  for (const auto& s : record.snapshots)
    for (std::size_t i = 0; i < s.pressure.size(); ++i)
      out << detail::format_double(s.time) << ',' << i << ',' << detail::format_double(s.pressure[i]) << ','
          << detail::format_double(s.fill[i]) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

void write_fill_events_csv(const std::filesystem::path& path, const SimulationRecord& record) {
  auto out = detail::open_out(path);
  out << "time_s,node_id\n";
  for (const auto& e : record.fill_events) out << detail::format_double(e.time) << ',' << e.node << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

SimulationRecord read_record_csv(const std::filesystem::path& path) {
  const std::string text = detail::read_all_text(path);
  SimulationRecord rec;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line = detail::trim(std::string_view(text).substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line_no == 1) {
      require(line == "time_s,node_id,pressure_Pa,fill_factor", ErrorCode::Parse, path.string() + ": bad record header");
      continue;
    }
    if (line.empty()) continue;
    const auto cols = detail::split(line, ',');
    const std::string ctx = path.string() + " line " + std::to_string(line_no);
    require(cols.size() == 4, ErrorCode::Parse, ctx + ": expected 4 columns");
    const double t = detail::parse_double(cols[0], ctx);
    const auto node = detail::parse_int(cols[1], ctx);
    if (rec.snapshots.empty() || rec.snapshots.back().time != t) rec.snapshots.push_back({t, {}, {}});
    auto& s = rec.snapshots.back();
    require(node == static_cast<long long>(s.pressure.size()), ErrorCode::Parse, ctx + ": node ids must be consecutive");
    s.pressure.push_back(detail::parse_double(cols[2], ctx));
    s.fill.push_back(detail::parse_double(cols[3], ctx));
  }
  return rec;
}

}  // namespace frontflow
