#include "frontflow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>

#include <json.hpp>

#include "frontflow/error.hpp"
#include "frontflow/onet.hpp"
#include "frontflow/rng.hpp"
#include "io_util.hpp"

namespace frontflow {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

json manifest_base(const RunConfig& c, const std::string& command) {
  return {{"command", command},
          {"version", FRONTFLOW_VERSION_STRING},
          {"seed", c.seed},
          {"config", json::parse(c.resolved_json)}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

std::string numbered(const std::string& stem, int k, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d", k);
  return stem + buf + ext;
}

ProcessScalars process_from(const json& j, ProcessScalars p) {
  if (j.is_null()) return p;
  if (!j.is_object()) fail(ErrorCode::Config, "params: 'process' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) fail(ErrorCode::Config, "params: process." + k + " must be a number");
    const double x = v.get<double>();
    if (k == "mu")
      p.mu = x;
    else if (k == "P_I")
      p.inlet.p_inlet = x;
    else if (k == "lambda")
      p.inlet.lambda = x;
    else if (k == "beta")
      p.inlet.beta = x;
    else if (k == "chi")
      p.inlet.chi = x;
    else
      fail(ErrorCode::Config, "params: unknown process key '" + k + "'");
  }
  return p;
}

struct Forward {
  Mesh mesh;
  std::unique_ptr<ForwardMap> map;
  std::unique_ptr<SurrogateErrorStats> stats;
};

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
      return 2;
    case ErrorCode::Numerical:
      return 3;
    case ErrorCode::NonConvergence:
      return 4;
    default:
      return 1;
  }
}

MaterialInputs load_simulation_input(const RunConfig& config, const std::filesystem::path& params) {
  const auto bytes = detail::read_all_bytes(params);
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (detail::trim(text).empty()) fail(ErrorCode::Config, "params file '" + params.string() + "' is empty");
  if (text.starts_with("PRM1")) {
    const auto u = load_parameter_vector(params);
    return {realise_fields(u, config.prior, u.discretisation.grid), process_scalars(u)};
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, "params file '" + params.string() + "' is neither PRM1 nor JSON: " + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::Config, "params file must hold a JSON object");
  for (const auto& [k, v] : j.items())
    if (k != "truth" && k != "grid" && k != "process" && k != "k" && k != "phi" && k != "fields")
      fail(ErrorCode::Config, "params: unknown key '" + k + "'");
  const int n = j.value("grid", config.truth_grid);
  if (n < 1) fail(ErrorCode::Config, "params: grid must be positive");
  const RegularGrid grid{n, n, config.domain};
  if (j.contains("fields")) {
    MaterialInputs m{load_field_pair(params.parent_path() / j.at("fields").get<std::string>()), {}};
    m.process = process_from(j.value("process", json()), TruthSpec{}.process);
    return m;
  }
  const std::string kind = j.value("truth", std::string());
  if (kind == "homogeneous") {
    const double k = j.value("k", 4e-10), phi = j.value("phi", 0.73);
    if (!(k > 0.0) || !(phi > 0.0 && phi < 1.0)) fail(ErrorCode::Config, "params: homogeneous k and phi out of range");
    MaterialInputs m;
    m.fields = {grid, std::vector<double>(grid.size(), std::log(k)), std::vector<double>(grid.size(), phi),
                std::vector<Region>(grid.size(), Region::Nominal)};
    m.process = process_from(j.value("process", json()), {0.1, {1e5, 1.0, 1.0, 1.0}});
    return m;
  }
  TruthSpec spec;
  if (kind == "benchmark")
    spec = TruthSpec::benchmark(config.domain);
  else if (kind == "single_strip")
    spec = TruthSpec::single_strip(config.domain);
  else
    fail(ErrorCode::Config, "params: 'truth' must be benchmark, single_strip or homogeneous");
  spec.process = process_from(j.value("process", json()), spec.process);
  return build_synthetic_truth(spec, grid);
}

void cmd_sample_prior(const RunConfig& config, int n, const std::filesystem::path& out_dir) {
  require(n >= 1, ErrorCode::Config, "sample-prior needs n >= 1");
  const auto t0 = Clock::now();
  const auto seed = config.stage_seed("sample-prior");
  json files = json::array();
  for (int k = 0; k < n; ++k) {
    const auto u = sample_prior(config.prior, substream_key(seed, "sample/" + std::to_string(k)));
    const auto fields = realise_fields(u, config.prior, config.prior.discretisation.grid);
    save_field_pair(out_dir / numbered("sample_", k, ".fld"), fields);
    save_parameter_vector(out_dir / numbered("sample_", k, ".prm"), u);
    files.push_back(numbered("sample_", k, ".fld"));
  }
  auto m = manifest_base(config, "sample-prior");
  m["n"] = n;
  m["files"] = files;
  m["wall_time_s"] = seconds_since(t0);
  write_json(out_dir / "manifest.json", m);
}

void cmd_simulate(const RunConfig& config, const std::filesystem::path& params, const std::filesystem::path& out_dir) {
  const auto t0 = Clock::now();
  const auto material = load_simulation_input(config, params);
  const Mesh mesh = config.build_mesh();
  const auto volumes = build_control_volumes(mesh);
  const auto rec = simulate_material(material, mesh, volumes, config.forward);
  write_record_csv(out_dir / "record.csv", rec);
  write_fill_events_csv(out_dir / "fill_events.csv", rec);
  auto m = manifest_base(config, "simulate");
  m["params"] = params.string();
  m["steps"] = rec.steps;
  m["fill_complete_time_s"] = rec.fill_complete_time ? json(*rec.fill_complete_time) : json(nullptr);
  m["wall_time_s"] = seconds_since(t0);
  write_json(out_dir / "manifest.json", m);
}

void cmd_make_data(const RunConfig& config, const std::filesystem::path& truth, const std::filesystem::path& out_csv) {
  const auto t0 = Clock::now();
  const auto material = load_simulation_input(config, truth);
  const Mesh mesh = config.build_mesh();
  const auto volumes = build_control_volumes(mesh);
  const auto rec = simulate_material(material, mesh, volumes, config.forward);
  const auto data = synthesize_data(rec, config.observation, mesh, config.stage_seed("data"));
  write_measurements_csv(out_csv, config.observation, data.values);
  auto m = manifest_base(config, "make-data");
  m["truth"] = truth.string();
  m["rows"] = data.values.size();
  m["wall_time_s"] = seconds_since(t0);
  write_json(out_csv.string() + ".manifest.json", m);
}

void cmd_make_corpus(const RunConfig& config, int n, const std::filesystem::path& out_dir, const ProgressSink& progress) {
  require(n >= 1, ErrorCode::Config, "make-corpus needs n >= 1");
  const auto t0 = Clock::now();
  const Mesh mesh = config.build_mesh();
  const auto volumes = build_control_volumes(mesh);
  save_mesh(out_dir / "mesh.txt", mesh);
  {
    auto q = detail::open_out(out_dir / "quadrature.csv");
    q << "node_id,x_m,y_m,weight_m2\n";
    for (std::size_t i = 0; i < mesh.node_count(); ++i)
      q << i << ',' << detail::format_double(mesh.nodes()[i].x) << ',' << detail::format_double(mesh.nodes()[i].y) << ','
        << detail::format_double(volumes.weights[i]) << '\n';
  }
  const auto seed = config.stage_seed("corpus");
  json samples = json::array(), skipped = json::array();
  for (int k = 0; k < n; ++k) {
    const auto sample_seed = substream_key(seed, "sample/" + std::to_string(k));
    const auto u = sample_prior(config.prior, sample_seed);
    const auto fields = realise_fields(u, config.prior, config.prior.discretisation.grid);
    try {
      const auto rec = simulate_material({fields, process_scalars(u)}, mesh, volumes, config.forward);
      const auto dir = out_dir / numbered("sample_", k, "");
      save_field_pair(dir / "fields.fld", fields);
      save_parameter_vector(dir / "params.prm", u);
      write_record_csv(dir / "record.csv", rec);
      samples.push_back({{"index", k}, {"seed", sample_seed}, {"dir", dir.filename().string()}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Numerical) throw;
      skipped.push_back({{"index", k}, {"seed", sample_seed}, {"reason", e.what()}});
      if (progress) progress("sample " + std::to_string(k) + " skipped: " + e.what());
    }
    if (progress) progress("corpus " + std::to_string(k + 1) + "/" + std::to_string(n));
  }
  auto m = manifest_base(config, "make-corpus");
  m["requested"] = n;
  m["samples"] = samples;
  m["skipped"] = skipped;
  m["shortfall"] = n - static_cast<int>(samples.size());
  m["times"] = config.forward.times;
  m["wall_time_s"] = seconds_since(t0);
  write_json(out_dir / "manifest.json", m);
}

namespace {

Forward build_forward(const RunConfig& c) {
  Forward f{c.build_mesh(), nullptr, nullptr};
  if (c.mode == InversionMode::Full) {
    f.map = std::make_unique<FullForwardMap>(f.mesh, c.prior, c.forward, c.observation.sensors);
    return f;
  }
  if (!c.weights) fail(ErrorCode::Config, "surrogate mode needs eki.weights");
  if (!c.stats) fail(ErrorCode::Config, "surrogate mode needs eki.stats");
  for (const auto& p : {*c.weights, *c.stats})
    if (!std::filesystem::exists(p)) fail(ErrorCode::Config, "surrogate mode: '" + p.string() + "' does not exist");
  auto model = std::make_shared<const Surrogate>(load_surrogate(*c.weights));
  f.stats = std::make_unique<SurrogateErrorStats>(load_error_stats(*c.stats));
  f.map = std::make_unique<SurrogateForwardMap>(model, c.prior, c.observation.sensors, c.observation.times);
  return f;
}

void write_alpha_history(const std::filesystem::path& path, const EkiState& st) {
  auto out = detail::open_out(path);
  out << "iteration,alpha,s,doublings,mean_sq_misfit\n";
  double s = 0.0;
  for (std::size_t k = 0; k < st.alpha_history.size(); ++k) {
    s += 1.0 / st.alpha_history[k];
    out << k + 1 << ',' << detail::format_double(st.alpha_history[k]) << ','
        << detail::format_double(s) << ',' << st.doublings[k]
        << ',' << detail::format_double(k < st.misfit_history.size() ? st.misfit_history[k] : 0.0) << '\n';
  }
}

}  // namespace

InversionReport cmd_invert(const RunConfig& config, const std::filesystem::path& data_csv,
                           const std::filesystem::path& out_dir, const ProgressSink& progress) {
  const auto t0 = Clock::now();
  Forward fwd = build_forward(config);
  const auto data = read_measurements_csv(data_csv, config.observation);
  auto opts = config.eki_options();
  std::optional<EkiState> last;
  opts.on_iteration = [&](const EkiState& st) {
    last = st;
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "iteration %d  s=%.6g  alpha=%.6g  doublings=%d  misfit/MN=%.6g", st.iterations,
                    st.s, st.alpha_history.back(), st.doublings.back(),
                    st.misfit_history.back() / static_cast<double>(data.values.size()));
      progress(buf);
    }
  };
  auto initial = prior_ensemble(config.prior, config.ensemble_size, config.stage_seed("ensemble"));
  if (progress) progress("prior ensemble of " + std::to_string(config.ensemble_size) + " members drawn");

  auto m = manifest_base(config, "invert");
  m["data"] = data_csv.string();
  m["J"] = config.ensemble_size;
  m["rho"] = config.rho;
  m["mode"] = config.mode == InversionMode::Full ? "full" : "surrogate";

  Ensemble ens;
  try {
    ens = eki_run(data, *fwd.map, config.prior, std::move(initial), opts, fwd.stats.get());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonConvergence) throw;
    m["status"] = "nonconvergence";
    m["error"] = e.what();
    m["wall_time_s"] = seconds_since(t0);
    if (last) {
      std::vector<ParameterVector> members;
      for (Eigen::Index j = 0; j < last->omega.cols(); ++j) members.push_back(unpack_parameters(last->omega.col(j), config.prior));
      save_ensemble(out_dir / "ensemble_partial.ens", members);
      write_alpha_history(out_dir / "alpha_history.csv", *last);
      m["iterations"] = last->iterations;
      m["alpha_history"] = last->alpha_history;
      m["s"] = last->s;
    }
    write_json(out_dir / "manifest.json", m);
    throw;
  }

  const auto& st = ens.state;
  const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(data.values.data(), static_cast<Eigen::Index>(data.values.size()));
  const Eigen::MatrixXd gamma = noise_matrix(data.gamma_diag, fwd.stats.get());
  Eigen::VectorXd d_eff = d;
  if (fwd.stats) d_eff -= Eigen::Map<const Eigen::VectorXd>(fwd.stats->mean.data(), d.size());

  InversionReport report;
  report.iterations = st.iterations;
  report.failures = st.failures;
  report.converged = st.s == 1.0;
  report.final_misfit = normalised_misfit(d_eff, gamma, st.outputs);

  const auto summary = posterior_summary(ens.members, config.prior, config.prior.discretisation.grid);
  write_posterior_summary(out_dir, summary, config.prior);
  save_ensemble(out_dir / "ensemble.ens", ens.members);
  write_alpha_history(out_dir / "alpha_history.csv", st);

  const Eigen::MatrixXd pred = predictive_pushforward(st.outputs, gamma, config.stage_seed("predictive"));
  {
    auto out = detail::open_out(out_dir / "predictive.csv");
    out << "time_s,sensor_id,data_Pa,mean_Pa,q025_Pa,q975_Pa\n";
    const std::size_t msens = config.observation.sensors.size();
    std::vector<double> row(static_cast<std::size_t>(pred.cols()));
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      for (Eigen::Index j = 0; j < pred.cols(); ++j) row[static_cast<std::size_t>(j)] = pred(i, j);
      std::sort(row.begin(), row.end());
      auto q = [&](double p) {
        const double pos = p * static_cast<double>(row.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const auto hi = std::min(lo + 1, row.size() - 1);
        return row[lo] + (pos - static_cast<double>(lo)) * (row[hi] - row[lo]);
      };
      const auto k = static_cast<std::size_t>(i);
      const int sid = config.observation.sensor_ids.empty() ? static_cast<int>(k % msens) : config.observation.sensor_ids[k % msens];
      out << detail::format_double(config.observation.times[k / msens]) << ',' << sid << ','
          << detail::format_double(data.values[k]) << ',' << detail::format_double(pred.row(i).mean()) << ','
          << detail::format_double(q(0.025)) << ',' << detail::format_double(q(0.975)) << '\n';
    }
  }

  report.wall_seconds = seconds_since(t0);
  m["status"] = "ok";
  m["iterations"] = st.iterations;
  m["alpha_history"] = st.alpha_history;
  m["doublings"] = st.doublings;
  m["misfit_history"] = st.misfit_history;
  m["final_misfit_per_datum"] = report.final_misfit;
  m["failures"] = st.failures;
  m["wall_time_s"] = report.wall_seconds;
  write_json(out_dir / "manifest.json", m);
  return report;
}

void cmd_summarize(const RunConfig& config, const std::filesystem::path& ensemble, const std::filesystem::path& out_dir) {
  const auto t0 = Clock::now();
  const auto members = load_ensemble(ensemble);
  const auto summary = posterior_summary(members, config.prior, config.prior.discretisation.grid);
  write_posterior_summary(out_dir, summary, config.prior);
  auto m = manifest_base(config, "summarize");
  m["ensemble"] = ensemble.string();
  m["J"] = members.size();
  m["wall_time_s"] = seconds_since(t0);
  write_json(out_dir / "manifest.json", m);
}

}  // namespace frontflow
