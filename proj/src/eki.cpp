#include "frontflow/eki.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>

#include "frontflow/error.hpp"
#include "frontflow/rng.hpp"
#include "formats.hpp"
#include "io_util.hpp"
#include "parallel.hpp"

namespace frontflow {

double transform(double theta, double a, double b) {
  require(a < b, ErrorCode::InvalidArgument, "transform needs a < b");
  require(theta > a && theta < b, ErrorCode::InvalidArgument,
          "transform: value " + detail::format_double(theta) + " outside the open interval (" + detail::format_double(a) +
              ", " + detail::format_double(b) + ")");
  return std::log((b - theta) / (theta - a));
}

double inverse_transform(double zeta, double a, double b) {
  require(a < b, ErrorCode::InvalidArgument, "inverse transform needs a < b");
  require(!std::isnan(zeta), ErrorCode::Numerical, "inverse transform of NaN");
  double theta;
  if (zeta >= 0.0) {
    const double e = std::exp(-zeta);
    theta = a + (b - a) * (e / (1.0 + e));
  } else {
    const double e = std::exp(zeta);
    theta = b - (b - a) * (e / (1.0 + e));
  }
  if (theta <= a) theta = std::nextafter(a, b);
  if (theta >= b) theta = std::nextafter(b, a);
  return theta;
}

FullForwardMap::FullForwardMap(const Mesh& mesh, const PriorSpec& prior, ForwardSettings settings,
                               std::vector<Vec2> sensors)
    : mesh_(mesh), prior_(prior), settings_(std::move(settings)), volumes_(build_control_volumes(mesh)) {
  ObservationConfig cfg;
  cfg.sensors = std::move(sensors);
  nodes_ = sensor_nodes(cfg, mesh_);
}

std::vector<double> FullForwardMap::evaluate(const ParameterVector& u) const {
  const auto record = forward_operator(u, prior_, mesh_, volumes_, settings_);
  return observe_values(record, nodes_, settings_.times);
}

SurrogateErrorStats surrogate_error_stats(std::span<const std::vector<double>> full,
                                          std::span<const std::vector<double>> surrogate) {
  require(full.size() == surrogate.size(), ErrorCode::InvalidArgument, "error statistics need matched pairs");
  require(full.size() >= 2, ErrorCode::InvalidArgument, "error statistics need at least two pairs");
  const std::size_t mn = full[0].size();
  const auto n = static_cast<Eigen::Index>(full.size());
  Eigen::MatrixXd e(static_cast<Eigen::Index>(mn), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    require(full[k].size() == mn && surrogate[k].size() == mn, ErrorCode::ShapeMismatch, "error pairs differ in length");
    for (std::size_t i = 0; i < mn; ++i) e(static_cast<Eigen::Index>(i), k) = full[k][i] - surrogate[k][i];
  }
  const Eigen::VectorXd mean = e.rowwise().mean();
  e.colwise() -= mean;
  SurrogateErrorStats s;
  s.mean.assign(mean.data(), mean.data() + mean.size());
  s.cov = (e * e.transpose()) / static_cast<double>(n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  return s;
}

SurrogateErrorStats zero_error_stats(std::size_t mn) {
  SurrogateErrorStats s;
  s.mean.assign(mn, 0.0);
  s.cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mn), static_cast<Eigen::Index>(mn));
  return s;
}

namespace {
constexpr std::string_view kStatsMagic = "DOES1";
constexpr std::string_view kEnsembleMagic = "ENS1";

std::vector<unsigned char> checked_body(const std::filesystem::path& path, const std::string& ctx) {
  auto bytes = detail::read_all_bytes(path);
  require(bytes.size() >= 8, ErrorCode::Format, ctx + ": too short");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  require(stored == detail::checksum64(bytes.data(), body), ErrorCode::Checksum, ctx + ": checksum mismatch");
  bytes.resize(body);
  return bytes;
}

void finish_and_write(const std::filesystem::path& path, detail::ByteWriter& w) {
  const auto sum = detail::checksum64(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(sum);
  detail::write_bytes(path, w.bytes());
}
}  // namespace

void save_error_stats(const std::filesystem::path& path, const SurrogateErrorStats& stats) {
  const auto mn = stats.mean.size();
  require(static_cast<std::size_t>(stats.cov.rows()) == mn && static_cast<std::size_t>(stats.cov.cols()) == mn,
          ErrorCode::ShapeMismatch, "error covariance must be MN x MN");
  detail::ByteWriter w;
  w.put_bytes(kStatsMagic);
  w.put<std::uint64_t>(mn);
  w.put_array(stats.mean.data(), mn);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = stats.cov;
  w.put_array(rm.data(), mn * mn);
  finish_and_write(path, w);
}

SurrogateErrorStats load_error_stats(const std::filesystem::path& path) {
  const std::string ctx = "error statistics file '" + path.string() + "'";
  const auto body = checked_body(path, ctx);
  detail::ByteReader r(body.data(), body.size(), ctx);
  require(r.get_string(5) == kStatsMagic, ErrorCode::Format, ctx + ": bad magic");
  const auto mn = r.get<std::uint64_t>();
  require(mn >= 1 && mn < (1u << 16), ErrorCode::Format, ctx + ": bad MN");
  SurrogateErrorStats s;
  s.mean.resize(mn);
  r.get_array(s.mean.data(), mn);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(mn, mn);
  r.get_array(rm.data(), mn * mn);
  require(r.remaining() == 0, ErrorCode::Format, ctx + ": trailing bytes");
  s.cov = rm;
  return s;
}

Eigen::MatrixXd noise_matrix(std::span<const double> gamma_diag, const SurrogateErrorStats* stats) {
  const auto mn = static_cast<Eigen::Index>(gamma_diag.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(mn, mn);
  for (Eigen::Index i = 0; i < mn; ++i) g(i, i) = gamma_diag[static_cast<std::size_t>(i)];
  if (stats) {
    require(stats->cov.rows() == mn && stats->cov.cols() == mn, ErrorCode::ShapeMismatch,
            "error statistics size does not match the data");
    g += stats->cov;
  }
  return g;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  require(llt.info() == Eigen::Success, ErrorCode::Numerical, std::string("Cholesky of ") + what + " failed");
  return llt;
}

Eigen::VectorXd member_misfits(const Eigen::VectorXd& data, const Eigen::LLT<Eigen::MatrixXd>& gamma_llt,
                               const Eigen::MatrixXd& outputs) {
  Eigen::MatrixXd r = (-outputs).colwise() + data;
  gamma_llt.matrixL().solveInPlace(r);
  return r.colwise().squaredNorm().transpose();
}

/// Evaluates every column; failed members take a copy of a random survivor.
void evaluate_ensemble(Eigen::MatrixXd& omega, Eigen::MatrixXd& outputs, std::size_t mn, const MemberMap& forward,
                       const EkiOptions& options, int iteration, std::size_t& failures) {
  const auto J = static_cast<std::size_t>(omega.cols());
  std::vector<std::vector<double>> results(J);
  std::vector<std::uint8_t> failed(J, 0);
  detail::parallel_for(J, options.workers, [&](std::size_t j) {
    try {
      results[j] = forward(omega.col(static_cast<Eigen::Index>(j)));
      if (results[j].size() != mn) fail(ErrorCode::ShapeMismatch, "forward map returned the wrong output length");
      for (double v : results[j])
        if (!std::isfinite(v)) fail(ErrorCode::Numerical, "forward map returned a non-finite value");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ShapeMismatch) throw;
      failed[j] = 1;
    }
  });
  std::vector<std::size_t> survivors;
  for (std::size_t j = 0; j < J; ++j)
    if (!failed[j]) survivors.push_back(j);
  require(!survivors.empty(), ErrorCode::Numerical, "forward map failed for every ensemble member");
  auto stream = RandomStream::named(options.seed, "eki/failures/" + std::to_string(iteration));
  for (std::size_t j = 0; j < J; ++j) {
    if (!failed[j]) continue;
    const std::size_t src = survivors[stream.below(survivors.size())];
    omega.col(static_cast<Eigen::Index>(j)) = omega.col(static_cast<Eigen::Index>(src));
    results[j] = results[src];
    ++failures;
  }
  outputs.resize(static_cast<Eigen::Index>(mn), static_cast<Eigen::Index>(J));
  for (std::size_t j = 0; j < J; ++j)
    outputs.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(results[j].data(), static_cast<Eigen::Index>(mn));
}

}  // namespace

EkiState eki_core(const Eigen::VectorXd& data, const Eigen::MatrixXd& gamma, Eigen::MatrixXd initial,
                  const MemberMap& forward, const EkiOptions& options) {
  const auto mn = data.size();
  const auto J = initial.cols();
  require(J >= 2, ErrorCode::InvalidArgument, "EKI needs at least two ensemble members");
  require(options.rho > 0.0 && options.rho < 1.0, ErrorCode::InvalidArgument, "rho must lie in (0,1)");
  require(gamma.rows() == mn && gamma.cols() == mn, ErrorCode::ShapeMismatch, "noise covariance must be MN x MN");
  const auto gamma_llt = factor_spd(gamma, "the noise covariance");
  const Eigen::MatrixXd gamma_lower = gamma_llt.matrixL();

  EkiState st;
  st.omega = std::move(initial);
  Eigen::MatrixXd outputs;
  const double jm1 = static_cast<double>(J - 1);

  while (st.s < 1.0) {
    require(st.iterations < options.max_iterations, ErrorCode::NonConvergence,
            "EKI did not reach s = 1 within " + std::to_string(options.max_iterations) + " iterations (s = " +
                detail::format_double(st.s) + ")");
    evaluate_ensemble(st.omega, outputs, static_cast<std::size_t>(mn), forward, options, st.iterations, st.failures);

    const Eigen::VectorXd g_mean = outputs.rowwise().mean();
    const Eigen::VectorXd w_mean = st.omega.rowwise().mean();
    const Eigen::MatrixXd g_dev = outputs.colwise() - g_mean;
    const Eigen::MatrixXd w_dev = st.omega.colwise() - w_mean;
    Eigen::MatrixXd cgg = Eigen::MatrixXd::Zero(mn, mn);
    cgg.selfadjointView<Eigen::Lower>().rankUpdate(g_dev, 1.0 / jm1);
    cgg = cgg.selfadjointView<Eigen::Lower>();

    const Eigen::VectorXd misfits = member_misfits(data, gamma_llt, outputs);
    st.misfit_history.push_back(misfits.mean());
    double alpha = misfits.mean() / static_cast<double>(mn);

    // Discrepancy-principle damping: grow alpha until the damped step is
    // no longer than rho times the whitened mean residual.
    const Eigen::VectorXd r_mean = data - g_mean;
    const Eigen::VectorXd z_mean = gamma_llt.matrixL().solve(r_mean);
    const double target = options.rho * z_mean.norm();
    int doublings = 0;
    Eigen::LLT<Eigen::MatrixXd> k_llt;
    auto factor_k = [&] {
      k_llt.compute(cgg + alpha * gamma);
      require(k_llt.info() == Eigen::Success, ErrorCode::Numerical, "Cholesky of C^GG + alpha Gamma failed");
    };
    if (alpha > 0.0 && std::isfinite(alpha)) {
      std::function<double()> damped_norm;
      Eigen::VectorXd lambda, y;
      double perp_sq = 0.0;
      if (options.damping_norm == DampingNorm::GammaHalf) {
        // With Gamma = L L^T and L^{-1} C^GG L^{-T} = V diag(lambda) V^T,
        // ||L^T (C^GG + alpha Gamma)^{-1} r|| = ||(diag(lambda) + alpha)^{-1} V^T L^{-1} r||.
        const Eigen::MatrixXd b = gamma_llt.matrixL().solve(g_dev) / std::sqrt(jm1);
        // Eigen-decompose whichever Gram matrix is smaller.
        const bool wide = b.cols() <= b.rows();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(wide ? Eigen::MatrixXd(b.transpose() * b)
                                                                : Eigen::MatrixXd(b * b.transpose()));
        const double cutoff = 1e-13 * std::max(eig.eigenvalues().maxCoeff(), 0.0);
        std::vector<Eigen::Index> keep;
        for (Eigen::Index k = 0; k < eig.eigenvalues().size(); ++k)
          if (eig.eigenvalues()[k] > cutoff && eig.eigenvalues()[k] > 0.0) keep.push_back(k);
        lambda.resize(static_cast<Eigen::Index>(keep.size()));
        y.resize(lambda.size());
        for (Eigen::Index k = 0; k < lambda.size(); ++k) {
          const auto col = keep[static_cast<std::size_t>(k)];
          lambda[k] = eig.eigenvalues()[col];
          const Eigen::VectorXd vk =
              wide ? Eigen::VectorXd(b * eig.eigenvectors().col(col) / std::sqrt(lambda[k])) : Eigen::VectorXd(eig.eigenvectors().col(col));
          y[k] = vk.dot(z_mean);
        }
        perp_sq = std::max(0.0, z_mean.squaredNorm() - y.squaredNorm());
        damped_norm = [&] {
          double sq = perp_sq / (alpha * alpha);
          for (Eigen::Index k = 0; k < lambda.size(); ++k) sq += y[k] * y[k] / ((lambda[k] + alpha) * (lambda[k] + alpha));
          return alpha * std::sqrt(sq);
        };
      } else {
        damped_norm = [&] {
          factor_k();
          return alpha * gamma_llt.matrixL().solve(k_llt.solve(r_mean)).norm();
        };
      }
      while (damped_norm() < target) {
        require(++doublings <= options.max_doublings, ErrorCode::NonConvergence,
                "damping loop exceeded " + std::to_string(options.max_doublings) + " doublings");
        alpha *= 2.0;
      }
    }
    if (!(alpha > 0.0 && std::isfinite(alpha)) || st.s + 1.0 / alpha >= 1.0) {
      alpha = 1.0 / (1.0 - st.s);
      st.s = 1.0;
    } else {
      st.s += 1.0 / alpha;
    }
    factor_k();
    st.alpha_history.push_back(alpha);
    st.doublings.push_back(doublings);

    RandomStream noise = RandomStream::named(options.seed, "eki/eta/" + std::to_string(st.iterations));
    Eigen::MatrixXd z(mn, J);
    for (Eigen::Index j = 0; j < J; ++j)
      for (Eigen::Index i = 0; i < mn; ++i) z(i, j) = noise.normal();
    Eigen::MatrixXd rhs = (std::sqrt(alpha) * (gamma_lower * z) - outputs).colwise() + data;
    const Eigen::MatrixXd w = k_llt.solve(rhs);
    const double dd = static_cast<double>(st.omega.rows()), jj = static_cast<double>(J), mm = static_cast<double>(mn);
    if (jj * mm * jj + dd * jj * jj <= 2.0 * dd * mm * jj) {
      const Eigen::MatrixXd b = g_dev.transpose() * w / jm1;
      st.omega.noalias() += w_dev * b;
    } else {
      const Eigen::MatrixXd cwg = w_dev * g_dev.transpose() / jm1;
      st.omega.noalias() += cwg * w;
    }
    require(st.omega.allFinite(), ErrorCode::Numerical,
            "non-finite ensemble after update at iteration " + std::to_string(st.iterations) + " (alpha = " +
                detail::format_double(alpha) + ")");
    ++st.iterations;
    if (options.on_iteration) options.on_iteration(st);
  }
  if (options.evaluate_final) {
    evaluate_ensemble(st.omega, outputs, static_cast<std::size_t>(mn), forward, options, st.iterations, st.failures);
    st.misfit_history.push_back(member_misfits(data, gamma_llt, outputs).mean());
    st.outputs = std::move(outputs);
  }
  return st;
}

Eigen::VectorXd pack_parameters(const ParameterVector& u, const PriorSpec& prior) {
  u.validate_shape();
  Eigen::VectorXd omega(static_cast<Eigen::Index>(u.field_dimension() + kScalarCount));
  Eigen::Index k = 0;
  for (int f = 0; f < kFieldCount; ++f)
    for (double v : u.field(static_cast<FieldId>(f))) omega[k++] = v;
  for (int i = 0; i < kScalarCount; ++i) omega[k++] = transform(u.scalars[i], prior.scalars[i].lo, prior.scalars[i].hi);
  return omega;
}

ParameterVector unpack_parameters(const Eigen::VectorXd& omega, const PriorSpec& prior) {
  ParameterVector u;
  u.discretisation = prior.discretisation;
  require(static_cast<std::size_t>(omega.size()) == u.field_dimension() + kScalarCount, ErrorCode::ShapeMismatch,
          "parameter vector length does not match the prior discretisation");
  const std::size_t n2 = u.discretisation.grid.size();
  const auto nb = static_cast<std::size_t>(u.discretisation.boundary_points);
  Eigen::Index k = 0;
  for (int f = 0; f < kFieldCount; ++f) {
    const auto id = static_cast<FieldId>(f);
    auto& v = u.field(id);
    v.resize(id == FieldId::XiTop || id == FieldId::XiBottom ? nb : n2);
    for (auto& x : v) x = omega[k++];
  }
  for (int i = 0; i < kScalarCount; ++i) u.scalars[i] = inverse_transform(omega[k++], prior.scalars[i].lo, prior.scalars[i].hi);
  return u;
}

std::vector<ParameterVector> prior_ensemble(const PriorSpec& prior, int J, std::uint64_t seed) {
  require(J >= 1, ErrorCode::InvalidArgument, "ensemble size must be positive");
  std::vector<ParameterVector> out;
  out.reserve(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) out.push_back(sample_prior(prior, substream_key(seed, "member/" + std::to_string(j))));
  return out;
}

Ensemble eki_run(const MeasurementVector& data, const ForwardMap& forward, const PriorSpec& prior,
                 std::vector<ParameterVector> initial, const EkiOptions& options, const SurrogateErrorStats* stats) {
  const std::size_t mn = data.values.size();
  require(data.gamma_diag.size() == mn, ErrorCode::ShapeMismatch, "data and noise variances differ in length");
  require(forward.output_size() == mn, ErrorCode::ShapeMismatch,
          "forward map produces " + std::to_string(forward.output_size()) + " values, data has " + std::to_string(mn));
  require(initial.size() >= 2, ErrorCode::InvalidArgument, "EKI needs at least two ensemble members");

  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(data.values.data(), static_cast<Eigen::Index>(mn));
  if (stats) {
    require(stats->size() == mn, ErrorCode::ShapeMismatch, "error statistics size does not match the data");
    d -= Eigen::Map<const Eigen::VectorXd>(stats->mean.data(), static_cast<Eigen::Index>(mn));
  }
  const Eigen::MatrixXd gamma = noise_matrix(data.gamma_diag, stats);

  const Eigen::Index dim = static_cast<Eigen::Index>(prior.discretisation.grid.size() * 4 +
                                                     2 * static_cast<std::size_t>(prior.discretisation.boundary_points) +
                                                     kScalarCount);
  Eigen::MatrixXd omega(dim, static_cast<Eigen::Index>(initial.size()));
  for (std::size_t j = 0; j < initial.size(); ++j) {
    require(initial[j].discretisation == prior.discretisation, ErrorCode::ShapeMismatch,
            "ensemble member discretisation differs from the prior");
    omega.col(static_cast<Eigen::Index>(j)) = pack_parameters(initial[j], prior);
  }
  initial.clear();

  const MemberMap member = [&](const Eigen::VectorXd& w) { return forward.evaluate(unpack_parameters(w, prior)); };
  Ensemble out;
  out.state = eki_core(d, gamma, std::move(omega), member, options);
  out.members.reserve(static_cast<std::size_t>(out.state.omega.cols()));
  for (Eigen::Index j = 0; j < out.state.omega.cols(); ++j)
    out.members.push_back(unpack_parameters(out.state.omega.col(j), prior));
  return out;
}

PosteriorSummary posterior_summary(std::span<const ParameterVector> members, const PriorSpec& prior,
                                   const RegularGrid& grid) {
  require(!members.empty(), ErrorCode::InvalidArgument, "posterior summary needs a non-empty ensemble");
  const std::size_t n = grid.size();
  const double J = static_cast<double>(members.size());
  PosteriorSummary s;
  s.grid = grid;
  s.mean_log_k.assign(n, 0.0);
  s.mean_phi.assign(n, 0.0);
  s.sd_log_k.assign(n, 0.0);
  s.sd_phi.assign(n, 0.0);
  s.p_def.assign(n, 0.0);
  s.p_rt.assign(n, 0.0);
  std::vector<std::array<int, 4>> counts(n, {0, 0, 0, 0});
  std::vector<double> m2k(n, 0.0), m2p(n, 0.0);
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto f = realise_fields(members[j], prior, grid);
    s.scalars.push_back(members[j].scalars);
    const double w = 1.0 / static_cast<double>(j + 1);
    for (std::size_t i = 0; i < n; ++i) {
      // Welford updates keep the variance accurate for large J.
      const double dk = f.log_k[i] - s.mean_log_k[i];
      s.mean_log_k[i] += dk * w;
      m2k[i] += dk * (f.log_k[i] - s.mean_log_k[i]);
      const double dp = f.phi[i] - s.mean_phi[i];
      s.mean_phi[i] += dp * w;
      m2p[i] += dp * (f.phi[i] - s.mean_phi[i]);
      ++counts[i][static_cast<int>(f.labels[i])];
    }
  }
  s.modal_region.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (members.size() > 1) {
      s.sd_log_k[i] = std::sqrt(std::max(0.0, m2k[i] / (J - 1.0)));
      s.sd_phi[i] = std::sqrt(std::max(0.0, m2p[i] / (J - 1.0)));
    }
    const auto& c = counts[i];
    s.p_def[i] = c[static_cast<int>(Region::Defect)] / J;
    s.p_rt[i] = (c[static_cast<int>(Region::RaceTop)] + c[static_cast<int>(Region::RaceBottom)]) / J;
    s.modal_region[i] = static_cast<Region>(std::max_element(c.begin(), c.end()) - c.begin());
  }
  return s;
}

void write_posterior_summary(const std::filesystem::path& dir, const PosteriorSummary& s, const PriorSpec& prior,
                             int histogram_bins) {
  require(histogram_bins >= 1, ErrorCode::InvalidArgument, "histogram needs at least one bin");
  save_field_pair(dir / "posterior_mean.fld", {s.grid, s.mean_log_k, s.mean_phi, s.modal_region});
  save_field_pair(dir / "posterior_sd.fld", {s.grid, s.sd_log_k, s.sd_phi, s.modal_region});
  save_field_pair(dir / "defect_probability.fld", {s.grid, s.p_def, s.p_rt, s.modal_region});

  auto grid_out = detail::open_out(dir / "posterior_grid.csv");
  grid_out << "x_m,y_m,mean_logK,sd_logK,mean_phi,sd_phi,P_def,P_RT\n";
  for (int j = 0; j < s.grid.ny; ++j)
    for (int i = 0; i < s.grid.nx; ++i) {
      const auto k = s.grid.index(i, j);
      grid_out << detail::format_double(s.grid.x(i)) << ',' << detail::format_double(s.grid.y(j)) << ','
               << detail::format_double(s.mean_log_k[k]) << ',' << detail::format_double(s.sd_log_k[k]) << ','
               << detail::format_double(s.mean_phi[k]) << ',' << detail::format_double(s.sd_phi[k]) << ','
               << detail::format_double(s.p_def[k]) << ',' << detail::format_double(s.p_rt[k]) << '\n';
    }

  auto scal = detail::open_out(dir / "scalars.csv");
  scal << "member";
  for (int i = 0; i < kScalarCount; ++i) scal << ',' << scalar_name(i);
  scal << '\n';
  for (std::size_t j = 0; j < s.scalars.size(); ++j) {
    scal << j;
    for (double v : s.scalars[j]) scal << ',' << detail::format_double(v);
    scal << '\n';
  }

  auto hist = detail::open_out(dir / "scalar_histograms.csv");
  hist << "scalar,bin_lo,bin_hi,count\n";
  for (int i = 0; i < kScalarCount; ++i) {
    const auto r = prior.scalars[i];
    std::vector<int> count(static_cast<std::size_t>(histogram_bins), 0);
    for (const auto& m : s.scalars) {
      const int b = std::clamp(static_cast<int>((m[i] - r.lo) / (r.hi - r.lo) * histogram_bins), 0, histogram_bins - 1);
      ++count[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < histogram_bins; ++b)
      hist << scalar_name(i) << ',' << detail::format_double(r.lo + (r.hi - r.lo) * b / histogram_bins) << ','
           << detail::format_double(r.lo + (r.hi - r.lo) * (b + 1) / histogram_bins) << ',' << count[static_cast<std::size_t>(b)]
           << '\n';
  }
}

Eigen::MatrixXd predictive_pushforward(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& cov, std::uint64_t seed) {
  require(cov.rows() == outputs.rows() && cov.cols() == outputs.rows(), ErrorCode::ShapeMismatch,
          "predictive covariance must be MN x MN");
  const Eigen::MatrixXd lower = factor_spd(cov, "the predictive noise covariance").matrixL();
  auto stream = RandomStream::named(seed, "predictive");
  Eigen::MatrixXd z(outputs.rows(), outputs.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = stream.normal();
  return outputs + lower * z;
}

double normalised_misfit(const Eigen::VectorXd& data, const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& outputs) {
  const auto llt = factor_spd(gamma, "the noise covariance");
  return member_misfits(data, llt, outputs).mean() / static_cast<double>(data.size());
}

void save_ensemble(const std::filesystem::path& path, std::span<const ParameterVector> members) {
  detail::ByteWriter w;
  w.put_bytes(kEnsembleMagic);
  w.put<std::uint64_t>(members.size());
  for (const auto& u : members) detail::encode_parameter_vector(w, u);
  finish_and_write(path, w);
}

std::vector<ParameterVector> load_ensemble(const std::filesystem::path& path) {
  const std::string ctx = "ensemble file '" + path.string() + "'";
  const auto body = checked_body(path, ctx);
  detail::ByteReader r(body.data(), body.size(), ctx);
  require(r.get_string(4) == kEnsembleMagic, ErrorCode::Format, ctx + ": bad magic");
  const auto J = r.get<std::uint64_t>();
  require(J >= 1 && J < (1u << 24), ErrorCode::Format, ctx + ": bad member count");
  std::vector<ParameterVector> out;
  out.reserve(J);
  for (std::uint64_t j = 0; j < J; ++j) out.push_back(detail::decode_parameter_vector(r, ctx));
  require(r.remaining() == 0, ErrorCode::Format, ctx + ": trailing bytes");
  return out;
}

}  // namespace frontflow
