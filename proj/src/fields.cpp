#include "frontflow/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "frontflow/error.hpp"
#include "frontflow/rng.hpp"
#include "formats.hpp"
#include "io_util.hpp"

namespace frontflow {

void MaternSpec::validate() const {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::Validation, "Matern sigma must be positive");
  require(ell > 0.0 && std::isfinite(ell), ErrorCode::Validation, "Matern ell must be positive");
  require(nu > 0.0 && std::isfinite(nu), ErrorCode::Validation, "Matern nu must be positive");
  require(std::isfinite(mean), ErrorCode::Validation, "Matern mean must be finite");
}

double bessel_k(double nu, double x) {
  require(x > 0.0, ErrorCode::InvalidArgument, "bessel_k needs x > 0");
  if (x > 700.0) return 0.0;
  return std::cyl_bessel_k(nu, x);
}

double matern_covariance(double r, const MaternSpec& spec) {
  const double var = spec.sigma * spec.sigma;
  if (r <= 0.0) return var;
  const double z = std::sqrt(2.0 * spec.nu) * r / spec.ell;
  if (z < 1e-8) return var;
  if (z > 700.0) return 0.0;
  // log-space prefactor keeps (z^nu * K_nu) well scaled for large nu
  const double log_pre = (1.0 - spec.nu) * std::numbers::ln2 - std::lgamma(spec.nu) + spec.nu * std::log(z);
  return var * std::exp(log_pre) * bessel_k(spec.nu, z);
}

namespace {

struct FactorCache {
  std::mutex mutex;
  std::map<std::string, std::shared_ptr<const CovarianceFactor>> entries;
};

FactorCache& factor_cache() {
  static FactorCache cache;
  return cache;
}

std::string cache_key(const MaternSpec& spec, std::span<const Vec2> points, const JitterPolicy& jitter) {
  std::string key;
  const double head[4] = {spec.sigma, spec.ell, spec.nu, jitter.initial};
  key.append(reinterpret_cast<const char*>(head), sizeof head);
  key.append(reinterpret_cast<const char*>(&jitter.max_doublings), sizeof jitter.max_doublings);
  key.append(reinterpret_cast<const char*>(points.data()), points.size_bytes());
  return key;
}

std::shared_ptr<const CovarianceFactor> factorise(const MaternSpec& spec, std::span<const Vec2> points,
                                                  const JitterPolicy& jitter) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    cov(j, j) = spec.sigma * spec.sigma;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double r = std::hypot(points[i].x - points[j].x, points[i].y - points[j].y);
      cov(i, j) = cov(j, i) = matern_covariance(r, spec);
    }
  }
  const double var = spec.sigma * spec.sigma;
  double shift = jitter.initial * var;
  for (int attempt = 0; attempt <= jitter.max_doublings; ++attempt, shift *= 2.0) {
    Eigen::MatrixXd a = cov;
    a.diagonal().array() += shift;
    Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(std::move(a));
    if (llt.info() == Eigen::Success) {
      auto factor = std::make_shared<CovarianceFactor>();
      factor->lower = llt.matrixL();
      factor->jitter_used = shift;
      return factor;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const auto d = ldlt.vectorD().cwiseAbs();
  const double cond = d.minCoeff() > 0.0 ? d.maxCoeff() / d.minCoeff() : std::numeric_limits<double>::infinity();
  fail(ErrorCode::Numerical, "Cholesky of Matern covariance failed after " + std::to_string(jitter.max_doublings) +
                                 " jitter doublings (n=" + std::to_string(n) + ", condition estimate " +
                                 detail::format_double(cond) + ")");
}

}  // namespace

std::shared_ptr<const CovarianceFactor> covariance_factor(const MaternSpec& spec, std::span<const Vec2> points,
                                                          const JitterPolicy& jitter) {
  spec.validate();
  require(!points.empty(), ErrorCode::InvalidArgument, "covariance factor needs at least one point");
  auto& cache = factor_cache();
  const std::string key = cache_key(spec, points, jitter);
  {
    std::lock_guard lock(cache.mutex);
    if (auto it = cache.entries.find(key); it != cache.entries.end()) return it->second;
  }
  auto factor = factorise(spec, points, jitter);
  std::lock_guard lock(cache.mutex);
  return cache.entries.emplace(key, std::move(factor)).first->second;
}

std::vector<double> sample_grf(const MaternSpec& spec, std::span<const Vec2> points, std::uint64_t seed,
                               const JitterPolicy& jitter) {
  const auto factor = covariance_factor(spec, points, jitter);
  RandomStream stream(seed);
  Eigen::VectorXd z(static_cast<Eigen::Index>(points.size()));
  stream.fill_normal({z.data(), static_cast<std::size_t>(z.size())});
  Eigen::VectorXd v = factor->lower.triangularView<Eigen::Lower>() * z;
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = spec.mean + v[static_cast<Eigen::Index>(i)];
  return out;
}

namespace {

constexpr std::array<std::string_view, kScalarCount> kScalarNames = {
    "K_nom", "phi_T", "phi_B", "phi_nom", "phi_def", "mu", "P_I", "lambda", "beta", "chi"};
constexpr std::array<std::string_view, kFieldCount> kFieldNames = {"L",       "logK_T", "logK_B",
                                                                   "logK_def", "xi_T",   "xi_B"};
constexpr std::array<std::string_view, 3> kBaselineNames = {"K0_T", "K0_B", "K0_def"};

}  // namespace

std::string_view scalar_name(ScalarId id) { return kScalarNames[static_cast<int>(id)]; }

std::string_view scalar_name(int index) {
  require(index >= 0 && index < kScalarCount, ErrorCode::InvalidArgument, "scalar index out of range");
  return kScalarNames[index];
}

int scalar_index(std::string_view name) {
  for (int i = 0; i < kScalarCount; ++i)
    if (kScalarNames[i] == name) return i;
  fail(ErrorCode::Config, "unknown scalar '" + std::string(name) + "'");
}

std::string_view field_name(FieldId id) { return kFieldNames[static_cast<int>(id)]; }

std::string_view baseline_name(int index) {
  require(index >= 0 && index < 3, ErrorCode::InvalidArgument, "baseline index out of range");
  return kBaselineNames[static_cast<std::size_t>(index)];
}

PriorSpec PriorSpec::defaults(Vec2 domain, int grid_n, int boundary_n) {
  PriorSpec p;
  auto s = [&](ScalarId id) -> Range& { return p.scalars[static_cast<int>(id)]; };
  s(ScalarId::KNom) = {2e-10, 6.5e-10};
  s(ScalarId::PhiT) = {0.9, 0.96};
  s(ScalarId::PhiB) = {0.9, 0.96};
  s(ScalarId::PhiNom) = {0.6, 0.8};
  s(ScalarId::PhiDef) = {0.55, 0.7};
  s(ScalarId::Mu) = {0.085, 0.12};
  s(ScalarId::PInlet) = {92000.0, 120000.0};
  s(ScalarId::Lambda) = {0.6, 1.25};
  s(ScalarId::Beta) = {0.2, 0.7};
  s(ScalarId::Chi) = {0.35, 0.75};

  auto f = [&](FieldId id) -> MaternSpec& { return p.fields[static_cast<int>(id)]; };
  f(FieldId::Level) = {1.0, 0.075 * domain.x, 2.0, 0.0};
  f(FieldId::LogKTop) = {0.3, 0.1 * domain.x, 2.0, 0.0};
  f(FieldId::LogKBottom) = {0.3, 0.1 * domain.x, 2.0, 0.0};
  f(FieldId::LogKDefect) = {0.3, 0.1 * domain.x, 2.0, 0.0};
  f(FieldId::XiTop) = {0.0135, 0.15 * domain.x, 1.5, 0.0};
  f(FieldId::XiBottom) = {0.0135, 0.15 * domain.x, 1.5, 0.0};

  p.baselines[static_cast<int>(BaselineId::Top)] = {2e-9, 5e-9};
  p.baselines[static_cast<int>(BaselineId::Bottom)] = {2e-9, 5e-9};
  p.baselines[static_cast<int>(BaselineId::Defect)] = {2.5e-11, 2.5e-10};
  p.level_threshold = 1.0;
  p.discretisation = {RegularGrid{grid_n, grid_n, domain}, boundary_n};
  return p;
}

void PriorSpec::validate() const {
  for (int i = 0; i < kScalarCount; ++i)
    require(std::isfinite(scalars[i].lo) && std::isfinite(scalars[i].hi) && scalars[i].lo < scalars[i].hi,
            ErrorCode::Validation, "prior range for " + std::string(kScalarNames[i]) + " needs a < b");
  for (int i = 0; i < 3; ++i)
    require(baselines[i].lo > 0.0 && baselines[i].lo < baselines[i].hi, ErrorCode::Validation,
            "baseline range for " + std::string(kBaselineNames[i]) + " needs 0 < a < b");
  for (const auto& f : fields) f.validate();
  require(std::isfinite(level_threshold), ErrorCode::Validation, "level threshold must be finite");
  const auto& g = discretisation.grid;
  require(g.nx >= 1 && g.ny >= 1 && discretisation.boundary_points >= 2, ErrorCode::Validation,
          "field grid needs nx, ny >= 1 and at least 2 boundary points");
  require(g.domain.x > 0.0 && g.domain.y > 0.0, ErrorCode::Validation, "field grid domain must be positive");
  require(jitter.initial > 0.0 && jitter.max_doublings >= 0, ErrorCode::Validation, "invalid jitter policy");
}

std::vector<double>& ParameterVector::field(FieldId id) {
  switch (id) {
    case FieldId::Level: return level;
    case FieldId::LogKTop: return log_k_top;
    case FieldId::LogKBottom: return log_k_bottom;
    case FieldId::LogKDefect: return log_k_defect;
    case FieldId::XiTop: return xi_top;
    case FieldId::XiBottom: return xi_bottom;
  }
  return level;
}

const std::vector<double>& ParameterVector::field(FieldId id) const {
  return const_cast<ParameterVector*>(this)->field(id);
}

std::size_t ParameterVector::field_dimension() const {
  return 4 * discretisation.grid.size() + 2 * static_cast<std::size_t>(discretisation.boundary_points);
}

void ParameterVector::validate_shape() const {
  const std::size_t n2 = discretisation.grid.size();
  const auto nb = static_cast<std::size_t>(discretisation.boundary_points);
  for (int i = 0; i < kFieldCount; ++i) {
    const auto id = static_cast<FieldId>(i);
    const std::size_t want = (id == FieldId::XiTop || id == FieldId::XiBottom) ? nb : n2;
    require(field(id).size() == want, ErrorCode::ShapeMismatch,
            "field " + std::string(field_name(id)) + " has " + std::to_string(field(id).size()) +
                " values, expected " + std::to_string(want));
  }
}

ParameterVector sample_prior(const PriorSpec& prior, std::uint64_t seed) {
  prior.validate();
  ParameterVector u;
  u.discretisation = prior.discretisation;
  for (int i = 0; i < kScalarCount; ++i) {
    auto stream = RandomStream::named(seed, "scalar/" + std::string(kScalarNames[i]));
    u.scalars[i] = stream.uniform(prior.scalars[i].lo, prior.scalars[i].hi);
  }
  const auto grid_points = prior.discretisation.grid.points();
  std::vector<Vec2> boundary_points(static_cast<std::size_t>(prior.discretisation.boundary_points));
  for (std::size_t k = 0; k < boundary_points.size(); ++k)
    boundary_points[k] = {prior.discretisation.boundary_x(static_cast<int>(k)), 0.0};

  for (int i = 0; i < kFieldCount; ++i) {
    const auto id = static_cast<FieldId>(i);
    MaternSpec spec = prior.fields[i];
    int baseline = -1;
    if (id == FieldId::LogKTop) baseline = static_cast<int>(BaselineId::Top);
    if (id == FieldId::LogKBottom) baseline = static_cast<int>(BaselineId::Bottom);
    if (id == FieldId::LogKDefect) baseline = static_cast<int>(BaselineId::Defect);
    if (baseline >= 0) {
      auto stream = RandomStream::named(seed, "baseline/" + std::string(kBaselineNames[baseline]));
      spec.mean = std::log(stream.uniform(prior.baselines[baseline].lo, prior.baselines[baseline].hi));
    }
    const bool is_1d = id == FieldId::XiTop || id == FieldId::XiBottom;
    const std::span<const Vec2> pts = is_1d ? std::span<const Vec2>(boundary_points) : std::span<const Vec2>(grid_points);
    u.field(id) = sample_grf(spec, pts, substream_key(seed, "field/" + std::string(kFieldNames[i])), prior.jitter);
  }
  return u;
}

double race_width_at(std::span<const double> xi, const FieldGrid& disc, double x) {
  const int nb = disc.boundary_points;
  require(static_cast<int>(xi.size()) == nb, ErrorCode::ShapeMismatch, "race width array does not match boundary grid");
  const double h = disc.grid.domain.x / nb;
  const double s = x / h - 0.5;
  double w;
  if (s <= 0.0) {
    w = xi[0];
  } else if (s >= nb - 1) {
    w = xi[nb - 1];
  } else {
    const int k = static_cast<int>(s);
    const double t = s - k;
    w = (1.0 - t) * xi[k] + t * xi[k + 1];
  }
  return std::max(w, 0.0);
}

Region classify_point(double y, double domain_y, double xi_top, double xi_bottom, double level,
                      double level_threshold) {
  if (y > domain_y - xi_top) return Region::RaceTop;
  if (y < xi_bottom) return Region::RaceBottom;
  if (level > level_threshold) return Region::Defect;
  return Region::Nominal;
}

FieldPair realise_fields(const ParameterVector& u, const PriorSpec& prior, const RegularGrid& grid) {
  u.validate_shape();
  require(grid == u.discretisation.grid, ErrorCode::ShapeMismatch,
          "realisation grid does not match the parameter discretisation");
  FieldPair out;
  out.grid = grid;
  out.log_k.resize(grid.size());
  out.phi.resize(grid.size());
  out.labels.resize(grid.size());
  const double log_k_nom = std::log(u.scalar(ScalarId::KNom));
  for (int i = 0; i < grid.nx; ++i) {
    const double x = grid.x(i);
    const double xt = race_width_at(u.xi_top, u.discretisation, x);
    const double xb = race_width_at(u.xi_bottom, u.discretisation, x);
    for (int j = 0; j < grid.ny; ++j) {
      const std::size_t k = grid.index(i, j);
      const Region r = classify_point(grid.y(j), grid.domain.y, xt, xb, u.level[k], prior.level_threshold);
      out.labels[k] = r;
      switch (r) {
        case Region::RaceTop:
          out.log_k[k] = u.log_k_top[k];
          out.phi[k] = u.scalar(ScalarId::PhiT);
          break;
        case Region::RaceBottom:
          out.log_k[k] = u.log_k_bottom[k];
          out.phi[k] = u.scalar(ScalarId::PhiB);
          break;
        case Region::Defect:
          out.log_k[k] = u.log_k_defect[k];
          out.phi[k] = u.scalar(ScalarId::PhiDef);
          break;
        case Region::Nominal:
          out.log_k[k] = log_k_nom;
          out.phi[k] = u.scalar(ScalarId::PhiNom);
          break;
      }
    }
  }
  return out;
}

double inlet_pressure(double t, const InletParams& inlet) {
  const double base = inlet.chi * inlet.p_inlet;
  if (t <= 0.0) return base;
  const double rise = -std::expm1(-std::pow(t / inlet.lambda, inlet.beta));
  return base + (inlet.p_inlet - base) * rise;
}

ProcessScalars process_scalars(const ParameterVector& u) {
  return {u.scalar(ScalarId::Mu),
          {u.scalar(ScalarId::PInlet), u.scalar(ScalarId::Lambda), u.scalar(ScalarId::Beta), u.scalar(ScalarId::Chi)}};
}

TruthSpec TruthSpec::benchmark(Vec2 domain) {
  TruthSpec t;
  t.circles.push_back({{0.5 * domain.x, 0.5 * domain.y}, 0.04, 1.2e-10, 0.62});
  t.rects.push_back({{0.7 * domain.x, 0.2 * domain.y}, {0.85 * domain.x, 0.35 * domain.y}, 4e-11, 0.62});
  t.strips.push_back({true, 0.0, 0.5 * domain.x, 0.0075, 2.5e-9});
  t.strips.push_back({false, 0.4 * domain.x, domain.x, 0.015, 4e-9});
  t.strips.push_back({true, 0.6 * domain.x, domain.x, 0.0075, 4e-9});
  return t;
}

TruthSpec TruthSpec::single_strip(Vec2 domain) {
  TruthSpec t;
  t.circles.push_back({{0.5 * domain.x, 0.5 * domain.y}, 0.04, 1.2e-10, 0.62});
  t.strips.push_back({true, 0.0, domain.x, 0.0075, 2.5e-9});
  return t;
}

MaterialInputs build_synthetic_truth(const TruthSpec& truth, const RegularGrid& grid) {
  require(grid.nx >= 1 && grid.ny >= 1, ErrorCode::InvalidArgument, "truth grid must be non-empty");
  MaterialInputs out;
  out.process = truth.process;
  auto& f = out.fields;
  f.grid = grid;
  f.log_k.assign(grid.size(), std::log(truth.k_nominal));
  f.phi.assign(grid.size(), truth.phi_nominal);
  f.labels.assign(grid.size(), Region::Nominal);
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      const double x = grid.x(i), y = grid.y(j);
      const std::size_t k = grid.index(i, j);
      bool in_strip = false;
      for (const auto& s : truth.strips) {
        if (x < s.x_begin || x > s.x_end) continue;
        const bool inside = s.top ? y > grid.domain.y - s.width : y < s.width;
        if (!inside) continue;
        f.log_k[k] = std::log(s.k);
        f.phi[k] = truth.phi_race;
        f.labels[k] = s.top ? Region::RaceTop : Region::RaceBottom;
        in_strip = true;
        break;
      }
      if (in_strip) continue;
      for (const auto& c : truth.circles)
        if (std::hypot(x - c.centre.x, y - c.centre.y) <= c.radius) {
          f.log_k[k] = std::log(c.k);
          f.phi[k] = c.phi;
          f.labels[k] = Region::Defect;
        }
      for (const auto& r : truth.rects)
        if (x >= r.lower.x && x <= r.upper.x && y >= r.lower.y && y <= r.upper.y) {
          f.log_k[k] = std::log(r.k);
          f.phi[k] = r.phi;
          f.labels[k] = Region::Defect;
        }
    }
  return out;
}

namespace {

constexpr std::string_view kFieldMagic = "FLD1";
constexpr std::string_view kParamMagic = "PRM1";

void check_grid_header(std::uint64_t nx, std::uint64_t ny, double dx, double dy, const std::string& ctx) {
  require(nx >= 1 && ny >= 1 && nx < (1u << 20) && ny < (1u << 20), ErrorCode::Format, ctx + ": bad grid size");
  require(dx > 0.0 && dy > 0.0, ErrorCode::Format, ctx + ": bad domain size");
}

}  // namespace

void save_field_pair(const std::filesystem::path& path, const FieldPair& fields) {
  const std::size_t n = fields.grid.size();
  require(fields.log_k.size() == n && fields.phi.size() == n && fields.labels.size() == n, ErrorCode::ShapeMismatch,
          "field pair arrays do not match the grid");
  detail::ByteWriter w;
  w.put_bytes(kFieldMagic);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(fields.grid.nx));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(fields.grid.ny));
  w.put<double>(fields.grid.domain.x);
  w.put<double>(fields.grid.domain.y);
  w.put_array(fields.log_k.data(), n);
  w.put_array(fields.phi.data(), n);
  w.put_array(reinterpret_cast<const std::uint8_t*>(fields.labels.data()), n);
  detail::write_bytes(path, w.bytes());
}

FieldPair load_field_pair(const std::filesystem::path& path) {
  const auto bytes = detail::read_all_bytes(path);
  const std::string ctx = "field file '" + path.string() + "'";
  detail::ByteReader r(bytes.data(), bytes.size(), ctx);
  require(r.get_string(4) == kFieldMagic, ErrorCode::Format, ctx + ": bad magic");
  const auto nx = r.get<std::uint64_t>(), ny = r.get<std::uint64_t>();
  const double dx = r.get<double>(), dy = r.get<double>();
  check_grid_header(nx, ny, dx, dy, ctx);
  FieldPair f;
  f.grid = {static_cast<int>(nx), static_cast<int>(ny), {dx, dy}};
  const std::size_t n = f.grid.size();
  f.log_k.resize(n);
  f.phi.resize(n);
  f.labels.resize(n);
  r.get_array(f.log_k.data(), n);
  r.get_array(f.phi.data(), n);
  r.get_array(reinterpret_cast<std::uint8_t*>(f.labels.data()), n);
  require(r.remaining() == 0, ErrorCode::Format, ctx + ": trailing bytes");
  for (auto l : f.labels)
    require(static_cast<std::uint8_t>(l) <= 3, ErrorCode::Format, ctx + ": invalid region label");
  return f;
}

namespace detail {

void encode_parameter_vector(ByteWriter& w, const ParameterVector& u) {
  u.validate_shape();
  const auto& d = u.discretisation;
  w.put<std::uint64_t>(static_cast<std::uint64_t>(d.grid.nx));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(d.grid.ny));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(d.boundary_points));
  w.put<double>(d.grid.domain.x);
  w.put<double>(d.grid.domain.y);
  for (int i = 0; i < kFieldCount; ++i) {
    const auto& v = u.field(static_cast<FieldId>(i));
    w.put_array(v.data(), v.size());
  }
  w.put_array(u.scalars.data(), u.scalars.size());
}

ParameterVector decode_parameter_vector(ByteReader& r, const std::string& ctx) {
  const auto nx = r.get<std::uint64_t>(), ny = r.get<std::uint64_t>(), nb = r.get<std::uint64_t>();
  const double dx = r.get<double>(), dy = r.get<double>();
  check_grid_header(nx, ny, dx, dy, ctx);
  require(nb >= 2 && nb < (1u << 20), ErrorCode::Format, ctx + ": bad boundary grid size");
  ParameterVector u;
  u.discretisation = {RegularGrid{static_cast<int>(nx), static_cast<int>(ny), {dx, dy}}, static_cast<int>(nb)};
  for (int i = 0; i < kFieldCount; ++i) {
    const auto id = static_cast<FieldId>(i);
    auto& v = u.field(id);
    v.resize(id == FieldId::XiTop || id == FieldId::XiBottom ? nb : nx * ny);
    r.get_array(v.data(), v.size());
  }
  r.get_array(u.scalars.data(), u.scalars.size());
  return u;
}

}  // namespace detail

void save_parameter_vector(const std::filesystem::path& path, const ParameterVector& u) {
  detail::ByteWriter w;
  w.put_bytes(kParamMagic);
  detail::encode_parameter_vector(w, u);
  const auto sum = detail::checksum64(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(sum);
  detail::write_bytes(path, w.bytes());
}

ParameterVector load_parameter_vector(const std::filesystem::path& path) {
  const auto bytes = detail::read_all_bytes(path);
  const std::string ctx = "parameter file '" + path.string() + "'";
  require(bytes.size() >= 12, ErrorCode::Format, ctx + ": too short");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  require(stored == detail::checksum64(bytes.data(), body), ErrorCode::Checksum, ctx + ": checksum mismatch");
  detail::ByteReader r(bytes.data(), body, ctx);
  require(r.get_string(4) == kParamMagic, ErrorCode::Format, ctx + ": bad magic");
  auto u = detail::decode_parameter_vector(r, ctx);
  require(r.remaining() == 0, ErrorCode::Format, ctx + ": trailing bytes");
  return u;
}

}  // namespace frontflow
