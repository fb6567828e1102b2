#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "frontflow/mesh.hpp"

namespace frontflow {

/// Isotropic Matérn kernel hyperparameters.
struct MaternSpec {
  double sigma = 1.0;
  double ell = 1.0;  // metres
  double nu = 1.5;
  double mean = 0.0;
  void validate() const;
  friend bool operator==(const MaternSpec&, const MaternSpec&) = default;
};

/// Modified Bessel function of the second kind, K_nu(x), x > 0.
double bessel_k(double nu, double x);

/// sigma^2 * 2^{1-nu}/Gamma(nu) * (sqrt(2nu) r/ell)^nu * K_nu(sqrt(2nu) r/ell); sigma^2 at r = 0.
double matern_covariance(double r, const MaternSpec& spec);

struct JitterPolicy {
  double initial = 1e-10;  // relative to sigma^2
  int max_doublings = 8;
};

/// Draw mean + chol(C) z at `points`, z from the Philox stream keyed by `seed`.
std::vector<double> sample_grf(const MaternSpec& spec, std::span<const Vec2> points, std::uint64_t seed,
                               const JitterPolicy& jitter = {});

/// Lower Cholesky factor of the jittered covariance. Cached per
/// (spec, points, jitter); safe to call from several threads.
struct CovarianceFactor {
  Eigen::MatrixXd lower;
  double jitter_used = 0.0;  // absolute diagonal shift that succeeded
};
std::shared_ptr<const CovarianceFactor> covariance_factor(const MaternSpec& spec, std::span<const Vec2> points,
                                                          const JitterPolicy& jitter);

enum class ScalarId : int { KNom, PhiT, PhiB, PhiNom, PhiDef, Mu, PInlet, Lambda, Beta, Chi };
inline constexpr int kScalarCount = 10;
std::string_view scalar_name(ScalarId id);
std::string_view scalar_name(int index);
int scalar_index(std::string_view name);

enum class FieldId : int { Level, LogKTop, LogKBottom, LogKDefect, XiTop, XiBottom };
inline constexpr int kFieldCount = 6;
std::string_view field_name(FieldId id);

/// Regions with permeability baselines drawn per sample.
enum class BaselineId : int { Top, Bottom, Defect };
std::string_view baseline_name(int index);

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double mid() const { return 0.5 * (lo + hi); }
  bool contains_open(double v) const { return v > lo && v < hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Discretisation of the unknown fields: 2D grid plus the 1D boundary grid
/// carrying the race-tracking widths.
struct FieldGrid {
  RegularGrid grid;
  int boundary_points = 120;
  double boundary_x(int k) const { return (k + 0.5) * grid.domain.x / boundary_points; }
  friend bool operator==(const FieldGrid&, const FieldGrid&) = default;
};

struct PriorSpec {
  std::array<Range, kScalarCount> scalars{};
  std::array<MaternSpec, kFieldCount> fields{};
  std::array<Range, 3> baselines{};  // K_0 for RT_T, RT_B, def (m^2)
  double level_threshold = 1.0;
  FieldGrid discretisation;
  JitterPolicy jitter;

  /// Table values for a D_x x D_y domain on an n x n grid with n boundary points.
  static PriorSpec defaults(Vec2 domain, int grid_n = 120, int boundary_n = 120);
  void validate() const;
};

/// All unknowns: six discretised fields and ten scalars in physical units.
struct ParameterVector {
  FieldGrid discretisation;
  std::vector<double> level;       // L, grid
  std::vector<double> log_k_top;   // grid
  std::vector<double> log_k_bottom;
  std::vector<double> log_k_defect;
  std::vector<double> xi_top;      // boundary grid
  std::vector<double> xi_bottom;
  std::array<double, kScalarCount> scalars{};

  double scalar(ScalarId id) const { return scalars[static_cast<int>(id)]; }
  double& scalar(ScalarId id) { return scalars[static_cast<int>(id)]; }
  std::vector<double>& field(FieldId id);
  const std::vector<double>& field(FieldId id) const;
  /// Length of the flattened field block.
  std::size_t field_dimension() const;
  void validate_shape() const;
};

ParameterVector sample_prior(const PriorSpec& prior, std::uint64_t seed);

enum class Region : std::uint8_t { Nominal = 0, Defect = 1, RaceTop = 2, RaceBottom = 3 };

struct FieldPair {
  RegularGrid grid;
  std::vector<double> log_k;
  std::vector<double> phi;
  std::vector<Region> labels;
};

/// Piecewise-linear interpolation of a boundary-grid width at x, clamped to
/// zero from below.
double race_width_at(std::span<const double> xi, const FieldGrid& disc, double x);

/// Region of point (x, y) given the widths and level-set value there.
Region classify_point(double y, double domain_y, double xi_top, double xi_bottom, double level,
                      double level_threshold);

FieldPair realise_fields(const ParameterVector& u, const PriorSpec& prior, const RegularGrid& grid);

struct InletParams {
  double p_inlet = 1e5;  // P_I, Pa
  double lambda = 1.0;
  double beta = 1.0;
  double chi = 1.0;
};

double inlet_pressure(double t, const InletParams& inlet);

struct ProcessScalars {
  double mu = 0.1;
  InletParams inlet;
};

ProcessScalars process_scalars(const ParameterVector& u);

/// Flow-model inputs: material fields on a grid plus the process scalars.
struct MaterialInputs {
  FieldPair fields;
  ProcessScalars process;
};

struct CircleInclusion {
  Vec2 centre;
  double radius = 0.04;
  double k = 1.2e-10;
  double phi = 0.62;
};

struct RectInclusion {
  Vec2 lower;
  Vec2 upper;
  double k = 4e-11;
  double phi = 0.62;
};

struct RaceStrip {
  bool top = true;
  double x_begin = 0.0;
  double x_end = 0.0;
  double width = 0.0075;
  double k = 2.5e-9;
};

/// Hand-built reference material: nominal background, inclusions, edge strips.
struct TruthSpec {
  double k_nominal = 4e-10;
  double phi_nominal = 0.73;
  double phi_race = 0.91;
  std::vector<CircleInclusion> circles;
  std::vector<RectInclusion> rects;
  std::vector<RaceStrip> strips;
  ProcessScalars process{0.092, {109120.0, 1.114, 0.42, 0.66}};

  /// Circle + rectangle + strips A, B, C on a 0.3 m square.
  static TruthSpec benchmark(Vec2 domain = {0.3, 0.3});
  /// One 7.5 mm top strip over the full length plus the central circle.
  static TruthSpec single_strip(Vec2 domain = {0.3, 0.3});
};

MaterialInputs build_synthetic_truth(const TruthSpec& truth, const RegularGrid& grid);

/// FLD1 binary grid file.
void save_field_pair(const std::filesystem::path& path, const FieldPair& fields);
FieldPair load_field_pair(const std::filesystem::path& path);

/// PRM1 binary parameter-vector file.
void save_parameter_vector(const std::filesystem::path& path, const ParameterVector& u);
ParameterVector load_parameter_vector(const std::filesystem::path& path);

}  // namespace frontflow
