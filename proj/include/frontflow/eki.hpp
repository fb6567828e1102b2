#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frontflow/cvfem.hpp"
#include "frontflow/fields.hpp"
#include "frontflow/observe.hpp"

namespace frontflow {

/// zeta = log((b - theta) / (theta - a)); theta must lie strictly inside (a, b).
double transform(double theta, double a, double b);
/// Always lands strictly inside (a, b).
double inverse_transform(double zeta, double a, double b);

/// u -> G(u) in R^{MN}. Implementations must tolerate concurrent calls.
class ForwardMap {
 public:
  virtual ~ForwardMap() = default;
  virtual std::size_t output_size() const = 0;
  virtual std::vector<double> evaluate(const ParameterVector& u) const = 0;
};

/// O o F o P with the CVFEM solver.
class FullForwardMap final : public ForwardMap {
 public:
  FullForwardMap(const Mesh& mesh, const PriorSpec& prior, ForwardSettings settings, std::vector<Vec2> sensors);
  std::size_t output_size() const override { return nodes_.size() * settings_.times.size(); }
  std::vector<double> evaluate(const ParameterVector& u) const override;
  const ControlVolumes& volumes() const { return volumes_; }

 private:
  const Mesh& mesh_;
  PriorSpec prior_;
  ForwardSettings settings_;
  ControlVolumes volumes_;
  std::vector<std::uint32_t> nodes_;
};

/// Surrogate modelling-error statistics: mean eps_bar and covariance Sigma of G - G_s.
struct SurrogateErrorStats {
  std::vector<double> mean;
  Eigen::MatrixXd cov;
  std::size_t size() const { return mean.size(); }
};

/// Unbiased sample statistics of full - surrogate outputs (at least two pairs).
SurrogateErrorStats surrogate_error_stats(std::span<const std::vector<double>> full,
                                          std::span<const std::vector<double>> surrogate);
SurrogateErrorStats zero_error_stats(std::size_t mn);

/// DOES1: magic, u64 MN, f64 eps_bar[MN], f64 Sigma[MN*MN] row-major, u64 checksum.
void save_error_stats(const std::filesystem::path& path, const SurrogateErrorStats& stats);
SurrogateErrorStats load_error_stats(const std::filesystem::path& path);

struct EkiState;

enum class DampingNorm : std::uint8_t { GammaHalf, GammaInverseHalf };

struct EkiOptions {
  double rho = 0.65;
  std::uint64_t seed = 0;
  int max_iterations = 100;
  int max_doublings = 64;
  DampingNorm damping_norm = DampingNorm::GammaHalf;
  int workers = 1;
  bool evaluate_final = true;
  std::function<void(const EkiState&)> on_iteration;
};

/// Flat ensemble state: columns are members in unconstrained coordinates.
struct EkiState {
  Eigen::MatrixXd omega;          // D x J
  Eigen::MatrixXd outputs;        // MN x J, G of the final ensemble (when evaluated)
  std::vector<double> alpha_history;
  std::vector<double> misfit_history;  // mean ||Gamma^{-1/2}(d - G_j)||^2 per evaluated ensemble
  std::vector<int> doublings;
  int iterations = 0;
  double s = 0.0;
  std::size_t failures = 0;
};

/// Forward evaluation of one member given its unconstrained coordinates.
/// Throwing frontflow::Error marks the member as failed.
using MemberMap = std::function<std::vector<double>(const Eigen::VectorXd& omega)>;

/// Adaptive-tempering EKI with perturbed observations on a dense noise covariance.
EkiState eki_core(const Eigen::VectorXd& data, const Eigen::MatrixXd& gamma, Eigen::MatrixXd initial,
                  const MemberMap& forward, const EkiOptions& options);

/// Packs fields as-is and scalars through `transform` with the prior bounds.
Eigen::VectorXd pack_parameters(const ParameterVector& u, const PriorSpec& prior);
ParameterVector unpack_parameters(const Eigen::VectorXd& omega, const PriorSpec& prior);

struct Ensemble {
  std::vector<ParameterVector> members;
  EkiState state;
};

/// Full or surrogate inversion. In surrogate mode (stats non-null) the data
/// become d - eps_bar and the covariance Gamma + Sigma.
Ensemble eki_run(const MeasurementVector& data, const ForwardMap& forward, const PriorSpec& prior,
                 std::vector<ParameterVector> initial, const EkiOptions& options,
                 const SurrogateErrorStats* stats = nullptr);
/// Prior ensemble of J members from seed-derived sub-streams.
std::vector<ParameterVector> prior_ensemble(const PriorSpec& prior, int J, std::uint64_t seed);

struct PosteriorSummary {
  RegularGrid grid;
  std::vector<double> mean_log_k, sd_log_k, mean_phi, sd_phi;
  std::vector<double> p_def, p_rt;
  std::vector<Region> modal_region;
  std::vector<std::array<double, kScalarCount>> scalars;  // per member
};

PosteriorSummary posterior_summary(std::span<const ParameterVector> members, const PriorSpec& prior,
                                   const RegularGrid& grid);
void write_posterior_summary(const std::filesystem::path& dir, const PosteriorSummary& summary,
                             const PriorSpec& prior, int histogram_bins = 20);

/// d_j = G_j + eta_j with eta_j ~ N(0, cov); outputs is MN x J.
Eigen::MatrixXd predictive_pushforward(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& cov, std::uint64_t seed);

/// Dense noise covariance: diag(gamma) plus Sigma when stats are given.
Eigen::MatrixXd noise_matrix(std::span<const double> gamma_diag, const SurrogateErrorStats* stats = nullptr);

/// (1/J) sum_j ||Gamma^{-1/2}(d - G_j)||^2 / MN.
double normalised_misfit(const Eigen::VectorXd& data, const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& outputs);

/// ENS1: magic, u64 J, J parameter payloads, u64 checksum.
void save_ensemble(const std::filesystem::path& path, std::span<const ParameterVector> members);
std::vector<ParameterVector> load_ensemble(const std::filesystem::path& path);

}  // namespace frontflow
