#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "frontflow/eki.hpp"
#include "frontflow/fields.hpp"

namespace frontflow {

enum class GeluForm : std::uint8_t { Exact, Tanh };

/// Architecture plus the normalisation constants the trainer recorded.
struct SurrogateConfig {
  int grid_h = 40;
  int grid_w = 40;
  // First entry is the input channel count (log K, phi, x, y); the last is the
  // bottleneck. One 2x2 max-pool follows every block except the bottleneck.
  std::vector<int> channels{4, 16, 32, 64, 128};
  std::vector<int> scalar_hidden{64, 64, 64};
  int n_out = 64;
  int trunk_layers = 6;
  int n_freq = 6;
  double delta = 0.9;
  GeluForm gelu = GeluForm::Exact;
  double bn_eps = 1e-5;

  // Trunk coordinates are (x / sx, y / sy, t / st).
  std::array<double, 3> coord_scale{0.3, 0.3, 110.0};
  // Field branch channels (log K, phi) are min-max scaled to [0, 1].
  std::array<double, 2> field_min{-25.0, 0.4};
  std::array<double, 2> field_max{-19.0, 0.8};
  // mu, P_I, lambda, beta, chi
  // Defaults are the moments of the uniform prior ranges.
  std::array<double, 5> scalar_mean{0.1025, 106000.0, 0.925, 0.45, 0.55};
  std::array<double, 5> scalar_sd{0.0101, 8083.0, 0.1876, 0.1443, 0.1155};
  double p_mean = 0.0;
  double p_sd = 1.0;

  int pool_count() const { return static_cast<int>(channels.size()) - 2; }
  int bottleneck_h() const;
  int bottleneck_w() const;
  int trunk_input_dim() const { return 3 + 6 * n_freq; }
  void validate() const;

  static SurrogateConfig desk();
  static SurrogateConfig paper();
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  std::size_t numel() const;
};

using TensorMap = std::map<std::string, Tensor>;

/// Name and shape of every tensor the architecture needs, in file order.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const SurrogateConfig& config);

struct WeightBundle;

/// Immutable loaded surrogate. Safe to share across threads.
class Surrogate {
 public:
  Surrogate(SurrogateConfig config, TensorMap tensors);
  ~Surrogate();
  Surrogate(Surrogate&&) noexcept;
  Surrogate& operator=(Surrogate&&) noexcept;

  const SurrogateConfig& config() const { return config_; }
  const TensorMap& tensors() const { return tensors_; }

  /// g = B_fields(log K, phi, x, y) * B_scalars(mu, P_I, lambda, beta, chi).
  /// Fields are raw (unnormalised) H x W grids in row-major order.
  std::vector<double> branch_forward(std::span<const double> log_k, std::span<const double> phi,
                                     std::span<const double, 5> scalars) const;
  std::vector<double> field_branch(std::span<const double> log_k, std::span<const double> phi) const;
  std::vector<double> scalar_branch(std::span<const double, 5> scalars) const;

  struct RawOutput {
    double p_out;  // normalised pressure
    double f_out;
  };
  /// Trunk at physical coordinates (x, y, t).
  std::vector<RawOutput> trunk_forward(std::span<const std::array<double, 3>> queries, std::span<const double> gate) const;

  struct Prediction {
    double p;  // de-normalised and masked, Pa
    double f;
  };
  std::vector<Prediction> predict(std::span<const double> log_k, std::span<const double> phi,
                                  std::span<const double, 5> scalars, std::span<const std::array<double, 3>> queries) const;

 private:
  SurrogateConfig config_;
  TensorMap tensors_;
  std::unique_ptr<WeightBundle> w_;
};

/// DONW1 weight exchange.
Surrogate load_surrogate(const std::filesystem::path& path);
void save_surrogate(const std::filesystem::path& path, const SurrogateConfig& config, const TensorMap& tensors);
std::vector<unsigned char> encode_surrogate(const SurrogateConfig& config, const TensorMap& tensors);
Surrogate decode_surrogate(std::span<const unsigned char> bytes, const std::string& context = "DONW1 data");

/// Deterministic random weights with the right shapes (Glorot-style scale).
TensorMap random_tensors(const SurrogateConfig& config, std::uint64_t seed);

/// The five branch scalars of a parameter vector: mu, P_I, lambda, beta, chi.
std::array<double, 5> branch_scalars(const ParameterVector& u);

/// O o F_s o P: realise fields on the training grid, predict at (sensor, time).
class SurrogateForwardMap final : public ForwardMap {
 public:
  SurrogateForwardMap(std::shared_ptr<const Surrogate> model, const PriorSpec& prior, std::vector<Vec2> sensors,
                      std::vector<double> times);
  std::size_t output_size() const override { return sensors_.size() * times_.size(); }
  std::vector<double> evaluate(const ParameterVector& u) const override;

 private:
  std::shared_ptr<const Surrogate> model_;
  PriorSpec prior_;
  RegularGrid grid_;
  std::vector<Vec2> sensors_;
  std::vector<double> times_;
  std::vector<std::array<double, 3>> queries_;
};

}  // namespace frontflow
