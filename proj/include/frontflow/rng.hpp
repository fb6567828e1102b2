#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace frontflow {

/// Philox4x32-10 counter-based generator. The output block for a given
/// (key, counter) pair is fixed, so any stream can be replayed or skipped
/// into without generating the values before it.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  static Block generate(std::uint64_t key, std::uint64_t counter_hi, std::uint64_t counter_lo);
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Key for the named sub-stream `name` of the master seed.
std::uint64_t substream_key(std::uint64_t master_seed, std::string_view name);

/// Sequential reader over one Philox stream.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key) {}
  static RandomStream named(std::uint64_t master_seed, std::string_view name) {
    return RandomStream(substream_key(master_seed, name));
  }

  std::uint32_t next_u32();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  void fill_normal(std::span<double> out);
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  Philox4x32::Block block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace frontflow
