#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>

namespace obac {

/// Explicitly seeded random stream. Every stochastic operation in the library
/// takes one of these by reference; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  /// Text form of the full generator state (engine plus cached normal).
  std::string state() const;
  void restore(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.state() == b.state(); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; derives independent stream seeds from one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace obac
