#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace omdpg {

// Tensor/network dimensions disagree.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (bad tau, gamma, unknown key, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value detected in a numeric pipeline.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic random stream built on splitmix64. Self-contained so that
// sequences are bit-stable across platforms and standard libraries; every
// consumer (init, exploration, replay sampling, smoothing noise, ...) owns a
// stream derived from (run seed, stream name, index) and never shares it.
class RngStream {
 public:
  RngStream() : s_(0x9e3779b97f4a7c15ull) {}
  explicit RngStream(std::uint64_t seed) : s_(seed) {}

  // Stable derivation: FNV-1a over the name, mixed with seed and index.
  static RngStream named(std::uint64_t run_seed, std::string_view name,
                         std::uint64_t index = 0);

  std::uint64_t next_u64();

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // {0, ..., n-1}
  int uniform_int(int n);
  // standard normal via Box-Muller (pair cached)
  double normal();
  double normal(double mu, double sigma);
  // N(0, sigma) clipped to [-clip, clip]
  double clipped_normal(double sigma, double clip);

 private:
  std::uint64_t s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace omdpg
