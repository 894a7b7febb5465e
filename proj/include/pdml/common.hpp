#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdml {

// Deterministic random source. All stochastic code in the library draws
// through this class so that a run is reproducible from a single seed:
// the raw engine is std::mt19937_64 (stable across platforms), but every
// transformation to doubles/ints is done here by hand because the
// distribution adapters in <random> are not pinned by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Uniform integer in [0, n). Multiply-shift keeps it branch-free; the
  // modulo bias at n << 2^64 is far below anything observable.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    unsigned __int128 wide = static_cast<unsigned __int128>(engine_()) *
                             static_cast<unsigned __int128>(n);
    return static_cast<int>(wide >> 64);
  }

  // Standard normal via Box-Muller. Deliberately no cached spare: callers
  // that interleave uniform and normal draws would otherwise consume the
  // engine in an order that depends on call history.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1], keeps the log finite
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child stream seeded from this one. Used to give trainer subsystems
  // (env resets, agent noise, model init, ...) independent streams whose
  // seeds are still a pure function of the run seed.
  Rng fork() { return Rng(engine_()); }

 private:
  std::mt19937_64 engine_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_finite(std::span<const double> xs, const std::string& what) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i])) {
      throw std::runtime_error(what + ": non-finite value at index " +
                               std::to_string(i));
    }
  }
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace pdml
