#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace noisefacts {

// Deterministic RNG. Gaussian draws go through an explicit Box-Muller
// transform instead of std::normal_distribution, whose output is
// implementation-defined; this keeps seeded runs reproducible everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return (gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Child seed for a named role, so independent consumers of one base seed
  // stay decoupled. FNV-1a, stable across platforms.
  static uint64_t derive(uint64_t base, std::string_view role) {
    uint64_t h = 14695981039346656037ull;
    for (int i = 0; i < 8; ++i) {
      h ^= (base >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
    for (char c : role) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  Rng child(std::string_view role) { return Rng(derive(gen_(), role)); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace noisefacts
