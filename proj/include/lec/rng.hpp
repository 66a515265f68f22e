#pragma once

// Deterministic random source. std::mt19937_64 gives a portable bit stream,
// but the distributions in <random> are implementation-defined, so uniform
// and normal draws are derived by hand to keep outputs identical across
// standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace lec {

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  // [0, 1) with 53 random bits
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  // U[lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const double u = uniform();
    return lo + int64_t(u * double(hi - lo + 1));
  }

  // standard normal via Box-Muller, caching the paired draw
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  // normal truncated to |z| <= 2 by rejection
  double truncated_normal() {
    for (;;) {
      const double z = normal();
      if (z >= -2.0 && z <= 2.0) return z;
    }
  }

  uint64_t raw() { return eng_(); }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    has_spare_ = false;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lec
