#pragma once

#include <cmath>
#include <cstdint>

#include "icl/config.hpp"

namespace icl {

// Deterministic counter-style generator built on SplitMix64
// (constants from Steele, Lea & Flood's splittable generators):
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
//   z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
// Uniforms take the top 53 bits; normals come from the Box-Muller
// transform of two uniforms (pairs cached). The u64/uniform streams are
// bit-identical on every platform; normals additionally go through libm
// log/sqrt/cos/sin and are bit-identical for a given libm.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log(u1) is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2; // 2*pi
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Derives an independent stream; forking with distinct salts from the
  // same parent gives decorrelated, reproducible streams.
  Rng fork(uint64_t salt) const {
    Rng mix(state_ ^ (0xA24BAED4963EE407ULL + salt));
    uint64_t s = mix.next_u64();
    return Rng(s ^ salt * 0x9FB21C651E98DF25ULL);
  }

  uint64_t state() const { return state_; }
  bool have_spare() const { return have_spare_; }
  double spare() const { return spare_; }
  void restore(uint64_t state, bool have_spare, double spare) {
    state_ = state;
    have_spare_ = have_spare;
    spare_ = spare;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace icl
