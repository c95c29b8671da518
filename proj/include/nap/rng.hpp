#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace nap {

/// Seeded RNG with hand-rolled distributions.
///
/// std::*_distribution output is implementation-defined, so the uniform /
/// normal / categorical draws are implemented here directly on top of
/// mt19937_64 to keep runs bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (cached second draw).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Draws one class index from the given probability vector (sums to ~1).
  int categorical(const double* probs, int k) {
    double u = uniform();
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return k - 1;
  }

  /// Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nap
