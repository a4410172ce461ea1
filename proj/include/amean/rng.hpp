// Deterministic randomness: one master seed per run, split into named streams
// so that consumers (data, init, batching, perturbation directions) never
// perturb each other's sequences. Distribution transforms are hand-rolled on
// top of mt19937_64 because the standard library leaves them
// implementation-defined and runs must be byte-reproducible.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "amean/common.hpp"

namespace amean {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Derives an independent stream from (master seed, name[, index]).
  static Rng stream(uint64_t master, std::string_view name, uint64_t index = 0);

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller; the spare value is cached.
  double gaussian();

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(0, i)]);
    }
  }

  Mat gaussian_mat(int rows, int cols, double std_dev = 1.0);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace amean
