#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace taa {

// Derives an independent stream seed from a master seed, a stream tag and a
// counter. Every randomized component (mean-sample choice, head training,
// dataset synthesis, weight init) draws from its own derived stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t counter = 0);

// Portable generator: the mt19937_64 engine is fully specified by the
// standard, the distributions below are implemented here so that draws are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace taa
