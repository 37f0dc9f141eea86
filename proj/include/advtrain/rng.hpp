#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace advtrain {

/// Mixes a seed with a stream id so that derived streams are independent.
uint64_t derive_seed(uint64_t seed, uint64_t stream);
uint64_t derive_seed(uint64_t seed, std::string_view tag);

/// Deterministic random source. Distributions are implemented here rather
/// than with std:: distribution objects so sequences are pinned for a seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform in [0,n), unbiased via rejection.
  uint64_t uniform_int(uint64_t n);

  /// Standard normal, Box-Muller with cached spare.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent stream derived from this rng's original seed.
  Rng split(uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  Rng split(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace advtrain
