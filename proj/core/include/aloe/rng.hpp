#pragma once

#include <array>
#include <cstdint>

namespace aloe {

// Splittable 64-bit generator: xoshiro256++ seeded through splitmix64.
// Every stochastic operation in the repo takes one of these explicitly, and
// substreams are derived with split(), never by sharing a generator, so any
// run is a pure function of its root seed.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Unbiased integer in [0, n), n >= 1.
  uint64_t uniform_int(uint64_t n);

  // Standard normal via Box-Muller; the spare value is cached per stream.
  double normal();

  // Child stream, decorrelated from this one and from siblings with other
  // labels. Splitting does not advance the parent.
  Rng split(uint64_t label) const;
  Rng split(uint64_t a, uint64_t b) const { return split(mix(a, b)); }
  Rng split(uint64_t a, uint64_t b, uint64_t c) const { return split(mix(mix(a, b), c)); }

  uint64_t base_seed() const { return base_seed_; }

  static uint64_t mix(uint64_t a, uint64_t b);

 private:
  std::array<uint64_t, 4> s_{};
  uint64_t base_seed_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace aloe
