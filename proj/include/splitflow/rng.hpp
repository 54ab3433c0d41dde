#pragma once

#include <cstdint>
#include <string_view>

namespace splitflow {

// Deterministic generator: splitmix64 (Steele et al., "Fast splittable
// pseudorandom number generators"). Chosen for trivially reproducible
// streams; identical seed gives an identical sequence on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return p > 0.0 && uniform01() < p; }

  std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

  // Independent stream derivation: mixes a label into the seed so that
  // per-link / per-host streams never interleave.
  static Rng derive(std::uint64_t master_seed, std::string_view label);

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace splitflow
