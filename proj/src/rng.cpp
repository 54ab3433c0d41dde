#include "splitflow/rng.hpp"

namespace splitflow {

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

Rng Rng::derive(std::uint64_t master_seed, std::string_view label) {
  Rng mixer(master_seed ^ fnv1a64(label));
  // Burn a few outputs so nearby labels diverge fully.
  mixer.next_u64();
  mixer.next_u64();
  return Rng(mixer.next_u64());
}

}  // namespace splitflow
