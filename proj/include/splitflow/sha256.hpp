#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splitflow {

using Digest = std::array<std::uint8_t, 32>;

// SHA-256 (FIPS 180-4). Used as the stack's pinned keyed-digest primitive
// (through HMAC) and for host identities and end-to-end content checks.
// Deliberately dependency-free; this code path is about reproducibility,
// not cryptographic hardening.
class Sha256 {
 public:
  Sha256() { reset(); }
  void reset();
  void update(std::span<const std::uint8_t> data);
  void update(const void* data, std::size_t len);
  Digest finish();

  static Digest of(std::span<const std::uint8_t> data);

 private:
  void process_block(const std::uint8_t* block);

  std::array<std::uint32_t, 8> h_;
  std::array<std::uint8_t, 64> buf_;
  std::size_t buf_len_ = 0;
  std::uint64_t total_len_ = 0;
};

// HMAC-SHA256 (RFC 2104).
Digest hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> msg);

std::string hex(std::span<const std::uint8_t> bytes);

}  // namespace splitflow
