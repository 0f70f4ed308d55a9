#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>

#include "sso/bytes.hpp"

namespace sso {

// Seedable cryptographic random source: a ChaCha20 keystream keyed by
// SHA-256 of the seed. Every random value the protocol consumes comes from
// one of these, so a seed fixes a whole transcript.
//
// Not thread-safe; each task owns its own instance (see fork()).
class Rng {
 public:
  static Rng from_seed(std::uint64_t seed);
  static Rng from_seed_bytes(ByteView seed);
  // Keys the stream from the OS entropy pool. Throws Error(kEntropy).
  static Rng from_entropy();

  Rng(Rng&&) noexcept;
  Rng& operator=(Rng&&) noexcept;
  ~Rng();

  void fill(std::span<std::uint8_t> out);
  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  // Uniform in [0, bound). bound must be > 0.
  std::uint64_t uniform(std::uint64_t bound);
  // Uniform in [0, 1).
  double uniform01();
  bool bernoulli(double p);

  // Independent child stream, deterministic given this stream's position.
  Rng fork(std::string_view label);

 private:
  explicit Rng(ByteView key);
  void refill();

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sso
