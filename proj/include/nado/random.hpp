#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace nado {

// Seeded generator with platform-independent derived draws. The standard
// distributions are implementation defined, so uniform() is built directly
// from the engine's 64-bit output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1].
  double uniform_open_zero() { return 1.0 - uniform(); }

  double exponential() { return -std::log(uniform_open_zero()); }

  std::uint64_t next_u64() { return engine_(); }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  // Draws an index from unnormalized non-negative weights. Zero weights are
  // never returned.
  std::size_t categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

// Stateless 64-bit mixer used to derive per-item seeds and hashed noise.
constexpr std::uint64_t SplitMix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace nado
