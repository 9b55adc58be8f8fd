#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace irconv {

// Deterministic, platform-independent RNG built on splitmix64.  All
// randomness in the library is derived by *chaining* named streams off a
// root seed instead of mutating shared state, so any point of a run can be
// reproduced from (seed, stream labels) alone.  That is what makes resumed
// training bitwise-identical to an uninterrupted run: nothing about the RNG
// needs to be checkpointed.
inline std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derive a child seed from (seed, label, index).  Labels are short and
// hashed with FNV-1a; the result feeds splitmix64 twice to decorrelate.
inline std::uint64_t chain_seed(std::uint64_t seed, std::string_view label,
                                std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  std::uint64_t state = seed ^ (h + 0x9e3779b97f4a7c15ull * (index + 1));
  splitmix64(state);
  splitmix64(state);
  return state;
}

// Minimal counter-based generator over splitmix64 output.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift; bias is negligible for the desk-scale n used here.
    return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller (always consumes two uniforms so the
  // stream advance is data-independent).
  double normal() {
    double u1 = next_double(), u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  Rng child(std::string_view label, std::uint64_t index = 0) const {
    return Rng(chain_seed(state_, label, index));
  }

private:
  std::uint64_t state_;
};

} // namespace irconv
