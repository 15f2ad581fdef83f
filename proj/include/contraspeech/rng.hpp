#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace contraspeech {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose ("data", "mask", "distractor",
/// "init", ...) derived from one master seed, so changing how one stream is
/// consumed leaves the others untouched.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, mixed with the seed through seed_seq.
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Uniform float in [lo, hi) built from raw bits, so results do not depend
/// on the standard library's distribution implementation.
inline float uniform(Rng& rng, float lo, float hi) {
  const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return static_cast<float>(lo + (hi - lo) * u);
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Standard normal via Box-Muller.
inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  if (u1 <= 0.0) u1 = 1e-300;
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace contraspeech
