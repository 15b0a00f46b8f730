#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace dpc {

// splitmix64, used to turn (seed, label) pairs into fresh stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_label(std::string_view label) {
  // FNV-1a 64.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic generator. All sampling goes through the explicit helpers
// below rather than <random> distributions, so the byte stream of every run
// is independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x5dee, 0)) {
    // warm up once so nearby seeds decorrelate
    next_u64();
  }

  // Child stream for a named purpose; derive(seed, "demos") and
  // derive(seed, "eval") never overlap.
  static std::uint64_t derive(std::uint64_t seed, std::string_view label,
                              std::uint64_t index = 0) {
    return splitmix64(seed ^ hash_label(label) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  }

  std::uint64_t next_u64() {
    state_ = mix(state_, counter_++);
    return state_;
  }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller; stateless across calls on purpose.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  static std::uint64_t mix(std::uint64_t x, std::uint64_t stream) {
    return dpc::splitmix64(x + stream * 0x9e3779b97f4a7c15ULL);
  }

  std::uint64_t state_;
  std::uint64_t counter_ = 1;
};

}  // namespace dpc
