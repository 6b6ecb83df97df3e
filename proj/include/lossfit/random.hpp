#pragma once

// Counter-based random streams. A stream is identified by a key derived from
// the master seed and a path of indices (trial, device, ...); its n-th draw
// is a pure function of (key, n), so results do not depend on which thread
// evaluates which stream or in what order.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace lossfit {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = splitmix64(seed);
  for (auto index : path) key = splitmix64(key ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  return key;
}

class Substream {
 public:
  explicit constexpr Substream(std::uint64_t key) : key_(key) {}
  constexpr Substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
      : key_(derive_key(seed, path)) {}

  constexpr std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Standard normal by Box-Muller (one variate per pair of uniforms).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return sd == 0.0 ? mean : mean + sd * normal(); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lossfit
