#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lossfit/errors.hpp"

namespace lossfit::stats {

// Mean accumulated as an offset from the first sample, so a constant
// sequence returns that constant exactly.
inline double mean(std::span<const double> v) {
  if (v.empty()) throw ValidationError("mean of an empty sample");
  const double origin = v.front();
  double acc = 0.0;
  for (double s : v) acc += s - origin;
  return origin + acc / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 denominator); zero for a single sample.
inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double s : v) ss += (s - m) * (s - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Linear interpolation between order statistics at rank q * (n - 1).
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty sample");
  const double rank = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  if (frac == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

inline Interval percentile_interval(std::vector<double> v, double lower = 0.025, double upper = 0.975) {
  std::sort(v.begin(), v.end());
  return {percentile_sorted(v, lower), percentile_sorted(v, upper)};
}

}  // namespace lossfit::stats
