#pragma once

// Simulated extraction experiments: how wide does the extracted 95% interval
// get, in the worst case over repeated campaigns, when N devices are measured?

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lossfit/errors.hpp"
#include "lossfit/model.hpp"
#include "lossfit/parallel.hpp"
#include "lossfit/random.hpp"
#include "lossfit/stats.hpp"
#include "lossfit/uncertainty.hpp"

namespace lossfit {

struct SimExpConfig {
  ParticipationMatrix p;
  LossVector target_x;  // loss factors
  std::vector<std::size_t> n_devices_grid{40, 80, 120, 240};
  double relative_sd = 0.1;
  std::size_t n_repetitions = 20;
  std::size_t mc_trials = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SamplingSpace sampling = SamplingSpace::InverseQ;
};

struct RepetitionRecord {
  std::size_t n_devices = 0;
  std::size_t repetition = 0;
  std::vector<QtlsDistribution> estimated;  // per design, from the simulated samples
  std::vector<double> mean;
  std::vector<stats::Interval> ci95;
};

struct WorstCasePoint {
  std::string region;
  std::size_t n_devices = 0;
  double worst_low = 0.0;
  double worst_high = 0.0;
};

struct WorstCaseCurve {
  std::vector<std::string> regions;
  std::vector<std::size_t> n_devices_grid;
  std::vector<double> target;
  LossBasis basis = LossBasis::LossFactor;
  std::vector<WorstCasePoint> points;  // region-major, grid order within a region
  std::vector<RepetitionRecord> repetitions;
  std::uint64_t seed = 0;

  const WorstCasePoint& at(std::size_t region, std::size_t grid_index) const {
    return points.at(region * n_devices_grid.size() + grid_index);
  }
  double width(std::size_t region, std::size_t grid_index) const {
    const auto& pt = at(region, grid_index);
    return pt.worst_high - pt.worst_low;
  }
};

// Stream tags keep sampling and Monte Carlo draws in disjoint key spaces.
inline constexpr std::uint64_t kDeviceSampleTag = 0x51;
inline constexpr std::uint64_t kExtractionTag = 0xE7;

// n draws of Normal(mean_q, relative_sd * mean_q), each redrawn until positive.
inline std::vector<double> sample_device_qs(double mean_q, double relative_sd, std::size_t n, Substream& stream,
                                            std::size_t max_resamples = 100) {
  if (!(std::isfinite(mean_q) && mean_q > 0.0)) throw ValidationError("mean Q must be positive");
  if (!(std::isfinite(relative_sd) && relative_sd >= 0.0)) throw ValidationError("relative_sd must be >= 0");
  if (n == 0) throw ValidationError("sample count must be at least 1");
  std::vector<double> qs;
  qs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    qs.push_back(detail::positive_normal(stream, mean_q, relative_sd * mean_q, max_resamples,
                                         [] { return std::string("device Q sample"); }));
  }
  return qs;
}

// Devices per design for a campaign of n_total devices: an even split, the
// remainder going to designs earliest in id order.
inline std::vector<std::size_t> allocate_devices(const ParticipationMatrix& p, std::size_t n_total) {
  const std::size_t rows = p.n_devices();
  std::vector<std::size_t> counts(rows, n_total / rows);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.rows()[a].id < p.rows()[b].id; });
  for (std::size_t r = 0; r < n_total % rows; ++r) ++counts[order[r]];
  return counts;
}

inline WorstCaseCurve run_simulated_experiment(const SimExpConfig& config) {
  const auto& p = config.p;
  const std::size_t rows = p.n_devices();
  const std::size_t n_regions = p.n_regions();
  if (config.target_x.basis != LossBasis::LossFactor) throw ValidationError("target must be given as loss factors");
  validate(config.target_x);
  if (config.target_x.values.size() != n_regions) {
    throw ValidationError("target has " + std::to_string(config.target_x.values.size()) + " values for " +
                          std::to_string(n_regions) + " regions");
  }
  if (!(std::isfinite(config.relative_sd) && config.relative_sd >= 0.0)) {
    throw ValidationError("relative_sd must be >= 0");
  }
  if (config.n_repetitions == 0) throw ValidationError("n_repetitions must be at least 1");
  if (config.mc_trials == 0) throw ValidationError("mc_trials must be at least 1");
  if (config.n_devices_grid.empty()) throw ValidationError("device-count grid is empty");
  for (auto n : config.n_devices_grid) {
    if (n < 2 * rows) {
      throw ValidationError("insufficient samples per design: N = " + std::to_string(n) + " needs at least " +
                            std::to_string(2 * rows) + " for " + std::to_string(rows) + " designs");
    }
  }

  std::vector<double> ideal_q(rows);
  for (std::size_t j = 0; j < rows; ++j) ideal_q[j] = q_tls_forward(p.rows()[j].participation, config.target_x);

  const std::size_t n_grid = config.n_devices_grid.size();
  std::vector<RepetitionRecord> records(n_grid * config.n_repetitions);

  parallel_for(records.size(), config.threads, [&](std::size_t task) {
    const std::size_t g = task / config.n_repetitions;
    const std::size_t rep = task % config.n_repetitions;
    const std::size_t n_total = config.n_devices_grid[g];
    const auto counts = allocate_devices(p, n_total);

    std::vector<QtlsDistribution> dists(rows);
    for (std::size_t j = 0; j < rows; ++j) {
      Substream stream(config.seed, {kDeviceSampleTag, n_total, rep, j});
      const auto qs = sample_device_qs(ideal_q[j], config.relative_sd, counts[j], stream);
      std::vector<double> inv_q(qs.size());
      std::transform(qs.begin(), qs.end(), inv_q.begin(), [](double q) { return 1.0 / q; });
      dists[j] = {p.rows()[j].id, stats::mean(inv_q),
                  stats::sample_sd(inv_q) / std::sqrt(static_cast<double>(inv_q.size())), inv_q.size()};
    }

    ExtractOptions options;
    options.n_trials = config.mc_trials;
    options.seed = derive_key(config.seed, {kExtractionTag, n_total, rep});
    options.threads = 1;
    options.sampling = config.sampling;
    auto extraction = extract_mc(p, dists, options);

    auto& rec = records[task];
    rec.n_devices = n_total;
    rec.repetition = rep;
    rec.estimated = std::move(dists);
    rec.mean = std::move(extraction.mean);
    rec.ci95 = std::move(extraction.ci95);
  });

  WorstCaseCurve curve;
  curve.regions = p.region_names();
  curve.n_devices_grid = config.n_devices_grid;
  curve.target = config.target_x.values;
  curve.seed = config.seed;
  for (std::size_t i = 0; i < n_regions; ++i) {
    for (std::size_t g = 0; g < n_grid; ++g) {
      WorstCasePoint pt{curve.regions[i], config.n_devices_grid[g], 0.0, 0.0};
      for (std::size_t rep = 0; rep < config.n_repetitions; ++rep) {
        const auto& ci = records[g * config.n_repetitions + rep].ci95[i];
        if (rep == 0 || ci.low < pt.worst_low) pt.worst_low = ci.low;
        if (rep == 0 || ci.high > pt.worst_high) pt.worst_high = ci.high;
      }
      curve.points.push_back(pt);
    }
  }
  curve.repetitions = std::move(records);
  return curve;
}

// Re-expresses a loss-factor curve as loss tangents (a positive per-region scaling).
inline WorstCaseCurve to_tangent_basis(WorstCaseCurve curve, std::span<const RegionSpec> regions) {
  if (curve.basis == LossBasis::LossTangent) return curve;
  if (regions.size() != curve.regions.size()) throw ValidationError("region set does not match curve");
  std::vector<double> scale(regions.size());
  for (std::size_t i = 0; i < regions.size(); ++i) scale[i] = tangent_to_factor_scale(regions[i]);
  for (std::size_t i = 0; i < regions.size(); ++i) curve.target[i] /= scale[i];
  for (std::size_t k = 0; k < curve.points.size(); ++k) {
    const std::size_t i = k / curve.n_devices_grid.size();
    curve.points[k].worst_low /= scale[i];
    curve.points[k].worst_high /= scale[i];
  }
  for (auto& rec : curve.repetitions) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
      rec.mean[i] /= scale[i];
      rec.ci95[i].low /= scale[i];
      rec.ci95[i].high /= scale[i];
    }
  }
  curve.basis = LossBasis::LossTangent;
  return curve;
}

}  // namespace lossfit
