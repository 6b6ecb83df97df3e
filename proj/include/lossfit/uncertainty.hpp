#pragma once

// Measurement statistics and Monte Carlo loss-factor extraction.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lossfit/errors.hpp"
#include "lossfit/model.hpp"
#include "lossfit/parallel.hpp"
#include "lossfit/random.hpp"
#include "lossfit/solver.hpp"
#include "lossfit/stats.hpp"

namespace lossfit {

// Low/high power internal Q samples for one device geometry. Equal-length
// lists are paired by index.
struct MeasurementSet {
  std::string device_id;
  std::vector<double> q_low_samples;
  std::vector<double> q_high_samples;
};

inline QtlsDistribution summarize(const MeasurementSet& set, const WarningSink& warnings = {}) {
  if (set.q_low_samples.empty() || set.q_high_samples.empty()) {
    throw ValidationError("device '" + set.device_id + "': measurement lists must be non-empty");
  }
  for (const auto* list : {&set.q_low_samples, &set.q_high_samples}) {
    for (double q : *list) {
      if (!(std::isfinite(q) && q > 0.0)) {
        throw ValidationError("device '" + set.device_id + "': quality factors must be positive");
      }
    }
  }

  std::vector<double> inv_q;
  inv_q.reserve(set.q_low_samples.size());
  if (set.q_low_samples.size() == set.q_high_samples.size()) {
    for (std::size_t k = 0; k < set.q_low_samples.size(); ++k) {
      try {
        inv_q.push_back(1.0 / q_tls_from_power_sweep(set.q_low_samples[k], set.q_high_samples[k]));
      } catch (const NumericalError&) {
        warn(warnings, "device '" + set.device_id + "': sample " + std::to_string(k) +
                           " excluded (non-positive TLS loss)");
      }
    }
  } else {
    warn(warnings, "device '" + set.device_id +
                       "': q_low and q_high lists differ in length; using the pooled high-power loss");
    std::vector<double> inv_high;
    for (double q : set.q_high_samples) inv_high.push_back(1.0 / q);
    const double q_high_pooled = 1.0 / stats::mean(inv_high);
    for (std::size_t k = 0; k < set.q_low_samples.size(); ++k) {
      try {
        inv_q.push_back(1.0 / q_tls_from_power_sweep(set.q_low_samples[k], q_high_pooled));
      } catch (const NumericalError&) {
        warn(warnings, "device '" + set.device_id + "': sample " + std::to_string(k) +
                           " excluded (non-positive TLS loss)");
      }
    }
  }
  if (inv_q.empty()) {
    throw NumericalError("device '" + set.device_id + "': every sample has non-positive TLS loss");
  }
  if (inv_q.size() == 1) {
    warn(warnings, "device '" + set.device_id + "': single sample, standard error set to 0");
  }

  QtlsDistribution d;
  d.device_id = set.device_id;
  d.n_samples = inv_q.size();
  d.inv_q_mean = stats::mean(inv_q);
  d.inv_q_stderr = stats::sample_sd(inv_q) / std::sqrt(static_cast<double>(inv_q.size()));
  return d;
}

// Which quantity the Monte Carlo trials draw as Gaussian.
enum class SamplingSpace {
  InverseQ,  // 1/Q_TLS ~ Normal(inv_q_mean, inv_q_stderr)
  Q,         // Q_TLS ~ Normal(1/inv_q_mean, inv_q_stderr / inv_q_mean^2)
};

struct ExtractOptions {
  std::size_t n_trials = 10000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SamplingSpace sampling = SamplingSpace::InverseQ;
  // Redraws allowed per device draw before giving up on a positive value.
  std::size_t max_resamples = 100;
};

struct ExtractionResult {
  LossVector point;                    // NNLS on the mean 1/Q vector
  std::vector<double> mean;            // per-region ensemble mean
  std::vector<stats::Interval> ci95;   // per-region 2.5 / 97.5 percentiles
  Eigen::MatrixXd ensemble;            // n_trials x n_regions
  std::uint64_t seed = 0;
  std::size_t n_trials = 0;
};

namespace detail {

// One positive Gaussian draw, redrawing from the same stream on non-positive values.
template <typename Describe>
double positive_normal(Substream& stream, double mean, double sd, std::size_t max_resamples,
                       Describe&& describe) {
  for (std::size_t attempt = 0; attempt <= max_resamples; ++attempt) {
    const double v = stream.normal(mean, sd);
    if (v > 0.0) return v;
  }
  throw NumericalError(describe() + ": no positive draw after " + std::to_string(max_resamples) + " resamples");
}

inline void summarize_ensemble(ExtractionResult& r) {
  const auto n_regions = static_cast<std::size_t>(r.ensemble.cols());
  r.mean.assign(n_regions, 0.0);
  r.ci95.assign(n_regions, {});
  std::vector<double> column(static_cast<std::size_t>(r.ensemble.rows()));
  for (std::size_t i = 0; i < n_regions; ++i) {
    for (std::size_t t = 0; t < column.size(); ++t) {
      column[t] = r.ensemble(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
    }
    r.mean[i] = stats::mean(column);
    r.ci95[i] = stats::percentile_interval(column);
  }
}

}  // namespace detail

// Monte Carlo extraction: each trial redraws every device's 1/Q_TLS from its
// estimated distribution and solves the NNLS problem. Trial t, device j uses
// the substream (seed, t, j), so the ensemble is the same for any thread count.
inline ExtractionResult extract_mc(const ParticipationMatrix& p, std::span<const QtlsDistribution> dists,
                                   const ExtractOptions& options) {
  if (dists.size() != p.n_devices()) {
    throw ValidationError("expected " + std::to_string(p.n_devices()) + " distributions, got " +
                          std::to_string(dists.size()));
  }
  if (options.n_trials == 0) throw ValidationError("n_trials must be at least 1");
  for (std::size_t j = 0; j < dists.size(); ++j) {
    validate(dists[j]);
    if (!dists[j].device_id.empty() && dists[j].device_id != p.rows()[j].id) {
      throw ValidationError("distribution '" + dists[j].device_id + "' does not match device '" +
                            p.rows()[j].id + "' at row " + std::to_string(j));
    }
  }

  const Eigen::MatrixXd a = p.to_eigen();
  const auto m = static_cast<Eigen::Index>(dists.size());

  ExtractionResult result;
  result.seed = options.seed;
  result.n_trials = options.n_trials;

  Eigen::VectorXd b_mean(m);
  for (Eigen::Index j = 0; j < m; ++j) b_mean(j) = dists[static_cast<std::size_t>(j)].inv_q_mean;
  const auto point = nnls_solve({a, b_mean});
  result.point = {p.region_names(), std::vector<double>(point.x.data(), point.x.data() + point.x.size()),
                  LossBasis::LossFactor};

  result.ensemble.resize(static_cast<Eigen::Index>(options.n_trials), a.cols());
  parallel_for(options.n_trials, options.threads, [&](std::size_t trial) {
    Eigen::VectorXd b(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto& d = dists[static_cast<std::size_t>(j)];
      Substream stream(options.seed, {trial, static_cast<std::uint64_t>(j)});
      const auto what = [&] { return "trial " + std::to_string(trial) + ", device '" + p.rows()[j].id + "'"; };
      if (options.sampling == SamplingSpace::InverseQ) {
        b(j) = detail::positive_normal(stream, d.inv_q_mean, d.inv_q_stderr, options.max_resamples, what);
      } else {
        const double q_sd = d.inv_q_stderr / (d.inv_q_mean * d.inv_q_mean);
        b(j) = 1.0 / detail::positive_normal(stream, 1.0 / d.inv_q_mean, q_sd, options.max_resamples, what);
      }
    }
    result.ensemble.row(static_cast<Eigen::Index>(trial)) = nnls_solve({a, b}).x.transpose();
  });

  detail::summarize_ensemble(result);
  return result;
}

struct QPrediction {
  double q_mean = 0.0;
  stats::Interval q_ci95;
  std::size_t n_used = 0;
};

// Maps every ensemble member through the forward model for one device row.
inline QPrediction predict_q_mc(std::span<const double> p_row, const ExtractionResult& result,
                                const WarningSink& warnings = {}) {
  if (result.ensemble.rows() == 0) throw ValidationError("extraction ensemble is empty");
  if (static_cast<Eigen::Index>(p_row.size()) != result.ensemble.cols()) {
    throw ValidationError("participation row has " + std::to_string(p_row.size()) + " entries, ensemble has " +
                          std::to_string(result.ensemble.cols()) + " regions");
  }
  std::vector<double> qs;
  qs.reserve(static_cast<std::size_t>(result.ensemble.rows()));
  std::vector<double> x(p_row.size());
  std::size_t skipped = 0;
  for (Eigen::Index t = 0; t < result.ensemble.rows(); ++t) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = result.ensemble(t, static_cast<Eigen::Index>(i));
    try {
      qs.push_back(q_tls_forward(p_row, x));
    } catch (const NumericalError&) {
      ++skipped;
    }
  }
  if (skipped > 0) warn(warnings, std::to_string(skipped) + " lossless trial(s) skipped in prediction");
  if (qs.empty()) throw NumericalError("every trial predicts a lossless device");
  return {stats::mean(qs), stats::percentile_interval(qs), qs.size()};
}

}  // namespace lossfit
