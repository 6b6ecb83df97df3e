#pragma once

// Device-set selection by exhaustive condition-number search, and the
// participation proportionality diagnostic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lossfit/errors.hpp"
#include "lossfit/model.hpp"
#include "lossfit/parallel.hpp"
#include "lossfit/solver.hpp"

namespace lossfit {

struct RankedSubset {
  std::vector<std::string> ids;  // sorted lexicographically
  double kappa = 0.0;
};

struct DesignSearchResult {
  std::vector<std::string> selected_ids;
  double kappa = 0.0;
  std::vector<RankedSubset> ranked_alternatives;  // best first, includes the winner
  std::size_t evaluated = 0;
};

struct DesignSearchOptions {
  std::size_t top_m = 10;
  std::size_t threads = 1;
  double max_subsets = 1e7;
};

// C(n, k) as a double so large libraries can be rejected without overflow.
inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

namespace detail {

inline bool ranks_before(const RankedSubset& a, const RankedSubset& b) {
  return std::tie(a.kappa, a.ids) < std::tie(b.kappa, b.ids);
}

// Advances `idx` (strictly increasing, values < n) to the next combination.
inline bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t pos = k; pos-- > 0;) {
    if (idx[pos] < n - k + pos) {
      ++idx[pos];
      for (std::size_t q = pos + 1; q < k; ++q) idx[q] = idx[q - 1] + 1;
      return true;
    }
  }
  return false;
}

inline void keep_top(std::vector<RankedSubset>& top, RankedSubset candidate, std::size_t m) {
  if (top.size() == m && !ranks_before(candidate, top.back())) return;
  auto pos = std::upper_bound(top.begin(), top.end(), candidate, ranks_before);
  top.insert(pos, std::move(candidate));
  if (top.size() > m) top.pop_back();
}

}  // namespace detail

// Evaluates kappa for every k-row subset of the library and returns the
// minimiser. Ties are broken by the lexicographically smallest sorted id list,
// which makes the answer independent of evaluation order.
inline DesignSearchResult search_min_condition(const ParticipationMatrix& library, std::size_t k,
                                               const DesignSearchOptions& options = {}) {
  const std::size_t n = library.n_devices();
  if (k == 0) throw ValidationError("subset size k must be at least 1");
  if (k > n) {
    throw ValidationError("subset size k = " + std::to_string(k) + " exceeds library size " + std::to_string(n));
  }
  const double total = binomial(n, k);
  if (total > options.max_subsets) {
    throw ValidationError("library has " + std::to_string(static_cast<long long>(total)) +
                          " candidate subsets (limit 1e7); prune the library before searching");
  }
  const std::size_t top_m = std::max<std::size_t>(1, options.top_m);
  const Eigen::MatrixXd full = library.to_eigen();

  // Worker t evaluates combinations whose ordinal is congruent to t.
  const std::size_t workers = std::max<std::size_t>(1, options.threads);
  std::vector<std::vector<RankedSubset>> per_worker(workers);
  std::vector<std::size_t> counts(workers, 0);
  parallel_for(workers, workers, [&](std::size_t worker) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(k), full.cols());
    std::size_t ordinal = 0;
    do {
      if (ordinal++ % workers != worker) continue;
      for (std::size_t r = 0; r < k; ++r) sub.row(static_cast<Eigen::Index>(r)) = full.row(static_cast<Eigen::Index>(idx[r]));
      RankedSubset candidate;
      candidate.kappa = sub.isZero(0.0) ? std::numeric_limits<double>::infinity() : condition_number(sub).kappa;
      for (auto j : idx) candidate.ids.push_back(library.rows()[j].id);
      std::sort(candidate.ids.begin(), candidate.ids.end());
      detail::keep_top(per_worker[worker], std::move(candidate), top_m);
      ++counts[worker];
    } while (detail::next_combination(idx, n));
  });

  std::vector<RankedSubset> top;
  for (auto& list : per_worker) {
    for (auto& c : list) detail::keep_top(top, std::move(c), top_m);
  }
  DesignSearchResult result;
  result.selected_ids = top.front().ids;
  result.kappa = top.front().kappa;
  result.ranked_alternatives = std::move(top);
  for (auto c : counts) result.evaluated += c;
  return result;
}

struct ProportionalityRow {
  std::string device_id;
  std::optional<double> d;
  std::optional<double> ratio;  // empty when the denominator is zero
  bool flagged = false;
};

// P_a / P_b per device, ordered by trench depth (devices without a depth last).
inline std::vector<ProportionalityRow> proportionality_report(const ParticipationMatrix& p, std::string_view region_a,
                                                              std::string_view region_b) {
  const auto ia = p.region_index(region_a);
  const auto ib = p.region_index(region_b);
  if (!ia) throw ValidationError("unknown region '" + std::string(region_a) + "'");
  if (!ib) throw ValidationError("unknown region '" + std::string(region_b) + "'");
  std::vector<ProportionalityRow> rows;
  for (const auto& dev : p.rows()) {
    ProportionalityRow row{dev.id, dev.d, std::nullopt, false};
    const double den = dev.participation[*ib];
    if (den > 0.0) {
      row.ratio = dev.participation[*ia] / den;
    } else {
      row.flagged = true;
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ProportionalityRow& x, const ProportionalityRow& y) {
    if (x.d && y.d) return *x.d < *y.d;
    return x.d.has_value() && !y.d.has_value();
  });
  return rows;
}

}  // namespace lossfit
