#pragma once

// Linear-algebra kernel: active-set NNLS, SVD least squares and condition
// number diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "lossfit/errors.hpp"
#include "lossfit/model.hpp"

namespace lossfit {

struct LinearSystem {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};

struct NnlsResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  std::size_t iterations = 0;
};

struct ConditionReport {
  double kappa = 1.0;
  std::vector<double> singular_values;  // descending
  std::size_t rank_estimate = 0;
};

namespace detail {

inline void check_system(const LinearSystem& sys) {
  if (sys.a.rows() == 0 || sys.a.cols() == 0) throw ValidationError("empty system matrix");
  if (sys.a.rows() != sys.b.size()) {
    throw ValidationError("system matrix has " + std::to_string(sys.a.rows()) + " rows but rhs has " +
                          std::to_string(sys.b.size()) + " entries");
  }
  if (!sys.a.allFinite() || !sys.b.allFinite()) throw ValidationError("system contains non-finite entries");
}

// Least squares restricted to the columns flagged in `passive`; other
// entries of the returned vector are zero.
inline Eigen::VectorXd solve_passive(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                     const std::vector<bool>& passive) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    if (passive[static_cast<std::size_t>(i)]) cols.push_back(i);
  }
  Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = a.col(cols[k]);
  Eigen::VectorXd zs = sub.completeOrthogonalDecomposition().solve(b);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(a.cols());
  for (std::size_t k = 0; k < cols.size(); ++k) z(cols[k]) = zs(static_cast<Eigen::Index>(k));
  return z;
}

}  // namespace detail

// Lawson-Hanson active-set NNLS: min ||Ax - b|| subject to x >= 0.
// Variables enter the passive set by largest descent direction A^T(b - Ax),
// lowest index on ties.
inline NnlsResult nnls_solve(const LinearSystem& sys) {
  detail::check_system(sys);
  const auto& a = sys.a;
  const auto& b = sys.b;
  const Eigen::Index n = a.cols();
  if (a.isZero(0.0)) throw ValidationError("system matrix is zero");

  const double scale = (a.transpose() * b).norm();
  const double tol = 1e-12 * std::max(scale, std::numeric_limits<double>::min());
  const std::size_t max_passes = 3 * static_cast<std::size_t>(n);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  // Columns that entered and were immediately rejected since the last accepted step.
  std::vector<bool> blocked(static_cast<std::size_t>(n), false);
  Eigen::VectorXd w = a.transpose() * (b - a * x);

  std::size_t passes = 0;
  while (true) {
    Eigen::Index enter = -1;
    double best = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!passive[u] && !blocked[u] && w(i) > best) {
        best = w(i);
        enter = i;
      }
    }
    if (enter < 0) break;

    if (++passes > max_passes) {
      std::ostringstream msg;
      msg << "nnls did not converge after " << max_passes << " active-set passes; iterate x = ["
          << x.transpose() << "], gradient = [" << (-w).transpose() << "]";
      throw NumericalError(msg.str());
    }

    passive[static_cast<std::size_t>(enter)] = true;
    Eigen::VectorXd z = detail::solve_passive(a, b, passive);
    if (z(enter) <= 0.0) {
      // Entering column cannot carry positive weight; keep it out this round.
      passive[static_cast<std::size_t>(enter)] = false;
      blocked[static_cast<std::size_t>(enter)] = true;
      continue;
    }

    for (Eigen::Index inner = 0; inner <= n; ++inner) {
      Eigen::Index limiting = -1;
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && z(i) <= 0.0) {
          const double step = x(i) / (x(i) - z(i));
          if (step < alpha) {
            alpha = step;
            limiting = i;
          }
        }
      }
      if (limiting < 0) break;
      x += alpha * (z - x);
      x(limiting) = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (passive[u] && x(i) <= 0.0) {
          passive[u] = false;
          x(i) = 0.0;
        }
      }
      z = detail::solve_passive(a, b, passive);
    }
    x = z;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!passive[static_cast<std::size_t>(i)]) x(i) = 0.0;
    }
    std::fill(blocked.begin(), blocked.end(), false);
    w = a.transpose() * (b - a * x);
  }

  return {x, (a * x - b).norm(), passes};
}

// Minimum-norm least-squares solution via SVD.
inline Eigen::VectorXd least_squares(const LinearSystem& sys) {
  detail::check_system(sys);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(sys.a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-12);
  return svd.solve(sys.b);
}

// 2-norm condition number s_max / s_min over the min(m, n) singular values.
// A single row therefore has kappa = 1. Singular values below 1e-12 * s_max
// do not count toward rank_estimate.
inline ConditionReport condition_number(const Eigen::MatrixXd& p) {
  if (p.size() == 0 || !p.allFinite()) throw ValidationError("condition number needs a finite, non-empty matrix");
  if (p.isZero(0.0)) throw ValidationError("condition number of a zero matrix is undefined");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(p);
  const auto& s = svd.singularValues();
  ConditionReport report;
  report.singular_values.assign(s.data(), s.data() + s.size());
  const double s_max = s(0);
  const double s_min = s(s.size() - 1);
  report.kappa = s_min > 0.0 ? s_max / s_min : std::numeric_limits<double>::infinity();
  report.rank_estimate = static_cast<std::size_t>(
      std::count_if(report.singular_values.begin(), report.singular_values.end(),
                    [&](double v) { return v > 1e-12 * s_max; }));
  return report;
}

inline ConditionReport condition_number(const ParticipationMatrix& p) { return condition_number(p.to_eigen()); }

}  // namespace lossfit
