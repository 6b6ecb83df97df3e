#pragma once

// Participation-ratio loss model: domain types and the deterministic forward
// model 1/Q_TLS = sum_i P_i x_i.

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lossfit/errors.hpp"

namespace lossfit {

// Orientation of the electric field relative to a thin interface layer, or
// Bulk for the substrate. Decides how thickness/permittivity assumptions
// rescale a loss tangent into a loss factor.
enum class RegionKind { InterfacePerpendicular, InterfaceParallel, Bulk };

enum class EtchStyle { Isotropic, Anisotropic, Planar, Suspended };

enum class LossBasis { LossFactor, LossTangent };

inline bool is_interface(RegionKind kind) { return kind != RegionKind::Bulk; }

struct RegionSpec {
  std::string name;
  RegionKind kind = RegionKind::Bulk;
  // Thickness used by the field simulation (nm). Interface kinds only.
  std::optional<double> t_nom;
  double eps_nom = 1.0;
  // Thickness/permittivity assumed when ascribing loss tangents.
  std::optional<double> t_assumed;
  double eps_assumed = 1.0;
};

inline void validate(const RegionSpec& r) {
  if (r.name.empty()) throw ValidationError("region name must not be empty");
  if (!(std::isfinite(r.eps_nom) && r.eps_nom >= 1.0) ||
      !(std::isfinite(r.eps_assumed) && r.eps_assumed >= 1.0)) {
    throw ValidationError("region '" + r.name + "': permittivities must be >= 1");
  }
  if (is_interface(r.kind)) {
    if (!r.t_nom || !r.t_assumed) {
      throw ValidationError("region '" + r.name + "': interface region is missing a thickness");
    }
    if (!(std::isfinite(*r.t_nom) && *r.t_nom > 0.0) ||
        !(std::isfinite(*r.t_assumed) && *r.t_assumed > 0.0)) {
      throw ValidationError("region '" + r.name + "': thicknesses must be positive");
    }
  }
}

inline void validate(std::span<const RegionSpec> regions) {
  std::set<std::string_view> seen;
  for (const auto& r : regions) {
    validate(r);
    if (!seen.insert(r.name).second) {
      throw ValidationError("duplicate region name '" + r.name + "'");
    }
  }
}

// Four-region partition (metal-substrate, substrate-air, metal-air, silicon)
// with simulation nominals of 10 nm and the 2 nm / literature permittivity
// assumptions used to quote loss tangents.
inline std::vector<RegionSpec> default_regions() {
  return {
      {"MS", RegionKind::InterfacePerpendicular, 10.0, 11.35, 2.0, 11.4},
      {"SA", RegionKind::InterfaceParallel, 10.0, 4.0, 2.0, 4.0},
      {"MA", RegionKind::InterfacePerpendicular, 10.0, 10.0, 2.0, 10.0},
      {"Si", RegionKind::Bulk, std::nullopt, 11.35, std::nullopt, 11.35},
  };
}

struct DeviceGeometry {
  std::string id;
  // Center trace width, gap and trench depth in micrometres, when known.
  std::optional<double> w;
  std::optional<double> g;
  std::optional<double> d;
  std::optional<EtchStyle> etch_style;
  std::vector<double> participation;
};

// Rows are devices, columns are regions. Validated on construction and
// immutable afterwards.
class ParticipationMatrix {
 public:
  ParticipationMatrix(std::vector<RegionSpec> regions, std::vector<DeviceGeometry> rows)
      : regions_(std::move(regions)), rows_(std::move(rows)) {
    if (regions_.empty()) throw ValidationError("participation matrix needs at least one region");
    if (rows_.empty()) throw ValidationError("participation matrix needs at least one device");
    validate(std::span<const RegionSpec>(regions_));
    std::set<std::string_view> ids;
    for (const auto& dev : rows_) {
      if (!ids.insert(dev.id).second) throw ValidationError("duplicate device id '" + dev.id + "'");
      if (dev.participation.size() != regions_.size()) {
        throw ValidationError("device '" + dev.id + "': participation has " +
                              std::to_string(dev.participation.size()) + " entries, expected " +
                              std::to_string(regions_.size()));
      }
      double sum = 0.0;
      for (double p : dev.participation) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
          throw ValidationError("device '" + dev.id + "': participation entries must lie in [0, 1]");
        }
        sum += p;
      }
      if (sum > 1.0 + 1e-6) {
        throw ValidationError("device '" + dev.id + "': participation sums to more than 1");
      }
    }
  }

  const std::vector<RegionSpec>& regions() const { return regions_; }
  const std::vector<DeviceGeometry>& rows() const { return rows_; }
  std::size_t n_devices() const { return rows_.size(); }
  std::size_t n_regions() const { return regions_.size(); }

  std::vector<std::string> region_names() const {
    std::vector<std::string> names;
    names.reserve(regions_.size());
    for (const auto& r : regions_) names.push_back(r.name);
    return names;
  }

  std::optional<std::size_t> region_index(std::string_view name) const {
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      if (regions_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> device_index(std::string_view id) const {
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      if (rows_[j].id == id) return j;
    }
    return std::nullopt;
  }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(rows_.size(), regions_.size());
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      for (std::size_t i = 0; i < regions_.size(); ++i) m(j, i) = rows_[j].participation[i];
    }
    return m;
  }

  // Rows at the given indices, in the given order.
  ParticipationMatrix subset(std::span<const std::size_t> indices) const {
    std::vector<DeviceGeometry> picked;
    picked.reserve(indices.size());
    for (auto j : indices) picked.push_back(rows_.at(j));
    return {regions_, std::move(picked)};
  }

 private:
  std::vector<RegionSpec> regions_;
  std::vector<DeviceGeometry> rows_;
};

struct QtlsDistribution {
  std::string device_id;
  double inv_q_mean = 0.0;
  double inv_q_stderr = 0.0;
  std::size_t n_samples = 0;
};

inline void validate(const QtlsDistribution& d) {
  if (!(std::isfinite(d.inv_q_mean) && d.inv_q_mean > 0.0)) {
    throw ValidationError("device '" + d.device_id + "': inv_q_mean must be positive");
  }
  if (!(std::isfinite(d.inv_q_stderr) && d.inv_q_stderr >= 0.0)) {
    throw ValidationError("device '" + d.device_id + "': inv_q_stderr must be non-negative");
  }
}

struct LossVector {
  std::vector<std::string> regions;
  std::vector<double> values;
  LossBasis basis = LossBasis::LossFactor;
};

inline void validate(const LossVector& x) {
  if (x.regions.size() != x.values.size()) {
    throw ValidationError("loss vector: region/value count mismatch");
  }
  for (double v : x.values) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("loss vector values must be finite and >= 0");
  }
}

// Q_TLS from low- and high-power internal Q: the power-independent loss
// (high power) is removed from the total loss (low power).
inline double q_tls_from_power_sweep(double q_low, double q_high) {
  if (!(q_low > 0.0) || !(q_high > 0.0) || std::isnan(q_low) || std::isnan(q_high)) {
    throw ValidationError("quality factors must be positive");
  }
  if (q_low >= q_high) throw NumericalError("non-positive TLS loss");
  return 1.0 / (1.0 / q_low - 1.0 / q_high);
}

// Per-region inverse-Q contributions P_i * x_i.
inline std::vector<double> decompose_losses(std::span<const double> p_row, std::span<const double> x) {
  if (p_row.size() != x.size()) {
    throw ValidationError("participation row and loss vector differ in length");
  }
  std::vector<double> terms(p_row.size());
  for (std::size_t i = 0; i < p_row.size(); ++i) {
    if (x[i] < 0.0 || !std::isfinite(x[i])) throw ValidationError("loss factors must be finite and >= 0");
    terms[i] = p_row[i] * x[i];
  }
  return terms;
}

inline std::vector<double> decompose_losses(std::span<const double> p_row, const LossVector& x) {
  if (x.basis != LossBasis::LossFactor) throw ValidationError("decompose_losses expects loss factors");
  return decompose_losses(p_row, std::span<const double>(x.values));
}

// Summed in index order; decompose_losses followed by the same left-to-right
// sum gives the identical double.
inline double inverse_q(std::span<const double> p_row, std::span<const double> x) {
  double total = 0.0;
  for (double term : decompose_losses(p_row, x)) total += term;
  return total;
}

inline double q_tls_forward(std::span<const double> p_row, std::span<const double> x) {
  const double inv = inverse_q(p_row, x);
  if (!(inv > 0.0)) throw NumericalError("lossless model");
  return 1.0 / inv;
}

inline double q_tls_forward(std::span<const double> p_row, const LossVector& x) {
  if (x.basis != LossBasis::LossFactor) throw ValidationError("q_tls_forward expects loss factors");
  return q_tls_forward(p_row, std::span<const double>(x.values));
}

// Multiplier s with loss_factor = s * tan_delta.
inline double tangent_to_factor_scale(const RegionSpec& region) {
  validate(region);
  switch (region.kind) {
    case RegionKind::InterfaceParallel:
      return (*region.t_assumed / *region.t_nom) * (region.eps_assumed / region.eps_nom);
    case RegionKind::InterfacePerpendicular:
      return (*region.t_assumed / *region.t_nom) * (region.eps_nom / region.eps_assumed);
    case RegionKind::Bulk:
      return 1.0;
  }
  return 1.0;
}

inline double loss_factor_from_tangent(const RegionSpec& region, double tan_delta) {
  if (!(tan_delta >= 0.0) || !std::isfinite(tan_delta)) throw ValidationError("loss tangent must be >= 0");
  return tangent_to_factor_scale(region) * tan_delta;
}

inline double tangent_from_loss_factor(const RegionSpec& region, double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("loss factor must be >= 0");
  return x / tangent_to_factor_scale(region);
}

inline LossVector to_basis(const LossVector& v, std::span<const RegionSpec> regions, LossBasis target) {
  validate(v);
  if (v.basis == target) return v;
  if (v.regions.size() != regions.size()) throw ValidationError("loss vector and region set differ in length");
  LossVector out{v.regions, {}, target};
  out.values.reserve(v.values.size());
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].name != v.regions[i]) {
      throw ValidationError("loss vector region '" + v.regions[i] + "' does not match '" + regions[i].name + "'");
    }
    out.values.push_back(target == LossBasis::LossFactor ? loss_factor_from_tangent(regions[i], v.values[i])
                                                         : tangent_from_loss_factor(regions[i], v.values[i]));
  }
  return out;
}

}  // namespace lossfit
