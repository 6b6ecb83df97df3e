#pragma once

// Dataset files, result reports (JSON / CSV) and input digests.
//
// Dataset schema (JSON):
//   participation_units  "fraction" | "percent"   (required)
//   regions      [{name, kind, t_nom_nm, eps_nom, t_assumed_nm, eps_assumed}]
//                kind: "interface_perpendicular" | "interface_parallel" | "bulk"
//   devices      [{id, w_um?, g_um?, d_um?, etch_style?, participation: [...]}]
//   measurements [{device_id, q_low: [...], q_high: [...]} | {device_id?, samples_csv}]   (optional)
//   distributions [{device_id, inv_q_mean, inv_q_stderr, n_samples}]                       (optional)
//   metadata     {...}                                                                      (optional)
//
// A samples_csv path is resolved against the dataset's directory and holds
// rows "device_id,q_low,q_high"; either Q cell may be empty.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "lossfit/design.hpp"
#include "lossfit/errors.hpp"
#include "lossfit/model.hpp"
#include "lossfit/simexp.hpp"
#include "lossfit/solver.hpp"
#include "lossfit/uncertainty.hpp"

namespace lossfit::io {

using nlohmann::json;
namespace fs = std::filesystem;

enum class ReportFormat { Json, Csv };

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("cannot format number");
  return {buf.data(), end};
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// FNV-1a 64-bit content hash, rendered as "fnv1a64:<16 hex digits>".
inline std::string digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- enums

inline std::string to_string(RegionKind k) {
  switch (k) {
    case RegionKind::InterfacePerpendicular: return "interface_perpendicular";
    case RegionKind::InterfaceParallel: return "interface_parallel";
    case RegionKind::Bulk: return "bulk";
  }
  return "bulk";
}

inline RegionKind region_kind_from(std::string_view s, const std::string& where) {
  if (s == "interface_perpendicular") return RegionKind::InterfacePerpendicular;
  if (s == "interface_parallel") return RegionKind::InterfaceParallel;
  if (s == "bulk") return RegionKind::Bulk;
  throw ValidationError(where + ".kind: unknown region kind '" + std::string(s) + "'");
}

inline std::string to_string(EtchStyle e) {
  switch (e) {
    case EtchStyle::Isotropic: return "isotropic";
    case EtchStyle::Anisotropic: return "anisotropic";
    case EtchStyle::Planar: return "planar";
    case EtchStyle::Suspended: return "suspended";
  }
  return "planar";
}

inline EtchStyle etch_style_from(std::string_view s, const std::string& where) {
  if (s == "isotropic") return EtchStyle::Isotropic;
  if (s == "anisotropic") return EtchStyle::Anisotropic;
  if (s == "planar") return EtchStyle::Planar;
  if (s == "suspended") return EtchStyle::Suspended;
  throw ValidationError(where + ".etch_style: unknown etch style '" + std::string(s) + "'");
}

inline std::string to_string(LossBasis b) { return b == LossBasis::LossFactor ? "loss_factor" : "loss_tangent"; }

inline LossBasis basis_from(std::string_view s, const std::string& where) {
  if (s == "loss_factor") return LossBasis::LossFactor;
  if (s == "loss_tangent") return LossBasis::LossTangent;
  throw ValidationError(where + ".basis: expected 'loss_factor' or 'loss_tangent', got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- field access

namespace detail {

inline const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ValidationError(where + ": expected a number");
  return v.get<double>();
}

inline std::string text(const json& v, const std::string& where) {
  if (!v.is_string()) throw ValidationError(where + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<double> numbers(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(number(v[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

inline std::optional<double> optional_number(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return number(obj.at(key), where + "." + key);
}

inline json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json interval_array(const std::vector<stats::Interval>& v) {
  json arr = json::array();
  for (const auto& ci : v) arr.push_back({ci.low, ci.high});
  return arr;
}

inline std::vector<stats::Interval> intervals_from(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of [low, high] pairs");
  std::vector<stats::Interval> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto pair = numbers(v[k], where + "[" + std::to_string(k) + "]");
    if (pair.size() != 2) throw ValidationError(where + "[" + std::to_string(k) + "]: expected [low, high]");
    out.push_back({pair[0], pair[1]});
  }
  return out;
}

inline json parse_json(const std::string& content, const fs::path& path) {
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------- regions

inline json to_json(const RegionSpec& r) {
  json j{{"name", r.name}, {"kind", to_string(r.kind)}, {"eps_nom", r.eps_nom}, {"eps_assumed", r.eps_assumed}};
  if (r.t_nom) j["t_nom_nm"] = *r.t_nom;
  if (r.t_assumed) j["t_assumed_nm"] = *r.t_assumed;
  return j;
}

inline RegionSpec region_from_json(const json& j, const std::string& where) {
  RegionSpec r;
  r.name = detail::text(detail::require(j, "name", where), where + ".name");
  r.kind = region_kind_from(detail::text(detail::require(j, "kind", where), where + ".kind"), where);
  r.eps_nom = detail::number(detail::require(j, "eps_nom", where), where + ".eps_nom");
  r.eps_assumed = detail::number(detail::require(j, "eps_assumed", where), where + ".eps_assumed");
  if (is_interface(r.kind)) {
    r.t_nom = detail::number(detail::require(j, "t_nom_nm", where), where + ".t_nom_nm");
    r.t_assumed = detail::number(detail::require(j, "t_assumed_nm", where), where + ".t_assumed_nm");
  }
  try {
    validate(r);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return r;
}

inline std::vector<RegionSpec> regions_from_json(const json& arr, const std::string& where = "regions") {
  if (!arr.is_array() || arr.empty()) throw ValidationError(where + ": expected a non-empty array");
  std::vector<RegionSpec> regions;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    regions.push_back(region_from_json(arr[k], where + "[" + std::to_string(k) + "]"));
  }
  validate(std::span<const RegionSpec>(regions));
  return regions;
}

// Reads the "regions" array of any dataset-like file.
inline std::vector<RegionSpec> load_regions(const fs::path& path) {
  const auto j = detail::parse_json(read_file(path), path);
  return regions_from_json(detail::require(j, "regions", path.string()));
}

// ---------------------------------------------------------------- dataset

struct Dataset {
  std::vector<RegionSpec> regions;
  std::vector<DeviceGeometry> devices;
  std::vector<MeasurementSet> measurements;
  std::vector<QtlsDistribution> distributions;
  json metadata = json::object();
  std::string digest;  // of the file the dataset was loaded from

  ParticipationMatrix matrix() const { return {regions, devices}; }

  bool has_statistics() const { return !measurements.empty() || !distributions.empty(); }

  // One distribution per device in device order: pre-summarised entries win,
  // otherwise the device's measurement set is summarised.
  std::vector<QtlsDistribution> device_distributions(const WarningSink& warnings = {}) const {
    std::vector<QtlsDistribution> out;
    for (const auto& dev : devices) {
      auto d = std::find_if(distributions.begin(), distributions.end(),
                            [&](const QtlsDistribution& q) { return q.device_id == dev.id; });
      if (d != distributions.end()) {
        out.push_back(*d);
        continue;
      }
      auto m = std::find_if(measurements.begin(), measurements.end(),
                            [&](const MeasurementSet& s) { return s.device_id == dev.id; });
      if (m == measurements.end()) throw ValidationError("device '" + dev.id + "' has no measurements or distribution");
      out.push_back(summarize(*m, warnings));
    }
    return out;
  }
};

namespace detail {

inline void append_csv_samples(const fs::path& csv_path, const std::optional<std::string>& only_device,
                               std::map<std::string, MeasurementSet>& sets, std::vector<std::string>& order) {
  std::istringstream in(read_file(csv_path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 3) throw ValidationError(where + ": expected 3 columns device_id,q_low,q_high");
    if (line_no == 1 && cells[0] == "device_id") continue;
    if (only_device && cells[0] != *only_device) {
      throw ValidationError(where + ": row for '" + cells[0] + "' in a file bound to '" + *only_device + "'");
    }
    auto parse = [&](const std::string& s, const char* col) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ValidationError(where + ": column " + col + " is not a number");
      }
      return v;
    };
    auto [it, inserted] = sets.try_emplace(cells[0]);
    if (inserted) {
      it->second.device_id = cells[0];
      order.push_back(cells[0]);
    }
    if (auto v = parse(cells[1], "q_low")) it->second.q_low_samples.push_back(*v);
    if (auto v = parse(cells[2], "q_high")) it->second.q_high_samples.push_back(*v);
  }
}

}  // namespace detail

inline Dataset dataset_from_json(const json& j, const fs::path& base_dir = {}) {
  if (!j.is_object()) throw ValidationError("dataset: expected a JSON object");
  Dataset ds;
  if (!j.contains("participation_units")) {
    throw ValidationError("dataset: missing field 'participation_units' (\"fraction\" or \"percent\")");
  }
  const auto units = detail::text(j.at("participation_units"), "participation_units");
  double unit_scale = 1.0;
  if (units == "percent") {
    unit_scale = 0.01;
  } else if (units != "fraction") {
    throw ValidationError("participation_units: expected \"fraction\" or \"percent\", got \"" + units + "\"");
  }

  ds.regions = regions_from_json(detail::require(j, "regions", "dataset"));

  const auto& devices = detail::require(j, "devices", "dataset");
  if (!devices.is_array() || devices.empty()) throw ValidationError("devices: expected a non-empty array");
  for (std::size_t k = 0; k < devices.size(); ++k) {
    const auto& d = devices[k];
    std::string where = "devices[" + std::to_string(k) + "]";
    DeviceGeometry dev;
    dev.id = detail::text(detail::require(d, "id", where), where + ".id");
    where += " ('" + dev.id + "')";
    dev.w = detail::optional_number(d, "w_um", where);
    dev.g = detail::optional_number(d, "g_um", where);
    dev.d = detail::optional_number(d, "d_um", where);
    if (d.contains("etch_style") && !d.at("etch_style").is_null()) {
      dev.etch_style = etch_style_from(detail::text(d.at("etch_style"), where + ".etch_style"), where);
    }
    dev.participation = detail::numbers(detail::require(d, "participation", where), where + ".participation");
    if (dev.participation.size() != ds.regions.size()) {
      throw ValidationError(where + ".participation: has " + std::to_string(dev.participation.size()) +
                            " entries, expected " + std::to_string(ds.regions.size()) + " (one per region)");
    }
    for (auto& p : dev.participation) p *= unit_scale;
    ds.devices.push_back(std::move(dev));
  }
  try {
    (void)ds.matrix();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("devices: ") + e.what());
  }

  auto known_device = [&](const std::string& id, const std::string& where) {
    if (std::none_of(ds.devices.begin(), ds.devices.end(), [&](const DeviceGeometry& g) { return g.id == id; })) {
      throw ValidationError(where + ": references undefined device '" + id + "'");
    }
  };

  if (j.contains("measurements")) {
    const auto& arr = j.at("measurements");
    if (!arr.is_array()) throw ValidationError("measurements: expected an array");
    std::map<std::string, MeasurementSet> sets;
    std::vector<std::string> order;
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto& m = arr[k];
      const std::string where = "measurements[" + std::to_string(k) + "]";
      std::optional<std::string> device;
      if (m.contains("device_id")) device = detail::text(m.at("device_id"), where + ".device_id");
      if (m.contains("samples_csv")) {
        const fs::path csv = base_dir / detail::text(m.at("samples_csv"), where + ".samples_csv");
        detail::append_csv_samples(csv, device, sets, order);
        continue;
      }
      if (!device) throw ValidationError(where + ": missing field 'device_id'");
      auto [it, inserted] = sets.try_emplace(*device);
      if (inserted) {
        it->second.device_id = *device;
        order.push_back(*device);
      }
      auto low = detail::numbers(detail::require(m, "q_low", where), where + ".q_low");
      auto high = detail::numbers(detail::require(m, "q_high", where), where + ".q_high");
      it->second.q_low_samples.insert(it->second.q_low_samples.end(), low.begin(), low.end());
      it->second.q_high_samples.insert(it->second.q_high_samples.end(), high.begin(), high.end());
    }
    for (const auto& id : order) {
      known_device(id, "measurements");
      ds.measurements.push_back(std::move(sets.at(id)));
    }
  }

  if (j.contains("distributions")) {
    const auto& arr = j.at("distributions");
    if (!arr.is_array()) throw ValidationError("distributions: expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto& d = arr[k];
      const std::string where = "distributions[" + std::to_string(k) + "]";
      QtlsDistribution q;
      q.device_id = detail::text(detail::require(d, "device_id", where), where + ".device_id");
      q.inv_q_mean = detail::number(detail::require(d, "inv_q_mean", where), where + ".inv_q_mean");
      q.inv_q_stderr = detail::number(detail::require(d, "inv_q_stderr", where), where + ".inv_q_stderr");
      if (d.contains("n_samples")) q.n_samples = d.at("n_samples").get<std::size_t>();
      known_device(q.device_id, where);
      try {
        validate(q);
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
      }
      ds.distributions.push_back(q);
    }
  }

  if (j.contains("metadata")) ds.metadata = j.at("metadata");
  return ds;
}

inline Dataset load_dataset(const fs::path& path) {
  const auto content = read_file(path);
  auto ds = dataset_from_json(detail::parse_json(content, path), path.parent_path());
  ds.digest = digest(content);
  return ds;
}

// Always written in fraction units with measurements inlined.
inline json to_json(const Dataset& ds) {
  json j;
  j["participation_units"] = "fraction";
  j["regions"] = json::array();
  for (const auto& r : ds.regions) j["regions"].push_back(to_json(r));
  j["devices"] = json::array();
  for (const auto& d : ds.devices) {
    json dj{{"id", d.id}, {"participation", d.participation}};
    if (d.w) dj["w_um"] = *d.w;
    if (d.g) dj["g_um"] = *d.g;
    if (d.d) dj["d_um"] = *d.d;
    if (d.etch_style) dj["etch_style"] = to_string(*d.etch_style);
    j["devices"].push_back(dj);
  }
  if (!ds.measurements.empty()) {
    j["measurements"] = json::array();
    for (const auto& m : ds.measurements) {
      j["measurements"].push_back({{"device_id", m.device_id}, {"q_low", m.q_low_samples}, {"q_high", m.q_high_samples}});
    }
  }
  if (!ds.distributions.empty()) {
    j["distributions"] = json::array();
    for (const auto& d : ds.distributions) {
      j["distributions"].push_back({{"device_id", d.device_id},
                                    {"inv_q_mean", d.inv_q_mean},
                                    {"inv_q_stderr", d.inv_q_stderr},
                                    {"n_samples", d.n_samples}});
    }
  }
  if (!ds.metadata.empty()) j["metadata"] = ds.metadata;
  return j;
}

inline void save_dataset(const Dataset& ds, const fs::path& path) { write_file(path, to_json(ds).dump(2) + "\n"); }

// ---------------------------------------------------------------- loss vectors

inline json to_json(const LossVector& v) {
  return {{"regions", v.regions}, {"basis", to_string(v.basis)}, {"values", v.values}};
}

inline LossVector loss_vector_from_json(const json& j, const std::string& where = "loss_vector") {
  LossVector v;
  const auto& regions = detail::require(j, "regions", where);
  if (!regions.is_array()) throw ValidationError(where + ".regions: expected an array of names");
  for (const auto& r : regions) v.regions.push_back(detail::text(r, where + ".regions"));
  v.basis = basis_from(detail::text(detail::require(j, "basis", where), where + ".basis"), where);
  v.values = detail::numbers(detail::require(j, "values", where), where + ".values");
  try {
    validate(v);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return v;
}

inline LossVector load_loss_vector(const fs::path& path) {
  return loss_vector_from_json(detail::parse_json(read_file(path), path), path.string());
}

// ---------------------------------------------------------------- reports

// Provenance stamped into every report.
struct ReportContext {
  std::string command;
  std::string input_digest;
};

namespace detail {

inline json header(std::string_view kind, const ReportContext& ctx) {
  json j{{"kind", kind}};
  if (!ctx.command.empty()) j["command"] = ctx.command;
  if (!ctx.input_digest.empty()) j["input_digest"] = ctx.input_digest;
  return j;
}

inline std::string csv_preamble(const ReportContext& ctx) {
  std::string s;
  if (!ctx.command.empty()) s += "# command: " + ctx.command + "\n";
  if (!ctx.input_digest.empty()) s += "# input_digest: " + ctx.input_digest + "\n";
  return s;
}

}  // namespace detail

inline json to_json(const ExtractionResult& r, const ReportContext& ctx = {},
                    const std::vector<RegionSpec>* regions = nullptr) {
  json j = detail::header("extraction", ctx);
  j["regions"] = r.point.regions;
  j["basis"] = to_string(r.point.basis);
  j["seed"] = r.seed;
  j["n_trials"] = r.n_trials;
  j["point"] = r.point.values;
  j["mean"] = r.mean;
  j["ci95"] = detail::interval_array(r.ci95);
  if (regions && regions->size() == r.point.regions.size()) {
    json t;
    std::vector<double> point, mean;
    std::vector<stats::Interval> ci;
    for (std::size_t i = 0; i < regions->size(); ++i) {
      const auto& reg = (*regions)[i];
      point.push_back(tangent_from_loss_factor(reg, r.point.values[i]));
      mean.push_back(tangent_from_loss_factor(reg, r.mean[i]));
      ci.push_back({tangent_from_loss_factor(reg, r.ci95[i].low), tangent_from_loss_factor(reg, r.ci95[i].high)});
    }
    j["loss_tangent"] = {{"point", point}, {"mean", mean}, {"ci95", detail::interval_array(ci)}};
  }
  json ens = json::array();
  for (Eigen::Index t = 0; t < r.ensemble.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index i = 0; i < r.ensemble.cols(); ++i) row.push_back(r.ensemble(t, i));
    ens.push_back(std::move(row));
  }
  j["ensemble"] = std::move(ens);
  return j;
}

inline ExtractionResult extraction_from_json(const json& j, const std::string& where = "extraction") {
  ExtractionResult r;
  for (const auto& name : detail::require(j, "regions", where)) r.point.regions.push_back(detail::text(name, where));
  r.point.basis = basis_from(detail::text(detail::require(j, "basis", where), where + ".basis"), where);
  r.point.values = detail::numbers(detail::require(j, "point", where), where + ".point");
  r.mean = detail::numbers(detail::require(j, "mean", where), where + ".mean");
  r.ci95 = detail::intervals_from(detail::require(j, "ci95", where), where + ".ci95");
  r.seed = detail::require(j, "seed", where).get<std::uint64_t>();
  r.n_trials = detail::require(j, "n_trials", where).get<std::size_t>();
  const auto& ens = detail::require(j, "ensemble", where);
  const auto n_regions = static_cast<Eigen::Index>(r.point.regions.size());
  if (!ens.is_array()) throw ValidationError(where + ".ensemble: expected an array");
  r.ensemble.resize(static_cast<Eigen::Index>(ens.size()), n_regions);
  for (std::size_t t = 0; t < ens.size(); ++t) {
    const auto row = detail::numbers(ens[t], where + ".ensemble[" + std::to_string(t) + "]");
    if (static_cast<Eigen::Index>(row.size()) != n_regions) {
      throw ValidationError(where + ".ensemble[" + std::to_string(t) + "]: wrong number of regions");
    }
    for (Eigen::Index i = 0; i < n_regions; ++i) r.ensemble(static_cast<Eigen::Index>(t), i) = row[static_cast<std::size_t>(i)];
  }
  if (r.point.values.size() != r.point.regions.size() || r.mean.size() != r.point.regions.size() ||
      r.ci95.size() != r.point.regions.size()) {
    throw ValidationError(where + ": per-region arrays differ in length");
  }
  return r;
}

inline ExtractionResult load_extraction(const fs::path& path) {
  return extraction_from_json(detail::parse_json(read_file(path), path), path.string());
}

// Histogram of each region's ensemble: region,bin_low,bin_high,count.
inline std::string to_csv(const ExtractionResult& r, const ReportContext& ctx = {}, std::size_t bins = 50) {
  std::string s = detail::csv_preamble(ctx) + "region,bin_low,bin_high,count\n";
  for (Eigen::Index i = 0; i < r.ensemble.cols(); ++i) {
    const auto col = r.ensemble.col(i);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    std::vector<std::size_t> counts(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (Eigen::Index t = 0; t < col.size(); ++t) {
      std::size_t b = width > 0.0 ? static_cast<std::size_t>((col(t) - lo) / width) : 0;
      ++counts[std::min(b, bins - 1)];
    }
    const std::size_t used = width > 0.0 ? bins : 1;
    for (std::size_t b = 0; b < used; ++b) {
      const double b_lo = lo + width * static_cast<double>(b);
      const double b_hi = width > 0.0 ? (b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1)) : hi;
      s += r.point.regions[static_cast<std::size_t>(i)] + "," + format_double(b_lo) + "," + format_double(b_hi) +
           "," + std::to_string(counts[b]) + "\n";
    }
  }
  return s;
}

inline json to_json(const WorstCaseCurve& c, const ReportContext& ctx = {}) {
  json j = detail::header("worst_case_curve", ctx);
  j["regions"] = c.regions;
  j["basis"] = to_string(c.basis);
  j["seed"] = c.seed;
  j["n_devices_grid"] = c.n_devices_grid;
  j["target"] = c.target;
  j["points"] = json::array();
  for (const auto& p : c.points) {
    j["points"].push_back({{"region", p.region}, {"n_devices", p.n_devices}, {"worst_low", p.worst_low},
                           {"worst_high", p.worst_high}});
  }
  j["repetitions"] = json::array();
  for (const auto& rec : c.repetitions) {
    json est = json::array();
    for (const auto& d : rec.estimated) {
      est.push_back({{"device_id", d.device_id}, {"inv_q_mean", d.inv_q_mean}, {"inv_q_stderr", d.inv_q_stderr},
                     {"n_samples", d.n_samples}});
    }
    j["repetitions"].push_back({{"n_devices", rec.n_devices}, {"repetition", rec.repetition}, {"estimated", est},
                                {"mean", rec.mean}, {"ci95", detail::interval_array(rec.ci95)}});
  }
  return j;
}

// One row per (region, N).
inline std::string to_csv(const WorstCaseCurve& c, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "region,n_devices,worst_low,worst_high\n";
  for (const auto& p : c.points) {
    s += p.region + "," + std::to_string(p.n_devices) + "," + format_double(p.worst_low) + "," +
         format_double(p.worst_high) + "\n";
  }
  return s;
}

inline json to_json(const ConditionReport& r, const ReportContext& ctx = {}) {
  json j = detail::header("condition", ctx);
  j["kappa"] = std::isfinite(r.kappa) ? json(r.kappa) : json("inf");
  j["singular_values"] = r.singular_values;
  j["rank_estimate"] = r.rank_estimate;
  return j;
}

inline std::string to_csv(const ConditionReport& r, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "index,singular_value\n";
  for (std::size_t k = 0; k < r.singular_values.size(); ++k) {
    s += std::to_string(k) + "," + format_double(r.singular_values[k]) + "\n";
  }
  s += "# kappa: " + format_double(r.kappa) + "\n";
  return s;
}

inline json to_json(const DesignSearchResult& r, const ReportContext& ctx = {}) {
  json j = detail::header("design_search", ctx);
  j["selected_ids"] = r.selected_ids;
  j["kappa"] = std::isfinite(r.kappa) ? json(r.kappa) : json("inf");
  j["evaluated"] = r.evaluated;
  j["ranked_alternatives"] = json::array();
  for (const auto& alt : r.ranked_alternatives) {
    j["ranked_alternatives"].push_back(
        {{"ids", alt.ids}, {"kappa", std::isfinite(alt.kappa) ? json(alt.kappa) : json("inf")}});
  }
  return j;
}

inline std::string to_csv(const DesignSearchResult& r, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "rank,kappa,ids\n";
  for (std::size_t k = 0; k < r.ranked_alternatives.size(); ++k) {
    const auto& alt = r.ranked_alternatives[k];
    std::string ids;
    for (const auto& id : alt.ids) ids += (ids.empty() ? "" : ";") + id;
    s += std::to_string(k + 1) + "," + format_double(alt.kappa) + "," + ids + "\n";
  }
  return s;
}

inline json to_json(const std::vector<QtlsDistribution>& table, const ReportContext& ctx = {}) {
  json j = detail::header("qtls_distributions", ctx);
  j["devices"] = json::array();
  for (const auto& d : table) {
    j["devices"].push_back({{"device_id", d.device_id}, {"inv_q_mean", d.inv_q_mean},
                            {"inv_q_stderr", d.inv_q_stderr}, {"n_samples", d.n_samples},
                            {"q_tls_mean", 1.0 / d.inv_q_mean}});
  }
  return j;
}

inline std::string to_csv(const std::vector<QtlsDistribution>& table, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "device_id,inv_q_mean,inv_q_stderr,n_samples\n";
  for (const auto& d : table) {
    s += d.device_id + "," + format_double(d.inv_q_mean) + "," + format_double(d.inv_q_stderr) + "," +
         std::to_string(d.n_samples) + "\n";
  }
  return s;
}

// Per-device decomposition of 1/Q into region contributions.
struct LossDecomposition {
  std::vector<std::string> regions;
  std::vector<std::string> device_ids;
  std::vector<std::vector<double>> contributions;  // [device][region]
  std::vector<double> inv_q_total;
};

inline json to_json(const LossDecomposition& d, const ReportContext& ctx = {}) {
  json j = detail::header("decomposition", ctx);
  j["regions"] = d.regions;
  j["devices"] = json::array();
  for (std::size_t k = 0; k < d.device_ids.size(); ++k) {
    j["devices"].push_back({{"device_id", d.device_ids[k]}, {"inv_q", d.contributions[k]},
                            {"inv_q_total", d.inv_q_total[k]}, {"q_tls", 1.0 / d.inv_q_total[k]}});
  }
  return j;
}

inline std::string to_csv(const LossDecomposition& d, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "device_id,region,inv_q\n";
  for (std::size_t k = 0; k < d.device_ids.size(); ++k) {
    for (std::size_t i = 0; i < d.regions.size(); ++i) {
      s += d.device_ids[k] + "," + d.regions[i] + "," + format_double(d.contributions[k][i]) + "\n";
    }
  }
  return s;
}

struct DevicePrediction {
  std::string device_id;
  QPrediction prediction;
};

inline json to_json(const std::vector<DevicePrediction>& preds, const ReportContext& ctx = {}) {
  json j = detail::header("prediction", ctx);
  j["devices"] = json::array();
  for (const auto& p : preds) {
    j["devices"].push_back({{"device_id", p.device_id}, {"q_mean", p.prediction.q_mean},
                            {"q_ci95", {p.prediction.q_ci95.low, p.prediction.q_ci95.high}},
                            {"n_trials_used", p.prediction.n_used}});
  }
  return j;
}

inline std::string to_csv(const std::vector<DevicePrediction>& preds, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "device_id,q_mean,q_ci95_low,q_ci95_high\n";
  for (const auto& p : preds) {
    s += p.device_id + "," + format_double(p.prediction.q_mean) + "," + format_double(p.prediction.q_ci95.low) +
         "," + format_double(p.prediction.q_ci95.high) + "\n";
  }
  return s;
}

inline json to_json(const std::vector<ProportionalityRow>& rows, const ReportContext& ctx = {}) {
  json j = detail::header("proportionality", ctx);
  j["devices"] = json::array();
  for (const auto& r : rows) {
    j["devices"].push_back({{"device_id", r.device_id}, {"d_um", detail::optional_to_json(r.d)},
                            {"ratio", detail::optional_to_json(r.ratio)}, {"flagged", r.flagged}});
  }
  return j;
}

inline std::string to_csv(const std::vector<ProportionalityRow>& rows, const ReportContext& ctx = {}) {
  std::string s = detail::csv_preamble(ctx) + "device_id,d_um,ratio,flagged\n";
  for (const auto& r : rows) {
    s += r.device_id + "," + (r.d ? format_double(*r.d) : "") + "," + (r.ratio ? format_double(*r.ratio) : "") + "," +
         (r.flagged ? "true" : "false") + "\n";
  }
  return s;
}

inline ReportFormat format_for(const fs::path& path) {
  return path.extension() == ".csv" ? ReportFormat::Csv : ReportFormat::Json;
}

template <typename Result>
void write_report(const Result& result, const fs::path& path, ReportFormat format, const ReportContext& ctx = {}) {
  try {
    if (format == ReportFormat::Csv) {
      write_file(path, to_csv(result, ctx));
    } else {
      write_file(path, to_json(result, ctx).dump(2) + "\n");
    }
  } catch (const std::ios_base::failure& e) {
    throw std::runtime_error("cannot write '" + path.string() + "': " + e.what());
  }
}

}  // namespace lossfit::io
