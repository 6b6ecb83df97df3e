// lossfit command-line front end.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lossfit/lossfit.hpp"

using namespace lossfit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kNumerical = 3 };

struct Common {
  std::string format = "text";
  std::size_t threads = 1;
  bool json() const { return format == "json"; }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--format", c.format, "stdout format")->check(CLI::IsMember({"text", "json"}));
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

void print_warning(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

void emit(const Common& c, const json& j, const std::string& text) {
  if (c.json()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

std::string num(double v) { return io::format_double(v); }

template <typename Result>
void maybe_write(const Result& r, const std::string& out, const io::ReportContext& ctx) {
  if (out.empty()) return;
  io::write_report(r, out, io::format_for(out), ctx);
}

// Expresses `v` as loss factors for `regions`, checking names and order.
LossVector as_factors(const LossVector& v, const std::vector<RegionSpec>& regions, const std::string& what) {
  if (v.regions.size() != regions.size()) throw ValidationError(what + ": region count does not match dataset");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (v.regions[i] != regions[i].name) {
      throw ValidationError(what + ": region '" + v.regions[i] + "' where dataset has '" + regions[i].name + "'");
    }
  }
  return to_basis(v, regions, LossBasis::LossFactor);
}

SamplingSpace sampling_from(const std::string& s) {
  return s == "q" ? SamplingSpace::Q : SamplingSpace::InverseQ;
}

// ------------------------------------------------------------------ extract

struct ExtractArgs {
  Common c;
  std::string dataset, out, sampling = "inverse-q";
  std::size_t trials = 10000;
  std::uint64_t seed = 0;
};

int run_extract(const ExtractArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  const auto p = ds.matrix();
  const auto dists = ds.device_distributions(print_warning);
  ExtractOptions opt;
  opt.n_trials = a.trials;
  opt.seed = a.seed;
  opt.threads = a.c.threads;
  opt.sampling = sampling_from(a.sampling);
  const auto r = extract_mc(p, dists, opt);
  const io::ReportContext ctx{"extract", ds.digest};
  if (!a.out.empty()) {
    if (io::format_for(a.out) == io::ReportFormat::Csv) {
      io::write_file(a.out, io::to_csv(r, ctx));
    } else {
      io::write_file(a.out, io::to_json(r, ctx, &ds.regions).dump(2) + "\n");
    }
  }
  auto j = io::to_json(r, ctx, &ds.regions);
  j.erase("ensemble");
  std::string text = "region  x_point  x_mean  x_ci95_low  x_ci95_high  tan_mean  tan_ci95_low  tan_ci95_high\n";
  for (std::size_t i = 0; i < p.n_regions(); ++i) {
    const auto& reg = ds.regions[i];
    text += reg.name + "  " + num(r.point.values[i]) + "  " + num(r.mean[i]) + "  " + num(r.ci95[i].low) + "  " +
            num(r.ci95[i].high) + "  " + num(tangent_from_loss_factor(reg, r.mean[i])) + "  " +
            num(tangent_from_loss_factor(reg, r.ci95[i].low)) + "  " +
            num(tangent_from_loss_factor(reg, r.ci95[i].high)) + "\n";
  }
  emit(a.c, j, text);
  return kOk;
}

// ------------------------------------------------------------------ predict

struct PredictArgs {
  Common c;
  std::string dataset, extraction, out;
  std::vector<std::string> devices;
};

int run_predict(const PredictArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  const auto p = ds.matrix();
  const auto r = io::load_extraction(a.extraction);
  if (r.point.regions != p.region_names()) throw ValidationError("extraction regions do not match dataset regions");
  std::vector<std::string> ids = a.devices;
  if (ids.empty()) {
    for (const auto& dev : p.rows()) ids.push_back(dev.id);
  }
  std::vector<io::DevicePrediction> preds;
  for (const auto& id : ids) {
    const auto j = p.device_index(id);
    if (!j) throw ValidationError("unknown device '" + id + "'");
    preds.push_back({id, predict_q_mc(p.rows()[*j].participation, r, print_warning)});
  }
  const io::ReportContext ctx{"predict", io::digest(io::read_file(a.extraction))};
  maybe_write(preds, a.out, ctx);
  std::string text = "device  q_mean  q_ci95_low  q_ci95_high\n";
  for (const auto& pr : preds) {
    text += pr.device_id + "  " + num(pr.prediction.q_mean) + "  " + num(pr.prediction.q_ci95.low) + "  " +
            num(pr.prediction.q_ci95.high) + "\n";
  }
  emit(a.c, io::to_json(preds, ctx), text);
  return kOk;
}

// ------------------------------------------------------------------ decompose

struct DecomposeArgs {
  Common c;
  std::string dataset, loss_vector, out;
};

int run_decompose(const DecomposeArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  const auto p = ds.matrix();
  const auto x = as_factors(io::load_loss_vector(a.loss_vector), ds.regions, a.loss_vector);
  io::LossDecomposition d;
  d.regions = p.region_names();
  for (const auto& dev : p.rows()) {
    d.device_ids.push_back(dev.id);
    d.contributions.push_back(decompose_losses(dev.participation, x.values));
    d.inv_q_total.push_back(inverse_q(dev.participation, x.values));
  }
  const io::ReportContext ctx{"decompose", ds.digest};
  maybe_write(d, a.out, ctx);
  std::string text = "device";
  for (const auto& name : d.regions) text += "  " + name;
  text += "  Q_TLS\n";
  for (std::size_t k = 0; k < d.device_ids.size(); ++k) {
    text += d.device_ids[k];
    for (double v : d.contributions[k]) text += "  " + num(v);
    text += "  " + (d.inv_q_total[k] > 0.0 ? num(1.0 / d.inv_q_total[k]) : std::string("inf")) + "\n";
  }
  emit(a.c, io::to_json(d, ctx), text);
  return kOk;
}

// ------------------------------------------------------------------ condition

struct ConditionArgs {
  Common c;
  std::string dataset, out;
};

int run_condition(const ConditionArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  const auto r = condition_number(ds.matrix());
  const io::ReportContext ctx{"condition", ds.digest};
  maybe_write(r, a.out, ctx);
  std::string text = "kappa " + num(r.kappa) + "\nrank_estimate " + std::to_string(r.rank_estimate) +
                     "\nsingular_values";
  for (double s : r.singular_values) text += " " + num(s);
  emit(a.c, io::to_json(r, ctx), text + "\n");
  return kOk;
}

// ------------------------------------------------------------------ design-search

struct DesignArgs {
  Common c;
  std::string library, out;
  std::size_t k = 4, top = 10;
};

int run_design(const DesignArgs& a) {
  const auto ds = io::load_dataset(a.library);
  DesignSearchOptions opt;
  opt.top_m = a.top;
  opt.threads = a.c.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : a.c.threads;
  const auto r = search_min_condition(ds.matrix(), a.k, opt);
  const io::ReportContext ctx{"design-search", ds.digest};
  maybe_write(r, a.out, ctx);
  std::string text = "evaluated " + std::to_string(r.evaluated) + " subsets\nrank  kappa  devices\n";
  for (std::size_t i = 0; i < r.ranked_alternatives.size(); ++i) {
    const auto& alt = r.ranked_alternatives[i];
    text += std::to_string(i + 1) + "  " + num(alt.kappa) + " ";
    for (const auto& id : alt.ids) text += " " + id;
    text += "\n";
  }
  emit(a.c, io::to_json(r, ctx), text);
  return kOk;
}

// ------------------------------------------------------------------ simulate

struct SimulateArgs {
  Common c;
  std::string config, out, basis = "loss_factor", sampling = "inverse-q";
  std::optional<std::uint64_t> seed;
};

int run_simulate(const SimulateArgs& a) {
  const fs::path cfg_path(a.config);
  const std::string cfg_text = io::read_file(cfg_path);
  json cfg;
  try {
    cfg = json::parse(cfg_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(a.config + ": " + e.what());
  }
  if (!cfg.is_object()) throw ValidationError(a.config + ": expected an object");
  const fs::path base = cfg_path.parent_path();
  const auto& ds_ref = io::detail::require(cfg, "dataset", a.config);
  const auto ds = io::load_dataset(base / io::detail::text(ds_ref, a.config + ".dataset"));

  LossVector target;
  if (cfg.contains("target")) {
    target = io::loss_vector_from_json(cfg["target"], a.config + ".target");
  } else {
    const auto& t = io::detail::require(cfg, "target_file", a.config);
    target = io::load_loss_vector(base / io::detail::text(t, a.config + ".target_file"));
  }

  SimExpConfig sc{ds.matrix(), as_factors(target, ds.regions, "target")};
  if (cfg.contains("n_devices_grid")) {
    sc.n_devices_grid.clear();
    for (const auto& n : cfg["n_devices_grid"]) {
      if (!n.is_number_unsigned()) throw ValidationError(a.config + ".n_devices_grid: expected positive integers");
      sc.n_devices_grid.push_back(n.get<std::size_t>());
    }
  }
  if (cfg.contains("relative_sd")) sc.relative_sd = io::detail::number(cfg["relative_sd"], a.config + ".relative_sd");
  for (auto [key, field] : {std::pair{"n_repetitions", &sc.n_repetitions}, std::pair{"mc_trials", &sc.mc_trials}}) {
    if (!cfg.contains(key)) continue;
    if (!cfg[key].is_number_unsigned()) throw ValidationError(a.config + "." + key + ": expected a positive integer");
    *field = cfg[key].get<std::size_t>();
  }
  if (cfg.contains("seed")) sc.seed = cfg["seed"].get<std::uint64_t>();
  if (a.seed) sc.seed = *a.seed;
  sc.threads = a.c.threads;
  sc.sampling = sampling_from(a.sampling);

  auto curve = run_simulated_experiment(sc);
  if (a.basis == "loss_tangent") curve = to_tangent_basis(std::move(curve), ds.regions);
  const io::ReportContext ctx{"simulate", io::digest(cfg_text + ds.digest)};
  maybe_write(curve, a.out, ctx);

  std::string text = "basis " + io::to_string(curve.basis) + "\nregion  N  worst_low  worst_high  target\n";
  for (std::size_t i = 0; i < curve.regions.size(); ++i) {
    for (std::size_t g = 0; g < curve.n_devices_grid.size(); ++g) {
      const auto& pt = curve.at(i, g);
      text += pt.region + "  " + std::to_string(pt.n_devices) + "  " + num(pt.worst_low) + "  " +
              num(pt.worst_high) + "  " + num(curve.target[i]) + "\n";
    }
  }
  auto j = io::to_json(curve, ctx);
  j.erase("repetitions");
  emit(a.c, j, text);
  return kOk;
}

// ------------------------------------------------------------------ convert

struct ConvertArgs {
  Common c;
  std::string regions, direction;
  std::vector<double> values;
};

int run_convert(const ConvertArgs& a) {
  const auto regions = io::load_regions(a.regions);
  if (a.values.size() != regions.size()) {
    throw ValidationError("expected " + std::to_string(regions.size()) + " values, got " +
                          std::to_string(a.values.size()));
  }
  const bool to_factor = a.direction == "tangent-to-factor";
  std::vector<double> out;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    names.push_back(regions[i].name);
    out.push_back(to_factor ? loss_factor_from_tangent(regions[i], a.values[i])
                            : tangent_from_loss_factor(regions[i], a.values[i]));
  }
  const LossVector v{names, out, to_factor ? LossBasis::LossFactor : LossBasis::LossTangent};
  std::string text;
  for (std::size_t i = 0; i < names.size(); ++i) text += names[i] + "  " + num(out[i]) + "\n";
  emit(a.c, io::to_json(v), text);
  return kOk;
}

// ------------------------------------------------------------------ summarize

struct SummarizeArgs {
  Common c;
  std::string dataset, out;
};

int run_summarize(const SummarizeArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  if (!ds.has_statistics()) throw ValidationError(a.dataset + ": no measurements or distributions to summarize");
  const auto dists = ds.device_distributions(print_warning);
  const io::ReportContext ctx{"summarize", ds.digest};
  maybe_write(dists, a.out, ctx);
  std::string text = "device  n  inv_q_mean  inv_q_stderr  q_tls\n";
  for (const auto& d : dists) {
    text += d.device_id + "  " + std::to_string(d.n_samples) + "  " + num(d.inv_q_mean) + "  " +
            num(d.inv_q_stderr) + "  " + num(1.0 / d.inv_q_mean) + "\n";
  }
  emit(a.c, io::to_json(dists, ctx), text);
  return kOk;
}

// ------------------------------------------------------------------ ratio

struct RatioArgs {
  Common c;
  std::string dataset, a_region = "MS", b_region = "SA", out;
};

int run_ratio(const RatioArgs& a) {
  const auto ds = io::load_dataset(a.dataset);
  const auto rows = proportionality_report(ds.matrix(), a.a_region, a.b_region);
  const io::ReportContext ctx{"ratio", ds.digest};
  maybe_write(rows, a.out, ctx);
  std::string text = "device  d_um  " + a.a_region + "/" + a.b_region + "\n";
  for (const auto& r : rows) {
    text += r.device_id + "  " + (r.d ? num(*r.d) : "-") + "  " + (r.ratio ? num(*r.ratio) : "undefined") + "\n";
  }
  emit(a.c, io::to_json(rows, ctx), text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Participation-ratio loss extraction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lossfit 0.1.0");

  const std::vector<std::string> sampling_choices{"inverse-q", "q"};

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Monte Carlo loss-factor extraction");
  extract->add_option("--dataset", ex.dataset)->required();
  extract->add_option("--trials", ex.trials)->check(CLI::PositiveNumber);
  extract->add_option("--seed", ex.seed);
  extract->add_option("--out", ex.out, "report path (.json or .csv)");
  extract->add_option("--sampling", ex.sampling)->check(CLI::IsMember(sampling_choices));
  add_common(extract, ex.c);

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Q_TLS prediction from an extraction report");
  predict->add_option("--dataset", pr.dataset)->required();
  predict->add_option("--extraction", pr.extraction)->required();
  predict->add_option("--device", pr.devices, "device id (repeatable; default all)");
  predict->add_option("--out", pr.out);
  add_common(predict, pr.c);

  DecomposeArgs de;
  auto* decompose = app.add_subcommand("decompose", "Per-region loss contributions");
  decompose->add_option("--dataset", de.dataset)->required();
  decompose->add_option("--loss-vector", de.loss_vector)->required();
  decompose->add_option("--out", de.out);
  add_common(decompose, de.c);

  ConditionArgs co;
  auto* condition = app.add_subcommand("condition", "Condition number of the participation matrix");
  condition->add_option("--dataset", co.dataset)->required();
  condition->add_option("--out", co.out);
  add_common(condition, co.c);

  DesignArgs ds;
  auto* design = app.add_subcommand("design-search", "Minimum-kappa device subset");
  design->add_option("--library", ds.library)->required();
  design->add_option("--k", ds.k)->check(CLI::PositiveNumber);
  design->add_option("--top", ds.top)->check(CLI::PositiveNumber);
  design->add_option("--out", ds.out);
  add_common(design, ds.c);

  SimulateArgs si;
  auto* simulate = app.add_subcommand("simulate", "Worst-case simulated experiment");
  simulate->add_option("--config", si.config)->required();
  simulate->add_option("--seed", si.seed);
  simulate->add_option("--out", si.out);
  simulate->add_option("--basis", si.basis)->check(CLI::IsMember({"loss_factor", "loss_tangent"}));
  simulate->add_option("--sampling", si.sampling)->check(CLI::IsMember(sampling_choices));
  add_common(simulate, si.c);

  ConvertArgs cv;
  auto* convert = app.add_subcommand("convert", "Loss tangent <-> loss factor");
  convert->add_option("--regions", cv.regions)->required();
  convert->add_option("--direction", cv.direction)
      ->required()
      ->check(CLI::IsMember({"factor-to-tangent", "tangent-to-factor"}));
  convert->add_option("--values", cv.values)->required();
  add_common(convert, cv.c);

  SummarizeArgs su;
  auto* summarize = app.add_subcommand("summarize", "Per-device 1/Q_TLS statistics");
  summarize->add_option("--dataset", su.dataset)->required();
  summarize->add_option("--out", su.out);
  add_common(summarize, su.c);

  RatioArgs ra;
  auto* ratio = app.add_subcommand("ratio", "Participation ratio of two regions vs trench depth");
  ratio->add_option("--dataset", ra.dataset)->required();
  ratio->add_option("--a", ra.a_region);
  ratio->add_option("--b", ra.b_region);
  ratio->add_option("--out", ra.out);
  add_common(ratio, ra.c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*predict) return run_predict(pr);
    if (*decompose) return run_decompose(de);
    if (*condition) return run_condition(co);
    if (*design) return run_design(ds);
    if (*simulate) return run_simulate(si);
    if (*convert) return run_convert(cv);
    if (*summarize) return run_summarize(su);
    if (*ratio) return run_ratio(ra);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
