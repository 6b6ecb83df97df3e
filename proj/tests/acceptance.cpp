// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lossfit/lossfit.hpp"
#include "oracles.hpp"

using namespace lossfit;
namespace fs = std::filesystem;

namespace {

const fs::path kData{LOSSFIT_DATA_DIR};
constexpr std::uint64_t kSeed = 2019;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

ParticipationMatrix fixture(const char* name) { return io::load_dataset(kData / name).matrix(); }

std::vector<QtlsDistribution> forward_dists(const ParticipationMatrix& p, const std::vector<double>& x,
                                            double rel_stderr) {
  std::vector<QtlsDistribution> out;
  for (const auto& dev : p.rows()) {
    const double inv = 1.0 / q_tls_forward(dev.participation, x);
    out.push_back({dev.id, inv, rel_stderr * inv, 30});
  }
  return out;
}

// Reference loss factors obtained by converting the reference tangents.
std::vector<double> reference_factors() {
  const auto tangents = io::load_loss_vector(kData / "loss_tangents_reference.json");
  return to_basis(tangents, default_regions(), LossBasis::LossFactor).values;
}

ExtractionResult noise_free_extraction() {
  const auto p = fixture("p_iso.json");
  return extract_mc(p, forward_dists(p, reference_factors(), 0.0), {.n_trials = 10000, .seed = kSeed});
}

ExtractionResult noisy_extraction(std::size_t threads) {
  const auto p = fixture("p_iso.json");
  return extract_mc(p, forward_dists(p, reference_factors(), 0.02),
                    {.n_trials = 10000, .seed = kSeed, .threads = threads});
}

WorstCaseCurve simulated_curve(const char* dataset, std::size_t threads) {
  SimExpConfig cfg{fixture(dataset), {{"MS", "SA", "MA", "Si"}, reference_factors(), LossBasis::LossFactor}};
  cfg.n_devices_grid = {40, 80, 120, 240};
  cfg.relative_sd = 0.1;
  cfg.n_repetitions = 20;
  cfg.mc_trials = 1000;
  cfg.seed = kSeed;
  cfg.threads = threads;
  return run_simulated_experiment(cfg);
}

Outcome golden_condition_numbers() {
  const double ideal = condition_number(fixture("p_ideal.json")).kappa;
  const double ani = condition_number(fixture("p_ani.json")).kappa;
  const double iso = condition_number(fixture("p_iso.json")).kappa;
  const double ratio = ani / iso;
  Outcome o;
  o.pass = ideal == 1.0 && rel_err(ani, 110201.0) <= 0.02 && rel_err(iso, 2001.0) <= 0.02 &&
           std::abs(ratio - 55.0) <= 3.0;
  o.detail = fmt("kappa ideal=%.17g ani=%.1f iso=%.2f ratio=%.3f", ideal, ani, iso, ratio);
  return o;
}

Outcome identity_uncertainty() {
  const double rel = 0.05;
  const auto p = fixture("p_ideal.json");
  std::vector<QtlsDistribution> dists;
  const double inv_q[] = {1.2e-6, 2.5e-6, 0.8e-6, 4.0e-6};
  for (std::size_t j = 0; j < 4; ++j) dists.push_back({p.rows()[j].id, inv_q[j], rel * inv_q[j], 30});
  const auto r = extract_mc(p, dists, {.n_trials = 10000, .seed = kSeed});
  // Fractional 95% interval of a Normal(mu, rel * mu) input.
  const double input_frac = 1.959963984540054 * rel;
  Outcome o;
  std::ostringstream d;
  d << "fractional CI half-width vs input " << input_frac << ":";
  for (std::size_t i = 0; i < 4; ++i) {
    const double frac = 0.5 * (r.ci95[i].high - r.ci95[i].low) / r.mean[i];
    d << ' ' << frac;
    if (rel_err(frac, input_frac) > 0.05) o.pass = false;
  }
  o.detail = d.str();
  return o;
}

Outcome noise_free_round_trip() {
  const auto r = noise_free_extraction();
  const auto x = reference_factors();
  const auto regions = default_regions();
  Outcome o;
  std::ostringstream d;
  d << "max rel err x=";
  double worst_x = 0.0, worst_t = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (double v : {r.point.values[i], r.mean[i], r.ci95[i].low, r.ci95[i].high}) {
      worst_x = std::max(worst_x, rel_err(v, x[i]));
    }
    worst_t = std::max(worst_t, rel_err(tangent_from_loss_factor(regions[i], r.mean[i]), oracle::kTangents[i]));
  }
  o.pass = worst_x <= 1e-9 && worst_t <= 1e-6;
  d << worst_x << " tangent=" << worst_t;
  o.detail = d.str();
  return o;
}

Outcome noisy_recovery() {
  const auto r = noisy_extraction(1);
  const auto regions = default_regions();
  Outcome o;
  std::ostringstream d;
  d << "MC mean tangents:";
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = tangent_from_loss_factor(regions[i], r.mean[i]);
    d << ' ' << t;
    if (std::abs(t - oracle::kTangents[i]) > oracle::kHalfWidths[i]) o.pass = false;
  }
  o.detail = d.str();
  return o;
}

Outcome worst_case_curves() {
  const auto iso = simulated_curve("p_iso.json", 1);
  const auto ani = simulated_curve("p_ani.json", 1);
  const std::size_t n120 = 2, n40 = 0, n240 = 3;
  Outcome o;
  std::ostringstream d;
  bool a = true;
  for (std::size_t i = 0; i < 3; ++i) a = a && iso.at(i, n120).worst_low > 0.0;
  bool b = false;
  for (std::size_t i = 0; i < 3; ++i) b = b || ani.at(i, n120).worst_low < 0.01 * ani.target[i];
  bool c = true;
  for (const auto* curve : {&iso, &ani}) {
    for (std::size_t i = 0; i < 4; ++i) c = c && curve->width(i, n240) <= curve->width(i, n40);
  }
  o.pass = a && b && c;
  d << "(a) iso worst_low/target @120 =";
  for (std::size_t i = 0; i < 3; ++i) d << ' ' << iso.at(i, n120).worst_low / iso.target[i];
  d << (a ? " ok" : " FAIL") << "; (b) ani worst_low/target @120 =";
  for (std::size_t i = 0; i < 3; ++i) d << ' ' << ani.at(i, n120).worst_low / ani.target[i];
  d << (b ? " ok" : " FAIL") << "; (c) width240<=width40 " << (c ? "ok" : "FAIL");
  o.detail = d.str();
  return o;
}

Outcome prediction_range() {
  const auto p = fixture("p_iso.json");
  const auto r = noise_free_extraction();
  Outcome o;
  std::ostringstream d;
  d << "predicted Q:";
  for (const auto& dev : p.rows()) {
    const auto q = predict_q_mc(dev.participation, r);
    d << ' ' << dev.id << '=' << q.q_mean;
    for (double v : {q.q_mean, q.q_ci95.low, q.q_ci95.high}) {
      if (v < 0.8e6 || v > 3.0e6) o.pass = false;
    }
  }
  o.detail = d.str();
  return o;
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "lossfit_acceptance";
  fs::create_directories(dir);
  const auto regions = default_regions();
  auto write_pair = [&](std::size_t threads, const std::string& tag) {
    const auto extraction = noisy_extraction(threads);
    const auto ext_path = dir / ("extract_" + tag + ".json");
    io::write_file(ext_path, io::to_json(extraction, {"extract", "fixed"}, &regions).dump(2));
    const auto curve = simulated_curve("p_iso.json", threads);
    const auto curve_json = dir / ("simulate_" + tag + ".json");
    const auto curve_csv = dir / ("simulate_" + tag + ".csv");
    io::write_report(curve, curve_json, io::ReportFormat::Json, {"simulate", "fixed"});
    io::write_report(curve, curve_csv, io::ReportFormat::Csv, {"simulate", "fixed"});
    return std::vector<fs::path>{ext_path, curve_json, curve_csv};
  };
  const auto serial = write_pair(1, "serial");
  const auto rerun = write_pair(1, "rerun");
  const auto parallel = write_pair(4, "parallel");
  Outcome o;
  std::size_t bytes = 0;
  for (std::size_t k = 0; k < serial.size(); ++k) {
    const auto a = io::read_file(serial[k]);
    bytes += a.size();
    if (a != io::read_file(rerun[k]) || a != io::read_file(parallel[k])) o.pass = false;
  }
  o.detail = fmt("%zu report files (%zu bytes) identical across reruns and 1 vs 4 threads", serial.size(), bytes);
  return o;
}

Outcome solver_properties() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> dim(1, 6);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::size_t kkt_fail = 0, residual_fail = 0, agree_fail = 0, agree_checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const int n = dim(rng);
    const int m = n + dim(rng) - 1;
    Eigen::MatrixXd a(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    Eigen::VectorXd b(m);
    if (k % 2 == 0) {
      // Generic right-hand side: constraints usually activate.
      for (int i = 0; i < m; ++i) b(i) = g(rng);
    } else {
      // Positive ground truth plus small noise: the unconstrained solution is usually feasible.
      Eigen::VectorXd x(n);
      for (int j = 0; j < n; ++j) x(j) = u(rng);
      b = a * x;
      for (int i = 0; i < m; ++i) b(i) += 0.01 * g(rng);
    }
    const auto nn = nnls_solve({a, b});
    const Eigen::VectorXd ls = least_squares({a, b});
    const double scale = (a.transpose() * b).norm();
    const Eigen::VectorXd grad = a.transpose() * (a * nn.x - b);
    for (int j = 0; j < n; ++j) {
      const bool ok = nn.x(j) > 0.0 ? std::abs(grad(j)) <= 1e-10 * scale : grad(j) >= -1e-10 * scale;
      if (!ok || nn.x(j) < 0.0) {
        ++kkt_fail;
        break;
      }
    }
    const double ls_res = (a * ls - b).norm();
    if (nn.residual_norm < ls_res - 1e-12 * std::max(1.0, b.norm())) ++residual_fail;
    if ((ls.array() >= 0.0).all()) {
      ++agree_checked;
      if ((nn.x - ls).norm() > 1e-9 * std::max(1.0, ls.norm())) ++agree_fail;
    }
  }
  Outcome o;
  o.pass = kkt_fail == 0 && residual_fail == 0 && agree_fail == 0 && agree_checked > 0;
  o.detail = fmt("1000 instances: KKT failures %zu, residual below LS %zu, NNLS!=LS %zu of %zu feasible-LS cases",
                 kkt_fail, residual_fail, agree_fail, agree_checked);
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"AC1 golden condition numbers", 1.0, golden_condition_numbers},
      {"AC2 identity-matrix uncertainty identity", 5.0, identity_uncertainty},
      {"AC3 noise-free round trip", 1.0, noise_free_round_trip},
      {"AC4 noisy recovery within quoted intervals", 10.0, noisy_recovery},
      {"AC5 worst-case uncertainty vs device count", 120.0, worst_case_curves},
      {"AC6 predicted Q range", 5.0, prediction_range},
      {"AC7 seeded determinism of reports", 600.0, determinism},
      {"AC8 solver property suite", 10.0, solver_properties},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.time_limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] %s (%.3f s, limit %.0f s%s): %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                c.time_limit_s, in_time ? "" : ", exceeded", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
