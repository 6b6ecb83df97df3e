#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "lossfit/uncertainty.hpp"
#include "oracles.hpp"

using namespace lossfit;
using Catch::Approx;

namespace {

ParticipationMatrix from_eigen(const Eigen::MatrixXd& m, const std::string& prefix = "dev") {
  auto regions = default_regions();
  std::vector<DeviceGeometry> rows;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    DeviceGeometry d;
    d.id = prefix + std::to_string(j + 1);
    for (Eigen::Index i = 0; i < m.cols(); ++i) d.participation.push_back(m(j, i));
    rows.push_back(d);
  }
  return {regions, rows};
}

std::vector<QtlsDistribution> dists_for(const Eigen::VectorXd& inv_q, double rel_stderr,
                                        const std::string& prefix = "dev") {
  std::vector<QtlsDistribution> out;
  for (Eigen::Index j = 0; j < inv_q.size(); ++j) {
    out.push_back({prefix + std::to_string(j + 1), inv_q(j), rel_stderr * inv_q(j), 30});
  }
  return out;
}

}  // namespace

TEST_CASE("summarize a measurement set", "[uncertainty]") {
  auto d = summarize({"a", {1e6, 1e6}, {1e12, 1e12}});
  CHECK(d.inv_q_mean == Approx(1e-6).epsilon(1e-5));
  CHECK(d.inv_q_stderr == Approx(0.0).margin(1e-20));
  CHECK(d.n_samples == 2);

  // Hand arithmetic: 1/Q_TLS = [1e-6, 5e-7] (less 1e-12), mean 7.5e-7,
  // sd = 3.5355e-7, stderr = sd / sqrt(2) = 2.5e-7.
  d = summarize({"b", {1e6, 2e6}, {1e12, 1e12}});
  CHECK(d.inv_q_mean == Approx(7.5e-7 - 1e-12).epsilon(1e-12));
  CHECK(d.inv_q_stderr == Approx(2.5e-7).epsilon(1e-12));

  CHECK_THROWS_AS(summarize({"c", {2e6}, {1.5e6}}), NumericalError);

  SECTION("excluded pairs produce warnings") {
    std::vector<std::string> warnings;
    const WarningSink sink = [&](const std::string& w) { warnings.push_back(w); };
    d = summarize({"d", {1e6, 3e6, 2e6}, {1e12, 2e6, 1e12}}, sink);
    CHECK(d.n_samples == 2);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("sample 1") != std::string::npos);
  }

  SECTION("single sample has zero stderr and a warning") {
    std::vector<std::string> warnings;
    d = summarize({"e", {1e6}, {1e12}}, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(d.inv_q_stderr == 0.0);
    CHECK(warnings.size() == 1);
  }

  SECTION("unequal lists use the pooled high-power loss") {
    std::vector<std::string> warnings;
    d = summarize({"f", {1e6, 2e6, 1e6}, {1e7, 1e7}}, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(warnings.size() == 1);
    CHECK(d.n_samples == 3);
    CHECK(d.inv_q_mean == Approx((1e-6 + 5e-7 + 1e-6) / 3.0 - 1e-7).epsilon(1e-12));
  }
}

TEST_CASE("extract_mc with noiseless inputs on the identity", "[uncertainty]") {
  const auto p = from_eigen(Eigen::MatrixXd::Identity(4, 4));
  const auto dists = dists_for(Eigen::Vector4d(1e-6, 2e-6, 3e-6, 4e-6), 0.0);
  const auto r = extract_mc(p, dists, {.n_trials = 500, .seed = 1});
  for (std::size_t i = 0; i < 4; ++i) {
    const double want = 1e-6 * static_cast<double>(i + 1);
    CHECK(r.point.values[i] == Approx(want).epsilon(1e-14));
    CHECK(r.mean[i] == r.ensemble(0, static_cast<Eigen::Index>(i)));
    CHECK(r.ci95[i].low == r.ci95[i].high);
    CHECK(r.mean[i] == Approx(want).epsilon(1e-14));
    CHECK((r.ensemble.col(static_cast<Eigen::Index>(i)).array() == r.ensemble(0, static_cast<Eigen::Index>(i))).all());
  }
}

TEST_CASE("extract_mc on the identity reproduces the input fractional spread", "[uncertainty]") {
  const auto p = from_eigen(Eigen::MatrixXd::Identity(4, 4));
  const Eigen::Vector4d inv_q(1e-6, 2e-6, 3e-6, 4e-6);
  const double rel = 0.03;
  const auto r = extract_mc(p, dists_for(inv_q, rel), {.n_trials = 10000, .seed = 99});
  for (std::size_t i = 0; i < 4; ++i) {
    const double half = 0.5 * (r.ci95[i].high - r.ci95[i].low);
    CHECK(half / r.mean[i] == Approx(1.959964 * rel).epsilon(0.05));
    CHECK(r.mean[i] == Approx(inv_q(static_cast<Eigen::Index>(i))).epsilon(0.005));
    CHECK(r.ci95[i].low <= r.mean[i]);
    CHECK(r.mean[i] <= r.ci95[i].high);
  }
}

TEST_CASE("extract_mc is deterministic across thread counts", "[uncertainty]") {
  const auto p = from_eigen(oracle::p_iso());
  const Eigen::VectorXd b = oracle::p_iso() * oracle::loss_factors();
  const auto dists = dists_for(b, 0.05);
  const auto r1 = extract_mc(p, dists, {.n_trials = 2000, .seed = 7, .threads = 1});
  const auto r4 = extract_mc(p, dists, {.n_trials = 2000, .seed = 7, .threads = 4});
  const auto r3 = extract_mc(p, dists, {.n_trials = 2000, .seed = 7, .threads = 3});
  CHECK(r1.ensemble == r4.ensemble);
  CHECK(r1.ensemble == r3.ensemble);
  CHECK(r1.mean == r4.mean);
  const auto other = extract_mc(p, dists, {.n_trials = 2000, .seed = 8});
  CHECK(other.ensemble != r1.ensemble);
  CHECK((r1.ensemble.array() >= 0.0).all());
}

TEST_CASE("extract_mc converges to the point solution as stderr vanishes", "[uncertainty]") {
  const auto p = from_eigen(oracle::p_iso());
  const Eigen::VectorXd b = oracle::p_iso() * oracle::loss_factors();
  const auto r = extract_mc(p, dists_for(b, 0.0), {.n_trials = 50, .seed = 3});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.mean[i] == r.point.values[i]);
    CHECK(r.ci95[i].low == r.point.values[i]);
  }
}

TEST_CASE("extract_mc rejects malformed input", "[uncertainty]") {
  const auto p = from_eigen(Eigen::MatrixXd::Identity(4, 4));
  const auto dists = dists_for(Eigen::Vector4d(1e-6, 2e-6, 3e-6, 4e-6), 0.01);
  CHECK_THROWS_AS(extract_mc(p, std::span(dists).first(3), {}), ValidationError);
  CHECK_THROWS_AS(extract_mc(p, dists, {.n_trials = 0}), ValidationError);
  auto renamed = dists;
  renamed[2].device_id = "zzz";
  CHECK_THROWS_AS(extract_mc(p, renamed, {.n_trials = 10}), ValidationError);
}

TEST_CASE("negative draws are redrawn, not clamped", "[uncertainty]") {
  const auto p = from_eigen(Eigen::MatrixXd::Identity(4, 4));
  // Stderr comparable to the mean: many raw draws would be negative.
  const auto dists = dists_for(Eigen::Vector4d(1e-6, 1e-6, 1e-6, 1e-6), 0.8);
  const auto r = extract_mc(p, dists, {.n_trials = 2000, .seed = 4});
  CHECK((r.ensemble.array() > 0.0).all());
}

TEST_CASE("Q-space sampling option", "[uncertainty]") {
  const auto p = from_eigen(Eigen::MatrixXd::Identity(4, 4));
  const Eigen::Vector4d inv_q(1e-6, 2e-6, 3e-6, 4e-6);
  const auto r = extract_mc(p, dists_for(inv_q, 0.02),
                            {.n_trials = 10000, .seed = 5, .sampling = SamplingSpace::Q});
  for (std::size_t i = 0; i < 4; ++i) {
    const double half = 0.5 * (r.ci95[i].high - r.ci95[i].low);
    CHECK(half / r.mean[i] == Approx(1.959964 * 0.02).epsilon(0.06));
  }
  const auto r_inv = extract_mc(p, dists_for(inv_q, 0.02), {.n_trials = 100, .seed = 5});
  CHECK(r_inv.ensemble != r.ensemble.topRows(100));
}

TEST_CASE("predict_q_mc", "[uncertainty]") {
  ExtractionResult single;
  single.point = {{"MS", "SA", "MA", "Si"}, {1e-6, 0, 0, 0}, LossBasis::LossFactor};
  single.ensemble = Eigen::MatrixXd(1, 4);
  single.ensemble << 1e-6, 0, 0, 0;
  const std::vector<double> row{1, 0, 0, 0};
  auto pred = predict_q_mc(row, single);
  CHECK(pred.q_mean == Approx(1e6));
  CHECK(pred.q_ci95.low == pred.q_mean);
  CHECK(pred.q_ci95.high == pred.q_mean);

  SECTION("constant ensemble gives a zero-width interval") {
    ExtractionResult c = single;
    c.ensemble = Eigen::MatrixXd::Constant(100, 4, 2e-7);
    const auto q = predict_q_mc(std::vector<double>{0.1, 0.2, 0.3, 0.4}, c);
    CHECK(q.q_ci95.high - q.q_ci95.low == 0.0);
  }

  SECTION("lossless trials are skipped") {
    ExtractionResult c = single;
    c.ensemble = Eigen::MatrixXd(2, 4);
    c.ensemble << 0, 1e-6, 0, 0, 1e-6, 0, 0, 0;
    int warnings = 0;
    const auto q = predict_q_mc(row, c, [&](const std::string&) { ++warnings; });
    CHECK(q.n_used == 1);
    CHECK(warnings == 1);
    c.ensemble.row(1).setZero();
    CHECK_THROWS_AS(predict_q_mc(row, c), NumericalError);
  }

  CHECK_THROWS_AS(predict_q_mc(std::vector<double>{1, 0}, single), ValidationError);

  SECTION("noiseless extraction reproduces the measured Q of each device") {
    const auto p = from_eigen(oracle::p_iso());
    const Eigen::VectorXd b = oracle::p_iso() * oracle::loss_factors();
    const auto r = extract_mc(p, dists_for(b, 0.0), {.n_trials = 20, .seed = 1});
    for (std::size_t j = 0; j < 4; ++j) {
      const auto q = predict_q_mc(p.rows()[j].participation, r);
      CHECK(std::abs(q.q_mean * b(static_cast<Eigen::Index>(j)) - 1.0) <= 1e-9);
    }
  }
}
