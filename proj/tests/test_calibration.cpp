#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tiltsense/calibration.hpp"
#include "tiltsense/estimands.hpp"

using namespace tiltsense;

namespace {

constexpr double kLogisticVar = M_PI * M_PI / 3.0;

/// Logistic treatment model on standard-normal covariates.
Dataset logistic_dgp(std::size_t n, const std::vector<double>& beta, std::uint64_t seed,
                     double intercept = 0.0) {
  Rng rng(seed);
  Dataset data;
  for (std::size_t j = 0; j < beta.size(); ++j) data.covariate_names.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(beta.size());
    double eta = intercept;
    for (std::size_t j = 0; j < beta.size(); ++j) {
      x[j] = rng.normal();
      eta += beta[j] * x[j];
    }
    data.t.push_back(rng.bernoulli(expit(eta)) ? 1 : 0);
    data.y.push_back(rng.normal());
    data.x.push_back(std::move(x));
  }
  return data;
}

}  // namespace

TEST_CASE("propensity fit recovers a known logistic model") {
  const std::vector<double> beta{0.8, -0.4, 0.0};
  const Dataset data = logistic_dgp(100000, beta, 5);
  const PropensityFit fit = fit_propensity(data, {0, 1, 2});
  for (std::size_t j = 0; j < beta.size(); ++j) {
    // coefficients are on standardized covariates; sd(x_j) ~ 1 here
    CHECK(std::abs(fit.coef[j] - beta[j]) <= 3.0 * fit.coef_se[j] + 0.02);
  }
  CHECK(fit.var_m > 0.0);
}

TEST_CASE("intercept-only propensity has Var(m) = 0") {
  const Dataset data = logistic_dgp(500, {0.5}, 9);
  const PropensityFit fit = fit_propensity(data, {});
  CHECK(fit.var_m == 0.0);
  CHECK(rho2_x(fit) == 0.0);
}

TEST_CASE("perfectly balanced covariate gets a zero coefficient") {
  Dataset data;
  data.covariate_names = {"x0"};
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.normal();
    // same covariate value appears once in each arm
    data.x.push_back({x});
    data.t.push_back(0);
    data.y.push_back(0.0);
    data.x.push_back({x});
    data.t.push_back(1);
    data.y.push_back(0.0);
  }
  const PropensityFit fit = fit_propensity(data, {0});
  CHECK(std::abs(fit.coef[0]) <= 1e-6);
}

TEST_CASE("separation is detected") {
  Dataset data;
  data.covariate_names = {"x0"};
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.normal();
    data.x.push_back({x});
    data.t.push_back(x > 0.0 ? 1 : 0);
    data.y.push_back(0.0);
  }
  try {
    fit_propensity(data, {0});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Code::SEPARATION_DETECTED);
  }
}

TEST_CASE("rho2_x arithmetic") {
  CHECK(rho2_x(0.0) == 0.0);
  CHECK(rho2_x(kLogisticVar) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(rho2_x(3.20) == doctest::Approx(0.493).epsilon(1e-3));
}

TEST_CASE("partial rho2") {
  const Dataset data = logistic_dgp(20000, {1.0, 0.0}, 21);
  const PropensityFit full = fit_propensity(data, {0, 1});
  const PropensityFit informative = fit_propensity(data, {0});
  const PropensityFit none = fit_propensity(data, {});

  CHECK(partial_rho2(full, full) == 0.0);
  // reduced to the empty set: equals rho2 of the full fit
  CHECK(partial_rho2(full, none) == doctest::Approx(rho2_x(full)).epsilon(1e-12));
  // matches a direct recomputation from the two fits
  const double direct = (rho2_x(full) - rho2_x(informative)) / (1.0 - rho2_x(informative));
  CHECK(partial_rho2(full, informative) == doctest::Approx(direct).epsilon(1e-12));
  // subset requirement
  CHECK_THROWS_AS(partial_rho2(informative, full), Error);
}

TEST_CASE("pure-noise covariates explain O(1/n) partial variance") {
  for (const auto& [n, cap] : {std::pair<std::size_t, double>{2000, 5e-3},
                               std::pair<std::size_t, double>{20000, 5e-4}}) {
    const Dataset data = logistic_dgp(n, {1.0, 0.0}, 31 + n);
    const PropensityFit full = fit_propensity(data, {0, 1});
    const PropensityFit reduced = fit_propensity(data, {0});
    CHECK(partial_rho2(full, reduced) < cap);
  }
}

TEST_CASE("orthogonalized residual column leaves propensity coefficients alone") {
  Dataset data = logistic_dgp(20000, {0.7}, 47);
  const PropensityFit base = fit_propensity(data, {0});

  // build a noise column, orthogonalized against the intercept and x0
  Rng rng(99);
  std::vector<double> r(data.size());
  double rx = 0.0, xx = 0.0, rbar = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) r[i] = rng.normal();
  for (std::size_t i = 0; i < data.size(); ++i) {
    rbar += r[i];
    rx += r[i] * data.x[i][0];
    xx += data.x[i][0] * data.x[i][0];
  }
  rbar /= static_cast<double>(data.size());
  const double proj = rx / xx;
  data.covariate_names.push_back("resid");
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.x[i].push_back(r[i] - rbar - proj * data.x[i][0]);
  }
  const PropensityFit with_resid = fit_propensity(data, {0, 1});
  CHECK(std::abs(with_resid.coef[0] - base.coef[0]) <= 3.0 * base.coef_se[0]);
}

TEST_CASE("calibrator closed forms") {
  CHECK(partial_r2_of_gamma(0.0, 1.0, 1.0) == 0.0);
  // sigma*gamma = 0.52, Var(m) = 3.20 -> rho2 ~ 0.040
  CHECK(partial_r2_of_gamma(0.52 / 11.2, 11.2, 3.20) == doctest::Approx(0.040).epsilon(0.05));
  CHECK(gamma_of_rho2(0.0, 1.0, 5.0) == 0.0);
  // blood-pressure numbers
  CHECK(gamma_of_rho2(0.04, 11.2, 3.20) == doctest::Approx(0.046).epsilon(0.05));
  CHECK(gamma_of_rho2(0.04, 10.9, 3.20) == doctest::Approx(0.048).epsilon(0.05));
  // job-training numbers: Var(m) = 0
  CHECK(gamma_of_rho2(0.01, 1.82, 0.0) == doctest::Approx(0.10).epsilon(0.05));
  CHECK_THROWS_AS(gamma_of_rho2(1.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(gamma_of_rho2(-0.1, 1.0, 1.0), Error);
}

TEST_CASE("calibration round trip is exact") {
  for (double rho = 0.05; rho <= 0.9; rho += 0.05) {
    for (double sigma : {0.1, 1.0, 11.2}) {
      for (double v : {0.0, 3.29, 10.0}) {
        const double g = gamma_of_rho2(rho, sigma, v);
        CHECK(partial_r2_of_gamma(g, sigma, v) == doctest::Approx(rho).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("calibrator monotonicity") {
  double prev = 0.0;
  for (double rho : {0.01, 0.05, 0.2, 0.5, 0.8}) {
    const double g = gamma_of_rho2(rho, 2.0, 1.0);
    CHECK(g > prev);
    prev = g;
  }
  CHECK(gamma_of_rho2(0.1, 2.0, 5.0) > gamma_of_rho2(0.1, 2.0, 1.0));   // increasing in Var(m)
  CHECK(gamma_of_rho2(0.1, 4.0, 1.0) < gamma_of_rho2(0.1, 2.0, 1.0));   // decreasing in sigma
}

TEST_CASE("recursive solver") {
  // constant sigma reduces to the closed form
  const auto const_sigma = [](double) { return 1.7; };
  CHECK(gamma_of_rho2_recursive(0.07, const_sigma, 2.0) ==
        doctest::Approx(gamma_of_rho2(0.07, 1.7, 2.0)).epsilon(1e-10));
  CHECK(gamma_of_rho2_recursive(0.0, const_sigma, 2.0) == 0.0);

  // a mixture whose residual sd moves under tilting
  ObservedFit fit;
  fit.prevalence = TreatmentPrevalence::from_probability(0.5);
  const MixtureDist mix({UnivariateEF::normal(0.0, 1.0), UnivariateEF::normal(4.0, 5.0)},
                        {0.6, 0.4});
  fit.arms[0].units = {mix};
  fit.arms[1].units = {mix};
  const auto sigma = residual_sd_function(fit, SelectionModel{}, 0);
  const double rho = 0.05;
  const double g = gamma_of_rho2_recursive(rho, sigma, 1.0);
  const double target = std::sqrt(rho / (1.0 - rho) * (1.0 + kLogisticVar));
  CHECK(std::abs(sigma(g) * g - target) <= 1e-8);

  // no crossing: sigma shrinking fast enough caps sigma(g)*g below the target
  const auto shrinking = [](double g2) { return 1.0 / (1.0 + g2 * g2); };
  CHECK_THROWS_AS(gamma_of_rho2_recursive(0.5, shrinking, 10.0, 50.0), Error);
}

TEST_CASE("omega calibration for the binary part") {
  CHECK(omega_of_rho2(0.0, 0.5, 0.0) == 0.0);
  // p = 1/2, rho* = 0.015, Var(m) = 0
  CHECK(omega_of_rho2(0.015, 0.5, 0.0) == doctest::Approx(0.4477).epsilon(1e-3));
  CHECK_THROWS_AS(omega_of_rho2(0.015, 0.0, 0.0), Error);

  // monotone in rho*
  double prev = 0.0;
  for (double rho : {0.005, 0.01, 0.015, 0.05}) {
    const double w = omega_of_rho2(rho, 0.5, 0.0);
    CHECK(w > prev);
    prev = w;
  }

  // consistency reconstruction: the p that sends rho* = 0.015 to omega = 0.5
  double lo = 0.01, hi = 0.5;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (omega_of_rho2(0.015, mid, 0.0) > 0.5 ? lo : hi) = mid;
  }
  CHECK(std::abs(0.5 * (lo + hi) - 0.272) < 0.01);
}

TEST_CASE("calibration report assembles benchmarks and mappings") {
  Dataset data = logistic_dgp(4000, {0.9, 0.2}, 61);
  Rng rng(62);
  for (std::size_t i = 0; i < data.size(); ++i) data.y[i] = rng.normal(data.t[i], 4.0);
  ObservedFit fit;
  fit.prevalence = TreatmentPrevalence::from_counts(
      static_cast<long>(data.size()) - std::count(data.t.begin(), data.t.end(), 1),
      std::count(data.t.begin(), data.t.end(), 1));
  fit.arms[0].units = {em_fit(data.arm_outcomes(0), 1, 1, 5)};
  fit.arms[1].units = {em_fit(data.arm_outcomes(1), 1, 1, 5)};

  const CalibrationReport report = build_calibration_report(data, fit, {0, 1}, {0.01, 0.04});
  REQUIRE(report.benchmarks.size() == 2);
  CHECK(report.benchmarks[0].rho2_partial > report.benchmarks[1].rho2_partial);
  REQUIRE(report.mapping.size() == 2);
  CHECK(report.mapping[1].gamma0 > report.mapping[0].gamma0);
  CHECK(report.to_json().find("benchmarks") != std::string::npos);
  CHECK(report.to_table().find("covariate") != std::string::npos);
}
