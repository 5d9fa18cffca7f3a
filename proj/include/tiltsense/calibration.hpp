#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tiltsense/observed.hpp"

namespace tiltsense {

/// Weighted logistic regression by IRLS with a small ridge. `response` may be
/// fractional (soft labels). Design rows exclude the intercept; it is added
/// internally. Coefficients are reported on the raw covariate scale.
struct LogisticModel {
  double intercept = 0.0;
  std::vector<double> coef;
  std::vector<double> se;  // intercept first, asymptotic
  double deviance = 0.0;
  int iterations = 0;

  double linear_predictor(const std::vector<double>& row) const;
};
LogisticModel logistic_irls(const std::vector<std::vector<double>>& rows,
                            const std::vector<double>& response,
                            const std::vector<double>* weights = nullptr, double ridge = 1e-8,
                            double tol = 1e-10, int max_iter = 100);

struct PropensityFit {
  std::vector<std::size_t> covariates;  // column subset, sorted
  std::vector<double> coef;             // per standardized covariate
  std::vector<double> coef_se;
  std::vector<double> fitted_logit;     // m(X_i)
  double var_m = 0.0;                   // population variance of fitted logits
  double deviance = 0.0;
};

/// Logistic propensity model of T on a covariate subset (standardized
/// internally). Throws SEPARATION_DETECTED when a fitted probability leaves
/// (1e-12, 1 - 1e-12).
PropensityFit fit_propensity(const Dataset& data, const std::vector<std::size_t>& covariates);

/// Variance in the latent treatment logit explained by X:
/// Var(m) / (Var(m) + pi^2/3).
double rho2_x(double var_m);
double rho2_x(const PropensityFit& fit);

/// Partial variance explained by the covariates in `full` beyond `reduced`,
/// (rho2_full - rho2_reduced) / (1 - rho2_reduced); tiny negatives clamp to 0.
double partial_rho2(const PropensityFit& full, const PropensityFit& reduced);

/// rho^2_{Y(t)|X} implied by a selection slope gamma:
/// sigma_r^2 gamma^2 / (Var(m) + pi^2/3 + sigma_r^2 gamma^2).
double partial_r2_of_gamma(double gamma, double sigma_r, double var_m);

/// Closed-form inverse of partial_r2_of_gamma; requires 0 <= rho_star < 1 and
/// sigma_r > 0.
double gamma_of_rho2(double rho_star, double sigma_r, double var_m);

/// Solves sigma_r(gamma) * gamma = sqrt(rho*/(1-rho*) (Var(m)+pi^2/3)) by
/// bracketed bisection (residual <= 1e-8) for models where tilting changes the
/// residual sd. Throws NO_BRACKET when no crossing exists on [0, gamma_max].
double gamma_of_rho2_recursive(double rho_star, const std::function<double(double)>& sigma_r,
                               double var_m, double gamma_max = 100.0);

/// Latent-class calibration: applies the calibrator with the Bernoulli
/// sufficient-statistic sd sqrt(p(1-p)), p the fitted observed-arm class
/// probability.
double omega_of_rho2(double rho_star, double p_class, double var_m);

struct CalibrationRow {
  double rho_star = 0.0;
  double gamma0 = 0.0, gamma1 = 0.0;
  double omega0 = 0.0, omega1 = 0.0;  // populated for binary parts only
  bool has_omega = false;
};

struct CovariateBenchmark {
  std::string name;
  double rho2_partial = 0.0;
  double implied_gamma0 = 0.0;
  double implied_gamma1 = 0.0;
};

struct CalibrationReport {
  double var_m = 0.0;
  double rho2_x = 0.0;
  std::array<double, 2> sigma_r{0.0, 0.0};          // per-arm residual sd, outcome units
  std::array<double, 2> class_p{0.0, 0.0};          // per-arm binary class probability
  bool has_binary_part = false;
  std::vector<CovariateBenchmark> benchmarks;
  std::vector<CalibrationRow> mapping;

  std::string to_json() const;
  std::string to_table() const;
};

/// Per-arm residual sd sqrt(E[Var(Y(t)|X)]) implied by an observed fit
/// (two-part fits: sd of the continuous log-outcome part).
std::array<double, 2> residual_sd(const ObservedFit& fit);

CalibrationReport build_calibration_report(const Dataset& data, const ObservedFit& fit,
                                           const std::vector<std::size_t>& covariates,
                                           const std::vector<double>& rho_stars);

}  // namespace tiltsense
