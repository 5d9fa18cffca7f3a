#include "tiltsense/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace tiltsense {

namespace {
constexpr double kLogisticVar = M_PI * M_PI / 3.0;

/// Solves A x = b for a small symmetric positive-definite A (in-place Cholesky).
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t p) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      if (i == j) {
        if (s <= 0.0) fail(Code::INTERNAL, "IRLS normal equations are not positive definite");
        a[i * p + j] = std::sqrt(s);
      } else {
        a[i * p + j] = s / a[j * p + j];
      }
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * p + k] * b[k];
    b[i] = s / a[i * p + i];
  }
  for (std::size_t ii = p; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < p; ++k) s -= a[k * p + ii] * b[k];
    b[ii] = s / a[ii * p + ii];
  }
  return b;
}
}  // namespace

double LogisticModel::linear_predictor(const std::vector<double>& row) const {
  double eta = intercept;
  for (std::size_t j = 0; j < coef.size(); ++j) eta += coef[j] * row[j];
  return eta;
}

LogisticModel logistic_irls(const std::vector<std::vector<double>>& rows,
                            const std::vector<double>& response,
                            const std::vector<double>* weights, double ridge, double tol,
                            int max_iter) {
  const std::size_t n = rows.size();
  if (n == 0 || response.size() != n) fail(Code::DATA, "IRLS needs matching rows and responses");
  const std::size_t d = rows[0].size();
  const std::size_t p = d + 1;

  std::vector<double> beta(p, 0.0);
  {
    double ybar = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = weights ? (*weights)[i] : 1.0;
      ybar += wi * response[i];
      wsum += wi;
    }
    ybar = std::clamp(ybar / wsum, 1e-6, 1.0 - 1e-6);
    beta[0] = logit(ybar);
  }

  LogisticModel model;
  std::vector<double> xtwx(p * p);
  std::vector<double> xtz(p);
  std::vector<double> row(p);
  for (int iter = 1; iter <= max_iter; ++iter) {
    std::fill(xtwx.begin(), xtwx.end(), 0.0);
    std::fill(xtz.begin(), xtz.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      row[0] = 1.0;
      for (std::size_t j = 0; j < d; ++j) row[j + 1] = rows[i][j];
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += beta[j] * row[j];
      const double mu = expit(eta);
      const double wi = (weights ? (*weights)[i] : 1.0) * std::max(mu * (1.0 - mu), 1e-10);
      const double r = (weights ? (*weights)[i] : 1.0) * (response[i] - mu);
      for (std::size_t j = 0; j < p; ++j) {
        xtz[j] += r * row[j];
        for (std::size_t k = 0; k <= j; ++k) xtwx[j * p + k] += wi * row[j] * row[k];
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = j + 1; k < p; ++k) xtwx[j * p + k] = xtwx[k * p + j];
      xtwx[j * p + j] += ridge;
    }
    const std::vector<double> delta = solve_spd(xtwx, xtz, p);
    double maxstep = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      beta[j] += delta[j];
      maxstep = std::max(maxstep, std::abs(delta[j]));
    }
    model.iterations = iter;
    if (maxstep <= tol) break;
  }

  model.intercept = beta[0];
  model.coef.assign(beta.begin() + 1, beta.end());
  model.deviance = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    const double mu = std::clamp(expit(model.linear_predictor(rows[i])), 1e-300, 1.0 - 1e-16);
    const double yi = response[i];
    double term = 0.0;
    if (yi > 0.0) term += yi * std::log(mu);
    if (yi < 1.0) term += (1.0 - yi) * std::log1p(-mu);
    model.deviance -= 2.0 * wi * term;
  }
  // asymptotic SEs from the final weighted information matrix
  {
    std::fill(xtwx.begin(), xtwx.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      row[0] = 1.0;
      for (std::size_t j = 0; j < d; ++j) row[j + 1] = rows[i][j];
      const double mu = expit(model.linear_predictor(rows[i]));
      const double wi = (weights ? (*weights)[i] : 1.0) * std::max(mu * (1.0 - mu), 1e-10);
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = 0; k <= j; ++k) xtwx[j * p + k] += wi * row[j] * row[k];
    }
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = j + 1; k < p; ++k) xtwx[j * p + k] = xtwx[k * p + j];
      xtwx[j * p + j] += ridge;
    }
    model.se.resize(p);
    std::vector<double> e(p);
    for (std::size_t j = 0; j < p; ++j) {
      std::fill(e.begin(), e.end(), 0.0);
      e[j] = 1.0;
      model.se[j] = std::sqrt(solve_spd(xtwx, e, p)[j]);
    }
  }
  return model;
}

PropensityFit fit_propensity(const Dataset& data, const std::vector<std::size_t>& covariates) {
  data.validate();
  const std::size_t n = data.size();
  long n1 = std::count(data.t.begin(), data.t.end(), 1);
  if (n1 < 2 || static_cast<long>(n) - n1 < 2) fail(Code::DATA, "need at least 2 units per arm");
  std::vector<std::size_t> cols = covariates;
  std::sort(cols.begin(), cols.end());
  for (std::size_t c : cols) {
    if (c >= data.covariate_names.size()) fail(Code::USAGE, "covariate index out of range");
  }

  // standardize the selected columns so benchmark partial rho^2 are scale-free
  const std::size_t d = cols.size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) mu[j] += data.x[i][cols[j]];
    mu[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = data.x[i][cols[j]] - mu[j];
      sd[j] += z * z;
    }
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
  }
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      rows[i][j] = sd[j] > 1e-12 ? (data.x[i][cols[j]] - mu[j]) / sd[j] : 0.0;
    }
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<double>(data.t[i]);

  const LogisticModel m = logistic_irls(rows, y);
  PropensityFit fit;
  fit.covariates = cols;
  fit.coef = m.coef;
  fit.coef_se.assign(m.se.begin() + 1, m.se.end());
  fit.deviance = m.deviance;
  fit.fitted_logit.resize(n);
  double mbar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    fit.fitted_logit[i] = m.linear_predictor(rows[i]);
    const double prob = expit(fit.fitted_logit[i]);
    if (!(prob > 1e-12 && prob < 1.0 - 1e-12)) {
      fail(Code::SEPARATION_DETECTED, "fitted propensity reached the boundary at unit " +
                                          std::to_string(i));
    }
    mbar += fit.fitted_logit[i];
  }
  mbar /= static_cast<double>(n);
  for (double v : fit.fitted_logit) fit.var_m += (v - mbar) * (v - mbar);
  fit.var_m /= static_cast<double>(n);  // population variance
  return fit;
}

double rho2_x(double var_m) { return var_m / (var_m + kLogisticVar); }
double rho2_x(const PropensityFit& fit) { return rho2_x(fit.var_m); }

double partial_rho2(const PropensityFit& full, const PropensityFit& reduced) {
  if (!std::includes(full.covariates.begin(), full.covariates.end(), reduced.covariates.begin(),
                     reduced.covariates.end())) {
    fail(Code::USAGE, "reduced covariate set must be a subset of the full set");
  }
  const double rf = rho2_x(full);
  const double rr = rho2_x(reduced);
  double value = (rf - rr) / (1.0 - rr);
  if (value < 0.0) {
    if (value < -1e-10) fail(Code::INTERNAL, "partial rho^2 is negative beyond tolerance");
    value = 0.0;
  }
  return value;
}

double partial_r2_of_gamma(double gamma, double sigma_r, double var_m) {
  const double s2g2 = sigma_r * sigma_r * gamma * gamma;
  return s2g2 / (var_m + kLogisticVar + s2g2);
}

double gamma_of_rho2(double rho_star, double sigma_r, double var_m) {
  if (!(rho_star >= 0.0 && rho_star < 1.0)) {
    fail(Code::RHO_OUT_OF_RANGE, "rho* must lie in [0, 1)");
  }
  if (!(sigma_r > 0.0)) fail(Code::USAGE, "sigma_r must be positive");
  return std::sqrt(rho_star / (1.0 - rho_star) * (var_m + kLogisticVar)) / sigma_r;
}

double gamma_of_rho2_recursive(double rho_star, const std::function<double(double)>& sigma_r,
                               double var_m, double gamma_max) {
  if (!(rho_star >= 0.0 && rho_star < 1.0)) {
    fail(Code::RHO_OUT_OF_RANGE, "rho* must lie in [0, 1)");
  }
  if (rho_star == 0.0) return 0.0;
  const double target = std::sqrt(rho_star / (1.0 - rho_star) * (var_m + kLogisticVar));
  const auto f = [&](double g) { return sigma_r(g) * g - target; };
  // locate a sign change on [0, gamma_max]
  double lo = 0.0;
  double flo = f(0.0);
  double hi = gamma_max;
  bool bracketed = false;
  const int grid = 64;
  for (int i = 1; i <= grid; ++i) {
    const double g = gamma_max * static_cast<double>(i) / grid;
    const double fg = f(g);
    if (flo <= 0.0 && fg >= 0.0) {
      hi = g;
      bracketed = true;
      break;
    }
    lo = g;
    flo = fg;
  }
  if (!bracketed) {
    fail(Code::NO_BRACKET, "sigma_r(gamma)*gamma does not cross the calibration target on [0, " +
                               std::to_string(gamma_max) + "]");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::abs(fm) <= 1e-8) return mid;
    if (fm < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double omega_of_rho2(double rho_star, double p_class, double var_m) {
  if (!(p_class > 0.0 && p_class < 1.0)) fail(Code::USAGE, "class probability must lie in (0,1)");
  return gamma_of_rho2(rho_star, std::sqrt(p_class * (1.0 - p_class)), var_m);
}

std::array<double, 2> residual_sd(const ObservedFit& fit) {
  std::array<double, 2> out{};
  for (int arm = 0; arm < 2; ++arm) {
    const ArmFit& af = fit.arms[arm];
    if (af.pooled()) {
      out[arm] = std::sqrt(variance(af.units[0]));
    } else {
      double acc = 0.0;
      for (const auto& unit : af.units) acc += variance(unit);
      out[arm] = std::sqrt(acc / static_cast<double>(af.units.size()));
    }
  }
  return out;
}

CalibrationReport build_calibration_report(const Dataset& data, const ObservedFit& fit,
                                           const std::vector<std::size_t>& covariates,
                                           const std::vector<double>& rho_stars) {
  CalibrationReport report;
  const PropensityFit full = fit_propensity(data, covariates);
  report.var_m = full.var_m;
  report.rho2_x = rho2_x(full);
  report.sigma_r = residual_sd(fit);
  report.has_binary_part = fit.two_part();
  if (report.has_binary_part) {
    for (int arm = 0; arm < 2; ++arm) report.class_p[arm] = 1.0 - fit.atom[arm].value_or(0.0);
  }

  for (std::size_t j : covariates) {
    std::vector<std::size_t> reduced_cols;
    for (std::size_t c : covariates) {
      if (c != j) reduced_cols.push_back(c);
    }
    const PropensityFit reduced = fit_propensity(data, reduced_cols);
    CovariateBenchmark b;
    b.name = data.covariate_names[j];
    b.rho2_partial = partial_rho2(full, reduced);
    b.implied_gamma0 = gamma_of_rho2(b.rho2_partial, report.sigma_r[0], report.var_m);
    b.implied_gamma1 = gamma_of_rho2(b.rho2_partial, report.sigma_r[1], report.var_m);
    report.benchmarks.push_back(std::move(b));
  }

  for (double rho : rho_stars) {
    CalibrationRow row;
    row.rho_star = rho;
    row.gamma0 = gamma_of_rho2(rho, report.sigma_r[0], report.var_m);
    row.gamma1 = gamma_of_rho2(rho, report.sigma_r[1], report.var_m);
    if (report.has_binary_part) {
      row.omega0 = omega_of_rho2(rho, report.class_p[0], report.var_m);
      row.omega1 = omega_of_rho2(rho, report.class_p[1], report.var_m);
      row.has_omega = true;
    }
    report.mapping.push_back(row);
  }
  return report;
}

std::string CalibrationReport::to_json() const {
  nlohmann::json j;
  j["var_m"] = var_m;
  j["rho2_x"] = rho2_x;
  j["sigma_r"] = sigma_r;
  if (has_binary_part) {
    j["binary_part"]["class_p"] = class_p;
    j["binary_part"]["sigma_r_rule"] =
        "sqrt(p*(1-p)) of the fitted observed-arm class indicator";
  }
  for (const auto& b : benchmarks) {
    j["benchmarks"].push_back({{"covariate", b.name},
                               {"rho2_partial", b.rho2_partial},
                               {"implied_gamma0", b.implied_gamma0},
                               {"implied_gamma1", b.implied_gamma1}});
  }
  for (const auto& row : mapping) {
    nlohmann::json r{{"rho_star", row.rho_star},
                     {"gamma0", row.gamma0},
                     {"gamma1", row.gamma1}};
    if (row.has_omega) {
      r["omega0"] = row.omega0;
      r["omega1"] = row.omega1;
    }
    j["mapping"].push_back(std::move(r));
  }
  return j.dump(1);
}

std::string CalibrationReport::to_table() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "Var(m(X)) = %.4f   rho2_X = %.4f   sigma_r = (%.4f, %.4f)\n",
                var_m, rho2_x, sigma_r[0], sigma_r[1]);
  out << buf;
  if (has_binary_part) {
    std::snprintf(buf, sizeof buf,
                  "binary part: class_p = (%.4f, %.4f), sigma_r rule sqrt(p(1-p))\n", class_p[0],
                  class_p[1]);
    out << buf;
  }
  out << "\ncovariate            rho2_partial  implied_gamma0  implied_gamma1\n";
  for (const auto& b : benchmarks) {
    std::snprintf(buf, sizeof buf, "%-20s %12.5f %15.5f %15.5f\n", b.name.c_str(), b.rho2_partial,
                  b.implied_gamma0, b.implied_gamma1);
    out << buf;
  }
  if (!mapping.empty()) {
    out << "\nrho_star     |gamma0|     |gamma1|";
    if (mapping.front().has_omega) out << "     |omega0|     |omega1|";
    out << '\n';
    for (const auto& row : mapping) {
      std::snprintf(buf, sizeof buf, "%8.4f %12.5f %12.5f", row.rho_star, row.gamma0, row.gamma1);
      out << buf;
      if (row.has_omega) {
        std::snprintf(buf, sizeof buf, " %12.5f %12.5f", row.omega0, row.omega1);
        out << buf;
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace tiltsense
