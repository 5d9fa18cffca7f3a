#include "tiltsense/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace tiltsense {

namespace {

std::size_t pick_component(const std::vector<double>& w, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return k;
  }
  return w.size() - 1;
}

/// Nelder-Mead minimizer for the small ML problems in this module.
std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x0, double scale, int max_iter) {
  const std::size_t d = x0.size();
  std::vector<std::vector<double>> simplex(d + 1, x0);
  std::vector<double> fx(d + 1);
  for (std::size_t j = 0; j < d; ++j) simplex[j + 1][j] += scale;
  for (std::size_t j = 0; j <= d; ++j) fx[j] = f(simplex[j]);

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<std::size_t> order(d + 1);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
    {
      std::vector<std::vector<double>> s2(d + 1);
      std::vector<double> f2(d + 1);
      for (std::size_t j = 0; j <= d; ++j) {
        s2[j] = simplex[order[j]];
        f2[j] = fx[order[j]];
      }
      simplex.swap(s2);
      fx.swap(f2);
    }
    if (std::abs(fx[d] - fx[0]) <= 1e-10 * (1.0 + std::abs(fx[0]))) break;

    std::vector<double> centroid(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) centroid[k] += simplex[j][k];
    }
    for (double& c : centroid) c /= static_cast<double>(d);

    const auto blend = [&](double t) {
      std::vector<double> p(d);
      for (std::size_t k = 0; k < d; ++k) p[k] = centroid[k] + t * (simplex[d][k] - centroid[k]);
      return p;
    };
    const std::vector<double> xr = blend(-1.0);
    const double fr = f(xr);
    if (fr < fx[0]) {
      const std::vector<double> xe = blend(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[d] = xe;
        fx[d] = fe;
      } else {
        simplex[d] = xr;
        fx[d] = fr;
      }
    } else if (fr < fx[d - 1]) {
      simplex[d] = xr;
      fx[d] = fr;
    } else {
      const std::vector<double> xc = blend(fr < fx[d] ? -0.5 : 0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, fx[d])) {
        simplex[d] = xc;
        fx[d] = fc;
      } else {
        for (std::size_t j = 1; j <= d; ++j) {
          for (std::size_t k = 0; k < d; ++k) {
            simplex[j][k] = simplex[0][k] + 0.5 * (simplex[j][k] - simplex[0][k]);
          }
          fx[j] = f(simplex[j]);
        }
      }
    }
  }
  const std::size_t best =
      static_cast<std::size_t>(std::min_element(fx.begin(), fx.end()) - fx.begin());
  return simplex[best];
}

double norm_logpdf(double y, double mu, double sigma2) {
  const double z = y - mu;
  return -0.5 * z * z / sigma2 - 0.5 * std::log(sigma2) - 0.9189385332046727;
}

}  // namespace

void write_truth_json(const Truth& truth, const std::string& path) {
  nlohmann::json j;
  if (!truth.u.empty()) j["u"] = truth.u;
  j["y0"] = truth.y0;
  j["y1"] = truth.y1;
  if (truth.w0.has_value()) j["w0"] = *truth.w0;
  if (truth.w1.has_value()) j["w1"] = *truth.w1;
  std::ofstream out(path);
  if (!out) fail(Code::DATA, "cannot write truth file: " + path);
  out << j.dump() << '\n';
}

SimResult gen_latent_confounder(const LatentConfounderDGP& dgp, std::size_t n,
                                std::uint64_t seed) {
  if (!(dgp.sigma2 > 0.0) || !(dgp.xi_u > 0.0 && dgp.xi_u < 1.0)) {
    fail(Code::USAGE, "latent-confounder DGP needs sigma2 > 0 and xi_u in (0,1)");
  }
  Rng rng(seed);
  SimResult out;
  const double sd = std::sqrt(dgp.sigma2);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.bernoulli(dgp.xi_u) ? 1.0 : 0.0;
    const int t = rng.bernoulli(expit(dgp.alpha + dgp.psi_t * u)) ? 1 : 0;
    const double y0 = dgp.mu0 + dgp.psi_y * u + rng.normal(0.0, sd);
    const double y1 = dgp.mu1 + dgp.psi_y * u + rng.normal(0.0, sd);
    out.truth.u.push_back(u);
    out.truth.y0.push_back(y0);
    out.truth.y1.push_back(y1);
    out.data.y.push_back(t == 1 ? y1 : y0);
    out.data.t.push_back(t);
    out.data.x.emplace_back();
  }
  out.data.validate();
  return out;
}

SimResult gen_latent_class(const LatentClassDGP& dgp, std::size_t n, std::uint64_t seed) {
  if (!(dgp.sd_lo > 0.0 && dgp.sd_hi > 0.0)) fail(Code::USAGE, "class sds must be positive");
  Rng rng(seed);
  SimResult out;
  out.data.covariate_names = {"x"};
  for (std::size_t i = 0; i < n; ++i) {
    const int t = rng.bernoulli(0.5) ? 1 : 0;
    const double x = rng.normal(t == 1 ? -1.0 : 1.0, 1.0);
    const double bump = t == 1 ? 1.0 : 0.0;
    const int u1 = rng.bernoulli(expit(dgp.beta * x + dgp.omega1 * bump + dgp.tau)) ? 1 : 0;
    const int u0 = rng.bernoulli(expit(dgp.beta * x + dgp.omega0 * bump)) ? 1 : 0;
    const auto draw = [&](int u) {
      return u == 0 ? rng.normal(dgp.mu_lo, dgp.sd_lo) : rng.normal(dgp.mu_hi, dgp.sd_hi);
    };
    const double y0 = draw(u0);
    const double y1 = draw(u1);
    out.truth.u.push_back(t == 1 ? u1 : u0);
    out.truth.y0.push_back(y0);
    out.truth.y1.push_back(y1);
    out.data.y.push_back(t == 1 ? y1 : y0);
    out.data.t.push_back(t);
    out.data.x.push_back({x});
  }
  out.data.validate();
  return out;
}

SensitivityPoint latent_class_analysis_point(const LatentClassDGP& dgp) {
  return SensitivityPoint{dgp.omega0, -dgp.omega1};
}

SimResult gen_zero_inflated(const ZeroInflatedDGP& dgp, std::size_t n, std::uint64_t seed) {
  for (const auto* arm : {&dgp.arm0, &dgp.arm1}) {
    if (arm->w.size() != arm->mu.size() || arm->w.size() != arm->sd.size() || arm->w.empty()) {
      fail(Code::USAGE, "zero-inflated arm needs matching mixture vectors");
    }
  }
  Rng rng(seed);
  SimResult out;
  out.data.w.emplace();
  out.truth.w0.emplace();
  out.truth.w1.emplace();

  struct UnitDraw {
    int w0, w1;
    double y0, y1;
    double lin;  // selection linear predictor
  };
  std::vector<UnitDraw> units(n);
  double lin_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u_work = rng.uniform();
    const double u_comp = rng.uniform();
    const double z = rng.normal();
    const auto draw_arm = [&](const ZeroInflatedArm& arm, int& w, double& y) {
      w = u_work < expit(arm.employ_logit) ? 1 : 0;
      const std::size_t k = pick_component(arm.w, u_comp);
      y = w == 1 ? std::exp(arm.mu[std::min(k, arm.mu.size() - 1)] +
                            arm.sd[std::min(k, arm.sd.size() - 1)] * z)
                 : 0.0;
    };
    draw_arm(dgp.arm0, units[i].w0, units[i].y0);
    draw_arm(dgp.arm1, units[i].w1, units[i].y1);
    units[i].lin = dgp.sel_gamma * (units[i].w1 == 1 ? std::log(units[i].y1) : 0.0) +
                   dgp.sel_omega * (units[i].w1 == 0 ? 1.0 : 0.0);
    lin_sum += units[i].lin;
  }
  const double center = lin_sum / static_cast<double>(n);
  const bool confounded = dgp.sel_gamma != 0.0 || dgp.sel_omega != 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = rng.bernoulli(confounded ? expit(units[i].lin - center) : 0.5) ? 1 : 0;
    out.data.t.push_back(t);
    out.data.y.push_back(t == 1 ? units[i].y1 : units[i].y0);
    out.data.w->push_back(t == 1 ? units[i].w1 : units[i].w0);
    out.data.x.emplace_back();
    out.truth.y0.push_back(units[i].y0);
    out.truth.y1.push_back(units[i].y1);
    out.truth.w0->push_back(units[i].w0);
    out.truth.w1->push_back(units[i].w1);
  }
  out.data.validate();
  return out;
}

SimResult gen_binary_normal_confounder(const BinaryNormalConfounderDGP& dgp, std::size_t n,
                                       std::uint64_t seed) {
  Rng rng(seed);
  SimResult out;
  out.data.covariate_names = {"x"};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    const double u = rng.normal();
    const int t = rng.bernoulli(expit(dgp.beta * x + dgp.psi_t * u)) ? 1 : 0;
    const double y0 = rng.bernoulli(expit(dgp.alpha * x + dgp.psi_y * u)) ? 1.0 : 0.0;
    const double y1 = rng.bernoulli(expit(dgp.alpha * x + dgp.psi_y * u)) ? 1.0 : 0.0;
    out.truth.u.push_back(u);
    out.truth.y0.push_back(y0);
    out.truth.y1.push_back(y1);
    out.data.y.push_back(t == 1 ? y1 : y0);
    out.data.t.push_back(t);
    out.data.x.push_back({x});
  }
  out.data.validate();
  return out;
}

MisfitReport misfit_demo(const Dataset& data, double psi_t, double psi_y, int restarts,
                         std::uint64_t seed) {
  data.validate();
  std::array<std::vector<double>, 2> ys{data.arm_outcomes(0), data.arm_outcomes(1)};
  if (ys[0].empty() || ys[1].empty()) fail(Code::EMPTY_STRATUM, "both arms must be non-empty");

  // theta = (mu0, mu1, log sigma, logit xi_u, alpha)
  const auto nll = [&](const std::vector<double>& theta) {
    const double mu0 = theta[0], mu1 = theta[1];
    const double sigma2 = std::exp(2.0 * theta[2]);
    const double xi = expit(theta[3]);
    const double alpha = theta[4];
    const double g1 = expit(alpha + psi_t);
    const double g0 = expit(alpha);
    const double pt1 = xi * g1 + (1.0 - xi) * g0;
    if (!(pt1 > 1e-12 && pt1 < 1.0 - 1e-12)) return 1e12;
    const double h[2] = {xi * (1.0 - g1) / (1.0 - pt1), xi * g1 / pt1};
    const double mu[2] = {mu0, mu1};
    double ll = 0.0;
    for (int arm = 0; arm < 2; ++arm) {
      const double n_arm = static_cast<double>(ys[arm].size());
      ll += n_arm * (arm == 1 ? std::log(pt1) : std::log(1.0 - pt1));
      for (double y : ys[arm]) {
        const double la = std::log(std::max(h[arm], 1e-300)) + norm_logpdf(y, mu[arm] + psi_y, sigma2);
        const double lb =
            std::log(std::max(1.0 - h[arm], 1e-300)) + norm_logpdf(y, mu[arm], sigma2);
        const double m = std::max(la, lb);
        ll += m + std::log(std::exp(la - m) + std::exp(lb - m));
      }
    }
    return -ll;
  };

  const auto arm_stats = [&](int arm) {
    double m = 0.0, v = 0.0;
    for (double y : ys[arm]) m += y;
    m /= static_cast<double>(ys[arm].size());
    for (double y : ys[arm]) v += (y - m) * (y - m);
    v /= static_cast<double>(ys[arm].size());
    return std::pair<double, double>{m, v};
  };
  const auto [m0, v0] = arm_stats(0);
  const auto [m1, v1] = arm_stats(1);

  Rng rng(seed);
  std::vector<double> best;
  double best_nll = 1e300;
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    std::vector<double> theta0 = {m0 + rng.normal(0.0, 1.0), m1 + rng.normal(0.0, 1.0),
                                  0.5 * std::log(std::max(0.5 * (v0 + v1), 1e-6)) +
                                      rng.normal(0.0, 0.3),
                                  rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
    const std::vector<double> theta = nelder_mead(nll, theta0, 0.5, 800);
    const double value = nll(theta);
    if (value < best_nll) {
      best_nll = value;
      best = theta;
    }
  }

  MisfitReport report;
  report.loglik = -best_nll;
  report.mu0 = best[0];
  report.mu1 = best[1];
  report.sigma2 = std::exp(2.0 * best[2]);
  report.xi_u = expit(best[3]);
  report.alpha = best[4];

  const double g1 = expit(report.alpha + psi_t);
  const double g0 = expit(report.alpha);
  const double pt1 = report.xi_u * g1 + (1.0 - report.xi_u) * g0;
  const double h[2] = {report.xi_u * (1.0 - g1) / (1.0 - pt1), report.xi_u * g1 / pt1};
  const double sd = std::sqrt(report.sigma2);
  const double mu[2] = {report.mu0, report.mu1};
  double ks[2];
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> sorted = ys[arm];
    std::sort(sorted.begin(), sorted.end());
    const double n_arm = static_cast<double>(sorted.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const double f = h[arm] * normal_cdf((sorted[i] - mu[arm] - psi_y) / sd) +
                       (1.0 - h[arm]) * normal_cdf((sorted[i] - mu[arm]) / sd);
      worst = std::max(worst, std::abs(f - static_cast<double>(i + 1) / n_arm));
      worst = std::max(worst, std::abs(f - static_cast<double>(i) / n_arm));
    }
    ks[arm] = worst;
  }
  report.ks0 = ks[0];
  report.ks1 = ks[1];
  return report;
}

}  // namespace tiltsense
