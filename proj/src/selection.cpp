#include "tiltsense/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace tiltsense {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_arm(int arm) {
  if (arm != 0 && arm != 1) fail(Code::USAGE, "arm must be 0 or 1");
}

/// log E_obs[exp(tv . s(Y))] for a mixture, atom included (s(0) = 0).
double log_mixture_mgf(const MixtureDist& obs, const TiltVector& tv) {
  std::vector<double> terms;
  terms.reserve(obs.size() + 1);
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (obs.weights()[k] <= 0.0) continue;
    terms.push_back(std::log(obs.weights()[k]) + log_tilt_constant(obs.components()[k], tv));
  }
  if (obs.zero_atom() > 0.0) terms.push_back(std::log(obs.zero_atom()));
  double m = -kInf;
  for (double t : terms) m = std::max(m, t);
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}
}  // namespace

TreatmentPrevalence TreatmentPrevalence::from_counts(long n0, long n1) {
  if (n0 <= 0 || n1 <= 0) fail(Code::DATA, "both treatment arms must be non-empty");
  TreatmentPrevalence prev;
  prev.n0 = n0;
  prev.n1 = n1;
  prev.p1 = static_cast<double>(n1) / static_cast<double>(n0 + n1);
  return prev;
}

TreatmentPrevalence TreatmentPrevalence::from_probability(double p1) {
  if (!(p1 > 0.0 && p1 < 1.0)) fail(Code::INVARIANT_VIOLATION, "p1 must lie in (0,1)");
  TreatmentPrevalence prev;
  prev.p1 = p1;
  return prev;
}

TiltVector tilt_for_arm(const LogisticSelection& sel, int arm) {
  check_arm(arm);
  return arm == 0 ? sel.gamma0 : -sel.gamma1;
}

double selection_prob(const LogisticSelection& sel, int arm, double y,
                      const TreatmentPrevalence& prev, double m_x) {
  check_arm(arm);
  const auto& alpha = sel.alpha(arm);
  if (!alpha.has_value()) {
    fail(Code::ALPHA_UNSOLVED, "selection intercept for arm " + std::to_string(arm) +
                                   " has not been solved; call solve_alpha first");
  }
  const TiltVector& g = sel.gamma(arm);
  const double offset = m_x - logit(prev.p1);
  return expit(*alpha + offset + g.linear * y + g.quadratic * y * y);
}

double selection_prob(const LogisticSelection& sel, int arm, double y,
                      const TreatmentPrevalence& prev) {
  return selection_prob(sel, arm, y, prev, logit(prev.p1));
}

double latent_class_missing_weight(double pi_obs, double omega) {
  if (!(pi_obs > 0.0 && pi_obs < 1.0)) {
    fail(Code::INVARIANT_VIOLATION, "observed class weight must lie in (0,1)");
  }
  if (omega == kInf) return 0.0;
  if (omega == -kInf) return 1.0;
  return expit(logit(pi_obs) - omega);
}

namespace {
/// Class-0 weights of the T=1 and T=0 groups for one arm's latent-class spec.
std::pair<double, double> group_class0_weights(const LatentClassArm& arm_model, double omega,
                                               int arm) {
  const double pi_mis = latent_class_missing_weight(arm_model.pi_obs, omega);
  const double in_t1 = arm == 1 ? arm_model.pi_obs : pi_mis;
  const double in_t0 = arm == 1 ? pi_mis : arm_model.pi_obs;
  return {in_t1, in_t0};
}
}  // namespace

double selection_prob(const LatentClassArm& arm_model, double omega, int arm,
                      const TreatmentPrevalence& prev, double y) {
  check_arm(arm);
  const auto [w1, w0] = group_class0_weights(arm_model, omega, arm);
  const double f0 = arm_model.f0.pdf(y);
  const double f1 = arm_model.f1.pdf(y);
  // work with log densities when both vanish underflow-wise
  double g1 = w1 * f0 + (1.0 - w1) * f1;
  double g0 = w0 * f0 + (1.0 - w0) * f1;
  if (g1 <= 0.0 && g0 <= 0.0) {
    // deep in a tail: decide by the dominating component's log density
    const double l0 = arm_model.f0.log_pdf(y);
    const double l1 = arm_model.f1.log_pdf(y);
    if (l0 > l1) {
      g1 = w1;
      g0 = w0;
    } else {
      g1 = 1.0 - w1;
      g0 = 1.0 - w0;
    }
  }
  return prev.p1 * g1 / (prev.p1 * g1 + prev.p0() * g0);
}

std::pair<double, double> latent_class_asymptotes(const LatentClassArm& arm_model, double omega,
                                                  int arm, const TreatmentPrevalence& prev) {
  check_arm(arm);
  const auto [w1, w0] = group_class0_weights(arm_model, omega, arm);
  const double k_minus = prev.p1 * w1 / (prev.p1 * w1 + prev.p0() * w0);
  const double k_plus =
      prev.p1 * (1.0 - w1) / (prev.p1 * (1.0 - w1) + prev.p0() * (1.0 - w0));
  return {k_minus, k_plus};
}

double solve_alpha(const MixtureDist& obs, const TiltVector& gamma,
                   const TreatmentPrevalence& prev, int arm) {
  check_arm(arm);
  // Condition 1 factors as exp(+-alpha) * E_obs[exp(+-gamma . s(Y))]:
  //   arm 0: exp(+alpha) M(+gamma) = p1/p0
  //   arm 1: exp(-alpha) M(-gamma) = p0/p1
  if (arm == 0) return logit(prev.p1) - log_mixture_mgf(obs, gamma);
  return logit(prev.p1) + log_mixture_mgf(obs, -gamma);
}

double verify_integral_constraint(const MixtureDist& obs, const LogisticSelection& sel,
                                  const TreatmentPrevalence& prev, int arm) {
  check_arm(arm);
  const auto& alpha = sel.alpha(arm);
  if (!alpha.has_value()) fail(Code::ALPHA_UNSOLVED, "alpha must be solved before verification");
  const TiltVector& g = sel.gamma(arm);
  const double sign = arm == 0 ? 1.0 : -1.0;
  const double rhs = arm == 0 ? prev.odds1() : 1.0 / prev.odds1();

  double integral = 0.0;
  if (obs.family() == Family::Bernoulli) {
    double p1 = 0.0;
    for (std::size_t k = 0; k < obs.size(); ++k) p1 += obs.weights()[k] * obs.components()[k].mean();
    const double f0 = 1.0 - p1 - obs.zero_atom();
    integral = (obs.zero_atom() + f0) * std::exp(sign * *alpha) +
               p1 * std::exp(sign * (*alpha + g.linear));
  } else {
    const TiltOracleResult grid = numeric_tilt_oracle(
        MixtureDist(obs.components(),
                    [&] {
                      // strip the atom for the continuous quadrature
                      std::vector<double> w = obs.weights();
                      const double c = 1.0 - obs.zero_atom();
                      for (double& x : w) x /= c;
                      return w;
                    }(),
                    0.0),
        TiltVector{}, 8192);
    const double h = grid.grid[1] - grid.grid[0];
    for (std::size_t i = 0; i < grid.grid.size(); ++i) {
      const double y = grid.grid[i];
      const double w = (i == 0 || i + 1 == grid.grid.size()) ? 0.5 : 1.0;
      integral += w * grid.density[i] *
                  std::exp(sign * (*alpha + g.linear * y + g.quadratic * y * y));
    }
    integral *= h * (1.0 - obs.zero_atom());
    integral += obs.zero_atom() * std::exp(sign * *alpha);
  }
  return std::abs(integral - rhs);
}

OverlapDiagnostic overlap_diagnostic(const MixtureDist& obs, const TiltVector& tv,
                                     std::size_t n_draws, std::uint64_t seed) {
  for (const auto& c : obs.components()) require_proper(c, tv);
  Rng rng(seed);
  std::vector<double> logw(n_draws);
  for (std::size_t i = 0; i < n_draws; ++i) {
    const double y = sample(obs, rng);
    logw[i] = tv.linear * y + tv.quadratic * y * y;
  }
  const double m = *std::max_element(logw.begin(), logw.end());
  double sw = 0.0, sw2 = 0.0;
  for (double lw : logw) {
    const double w = std::exp(lw - m);
    sw += w;
    sw2 += w * w;
  }
  OverlapDiagnostic out;
  out.ess_ratio = sw * sw / (static_cast<double>(n_draws) * sw2);
  out.warn = out.ess_ratio < 0.1;
  return out;
}

}  // namespace tiltsense
