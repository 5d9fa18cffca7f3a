#pragma once

#include <optional>
#include <utility>

#include "tiltsense/ef.hpp"

namespace tiltsense {

struct TreatmentPrevalence {
  double p1 = 0.5;  // f(T = 1)
  long n0 = 0;
  long n1 = 0;

  static TreatmentPrevalence from_counts(long n0, long n1);
  static TreatmentPrevalence from_probability(double p1);
  double p0() const { return 1.0 - p1; }
  double odds1() const { return p1 / (1.0 - p1); }
};

/// Logistic marginal selection, f(T=1 | Y(t)) = expit(alpha_t + gamma_t' s(Y(t))).
///
/// Sign convention (user-facing): gamma1 > 0 means units with large Y(1) are
/// over-represented among the treated; gamma0 > 0 means units with large Y(0)
/// are more likely to be treated, so the observed control average understates
/// E[Y(0)]. Internally the missing-data tilt is +gamma0 in arm 0 and -gamma1
/// in arm 1; see tilt_for_arm.
struct LogisticSelection {
  TiltVector gamma0;
  TiltVector gamma1;
  std::optional<double> alpha0;
  std::optional<double> alpha1;

  const TiltVector& gamma(int arm) const { return arm == 0 ? gamma0 : gamma1; }
  const std::optional<double>& alpha(int arm) const { return arm == 0 ? alpha0 : alpha1; }
};

/// Latent-class (two-component) selection: the class-0 weight of the missing
/// distribution is a log-odds shift of the observed class-0 weight,
/// logit(pi_mis) = logit(pi_obs) - omega_t. +/-infinity are bound sentinels.
struct LatentClassSelection {
  double omega0 = 0.0;
  double omega1 = 0.0;
  double omega(int arm) const { return arm == 0 ? omega0 : omega1; }
};

/// Pooled two-component view of one arm's observed distribution, used by the
/// latent-class selection diagnostics.
struct LatentClassArm {
  UnivariateEF f0;  // lower-median class density
  UnivariateEF f1;
  double pi_obs;    // class-0 weight among observed (T = arm) units
};

/// Tilt applied to the observed arm-t distribution to produce the missing one.
/// Arm 0 tilts by +gamma0, arm 1 by -gamma1 (Bayes-consistent direction).
TiltVector tilt_for_arm(const LogisticSelection& sel, int arm);

/// f(T=1 | Y(arm)=y) under the logistic spec. `m_x` shifts the intercept by
/// (m_x - logit(p1)) for unit-level diagnostics; pass logit(p1) (the default
/// via selection_prob(sel, arm, y, prev)) for the pooled curve.
/// Throws ALPHA_UNSOLVED when the arm's intercept has not been solved.
double selection_prob(const LogisticSelection& sel, int arm, double y,
                      const TreatmentPrevalence& prev, double m_x);
double selection_prob(const LogisticSelection& sel, int arm, double y,
                      const TreatmentPrevalence& prev);

/// f(T=1 | Y(arm)=y) implied by a latent-class spec, via Bayes on the pooled
/// group densities. Horizontal asymptotes lie strictly inside (0,1).
double selection_prob(const LatentClassArm& arm_model, double omega, int arm,
                      const TreatmentPrevalence& prev, double y);

/// Class-0 weight of the missing distribution. omega = +inf -> 0, -inf -> 1.
double latent_class_missing_weight(double pi_obs, double omega);

/// Limits of the latent-class selection probability as y -> -inf / +inf.
std::pair<double, double> latent_class_asymptotes(const LatentClassArm& arm_model, double omega,
                                                  int arm, const TreatmentPrevalence& prev);

/// Unique intercept satisfying the integral constraint
///   int f_obs(y) * selection-odds-ratio(y) dy = opposite-arm prevalence odds,
/// in closed form through the mixture MGF. Throws PROPRIETY_VIOLATION when the
/// required tilt leaves the natural parameter space.
double solve_alpha(const MixtureDist& obs, const TiltVector& gamma,
                   const TreatmentPrevalence& prev, int arm);

/// Quadrature residual |LHS - RHS| of the integral constraint; diagnostic only
/// (the tilt path never uses alpha).
double verify_integral_constraint(const MixtureDist& obs, const LogisticSelection& sel,
                                  const TreatmentPrevalence& prev, int arm);

struct OverlapDiagnostic {
  double ess_ratio = 1.0;  // (sum w)^2 / (n * sum w^2)
  bool warn = false;       // flagged when ess_ratio < 0.1
};

/// Importance-weight effective sample size of the tilt, a check on the
/// outcome-overlap condition: draws n points from obs and weights them by
/// exp(tv . s(y)).
OverlapDiagnostic overlap_diagnostic(const MixtureDist& obs, const TiltVector& tv,
                                     std::size_t n_draws, std::uint64_t seed);

}  // namespace tiltsense
