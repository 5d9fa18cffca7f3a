#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tiltsense/estimands.hpp"
#include "tiltsense/observed.hpp"

namespace tiltsense {

/// Hidden ground truth written alongside generated datasets (test use only).
struct Truth {
  std::vector<double> u;
  std::vector<double> y0, y1;
  std::optional<std::vector<int>> w0, w1;
};

struct SimResult {
  Dataset data;
  Truth truth;
};

void write_truth_json(const Truth& truth, const std::string& path);

/// Binary latent confounder with Normal outcomes:
///   U ~ Bern(xi_u), T|U ~ Bern(expit(alpha + psi_t U)),
///   Y(t)|U ~ N(mu_t + psi_y U, sigma2).
/// The observed arms are two-component Normal mixtures; fitting this model
/// with the sensitivity parameters fixed at the wrong values produces visible
/// misfit (see misfit_demo).
struct LatentConfounderDGP {
  double xi_u = 0.5;
  double alpha = 0.0;
  double psi_t = -1.0;
  double mu0 = 0.0, mu1 = 0.0;
  double psi_y = 5.0;
  double sigma2 = 1.0;
};
SimResult gen_latent_confounder(const LatentConfounderDGP& dgp, std::size_t n, std::uint64_t seed);

/// Latent two-class model with one covariate:
///   T ~ Bern(1/2); X|T=1 ~ N(-1,1), X|T=0 ~ N(1,1);
///   U(1)|X,T ~ Bern(expit(beta X + omega1 I{T=1} + tau));
///   U(0)|X,T ~ Bern(expit(beta X + omega0 I{T=1}));
///   Y(t)|U(t)=0 ~ N(mu_lo, sd_lo^2), U(t)=1 ~ N(mu_hi, sd_hi^2).
struct LatentClassDGP {
  double beta = 1.0;
  double omega0 = 1.0, omega1 = 1.0;
  double tau = 0.0;
  double mu_lo = 0.0, sd_lo = 1.0;
  double mu_hi = 5.0, sd_hi = 2.0;
};
SimResult gen_latent_class(const LatentClassDGP& dgp, std::size_t n, std::uint64_t seed);

/// The DGP's omega bumps enter through I{T=1} in both arms, while the analysis
/// convention shifts observed-to-missing per arm; the true analysis point is
/// therefore (omega0, -omega1).
SensitivityPoint latent_class_analysis_point(const LatentClassDGP& dgp);

/// Zero-inflated (two-part) income surrogate. A shared employability/earnings
/// baseline drives both arms; treatment may select on the arm-1 outcomes
/// through (sel_gamma, sel_omega).
struct ZeroInflatedArm {
  double employ_logit = 1.0;                  // P(W=1) = expit(employ_logit)
  std::vector<double> w{1.0};                 // log-income mixture
  std::vector<double> mu{2.0};
  std::vector<double> sd{0.5};
};
struct ZeroInflatedDGP {
  ZeroInflatedArm arm0, arm1;
  double sel_gamma = 0.0;
  double sel_omega = 0.0;
};
SimResult gen_zero_inflated(const ZeroInflatedDGP& dgp, std::size_t n, std::uint64_t seed);

/// Binary outcome with a Normal latent confounder and one covariate:
///   U ~ N(0,1), X ~ N(0,1), T ~ Bern(expit(beta X + psi_t U)),
///   Y(t) ~ Bern(expit(alpha X + psi_y U)).
/// With psi_t and psi_y of opposite sign the observed mean surface
/// E[Y|X, T=0] is non-monotone in X.
struct BinaryNormalConfounderDGP {
  double beta = 1.0;
  double psi_t = 2.0;
  double alpha = 1.0;
  double psi_y = -2.0;
};
SimResult gen_binary_normal_confounder(const BinaryNormalConfounderDGP& dgp, std::size_t n,
                                       std::uint64_t seed);

/// Maximum-likelihood fit of the latent-confounder observed model with
/// (psi_t, psi_y) held fixed, plus the per-arm KS distance between the fitted
/// and empirical observed CDFs. Nelder-Mead over (mu0, mu1, sigma, xi_u,
/// alpha) with the stated number of restarts, ties broken by likelihood.
struct MisfitReport {
  double ks0 = 0.0, ks1 = 0.0;
  double loglik = 0.0;
  double mu0 = 0.0, mu1 = 0.0, sigma2 = 1.0, xi_u = 0.5, alpha = 0.0;
};
MisfitReport misfit_demo(const Dataset& data, double psi_t, double psi_y, int restarts = 20,
                         std::uint64_t seed = 7);

}  // namespace tiltsense
