#pragma once

#include <cstddef>
#include <vector>

#include "tiltsense/errors.hpp"
#include "tiltsense/rng.hpp"

namespace tiltsense {

enum class Family { Bernoulli, Normal };

/// Coefficients on the sufficient statistics s(y) = (y, y^2).
/// `quadratic` must be 0 for Bernoulli targets.
struct TiltVector {
  double linear = 0.0;
  double quadratic = 0.0;

  bool zero() const { return linear == 0.0 && quadratic == 0.0; }
  TiltVector operator+(const TiltVector& o) const {
    return {linear + o.linear, quadratic + o.quadratic};
  }
  TiltVector operator-() const { return {-linear, -quadratic}; }
};

/// One exponential-family component. Both parameter views are kept consistent:
/// tilting acts on the natural parameters, reporting reads the mean parameters.
///
/// Natural parameterization:
///   Bernoulli: eta1 = logit(p),            A(eta) = log(1 + exp(eta1))
///   Normal:    eta1 = mu / sigma2,
///              eta2 = -1 / (2 sigma2),     A(eta) = -eta1^2/(4 eta2) - 0.5 log(-2 eta2)
class UnivariateEF {
 public:
  static UnivariateEF bernoulli(double p);
  static UnivariateEF normal(double mean, double variance);
  static UnivariateEF from_natural(Family family, double eta1, double eta2 = 0.0);

  Family family() const { return family_; }
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  double sd() const;

  double eta1() const { return eta1_; }
  double eta2() const { return eta2_; }
  /// Log-partition A(eta); log g(eta) = -A(eta).
  double log_normalizer() const;

  double pdf(double y) const;
  double log_pdf(double y) const;
  double cdf(double y) const;
  double quantile(double q) const;
  double sample(Rng& rng) const;

 private:
  UnivariateEF() = default;
  Family family_ = Family::Normal;
  double mean_ = 0.0;
  double variance_ = 1.0;
  double eta1_ = 0.0;
  double eta2_ = -0.5;
};

/// Whether eta + tv stays in the natural parameter space (for Normal:
/// 1 - 2*quadratic*sigma2 > 0; linear tilts are always proper).
bool tilt_proper(const UnivariateEF& dist, const TiltVector& tv);

/// Throws PROPRIETY_VIOLATION / FAMILY_MISMATCH when the tilt is inadmissible.
void require_proper(const UnivariateEF& dist, const TiltVector& tv);

/// Exponential tilt: density reweighted by exp(tv . s(y)), i.e. the
/// natural-parameter shift eta* = eta + tv. Zero tilts return the input bit-for-bit.
UnivariateEF tilt(const UnivariateEF& dist, const TiltVector& tv);

/// log of the normalizing constant C = E[exp(tv . s(Y))] = A(eta + tv) - A(eta).
double log_tilt_constant(const UnivariateEF& dist, const TiltVector& tv);

/// Finite mixture of same-family components with an optional point mass at 0
/// (two-part models). weights + zero_atom must sum to 1.
class MixtureDist {
 public:
  MixtureDist(std::vector<UnivariateEF> components, std::vector<double> weights,
              double zero_atom = 0.0);
  /// Single-component mixture; degenerate mixtures use the same code paths.
  explicit MixtureDist(const UnivariateEF& single);

  const std::vector<UnivariateEF>& components() const { return components_; }
  const std::vector<double>& weights() const { return weights_; }
  double zero_atom() const { return zero_atom_; }
  std::size_t size() const { return components_.size(); }
  Family family() const { return components_.front().family(); }

  double pdf(double y) const;  // continuous part only; excludes the atom

 private:
  std::vector<UnivariateEF> components_;
  std::vector<double> weights_;
  double zero_atom_ = 0.0;
};

bool tilt_proper(const MixtureDist& mix, const TiltVector& tv);

/// Tilts every component and reweights by the normalizer ratio
/// pi*_k ∝ pi_k g_k(eta_k)/g_k(eta*_k), computed in log space. The zero atom
/// is carried through unchanged; atom shifts are a separate operation on
/// two-part fits.
MixtureDist tilt_mixture(const MixtureDist& mix, const TiltVector& tv);

double mean(const UnivariateEF& dist);
double mean(const MixtureDist& mix);
double variance(const UnivariateEF& dist);
double variance(const MixtureDist& mix);

/// Right-continuous CDF; the zero atom contributes its full mass at y >= 0.
double cdf(const MixtureDist& mix, double y);

/// Inverse CDF by bisection to |cdf - q| <= 1e-10; returns exactly 0 when the
/// zero atom spans q. Requires 0 < q < 1.
double quantile(const MixtureDist& mix, double q);

double sample(const MixtureDist& mix, Rng& rng);

/// Trapezoid-quadrature tilt of a tabulated density; the independent check on
/// the closed forms above. Lives in the library for diagnostics but is only
/// exercised by tests and the `check` subcommand.
struct TiltOracleResult {
  std::vector<double> grid;
  std::vector<double> density;    // tilted, normalized
  double log_constant = 0.0;      // log of the quadrature normalizer
};

/// Grid spans `span_sd` component standard deviations around all component
/// means with at least `nodes` trapezoid nodes. Bernoulli mixtures are handled
/// as exact two-point sums. Throws GRID_TOO_NARROW if the untilted tail mass
/// beyond the grid exceeds 1e-9.
TiltOracleResult numeric_tilt_oracle(const MixtureDist& mix, const TiltVector& tv,
                                     std::size_t nodes = 8192, double span_sd = 12.0);

double logit(double p);
double expit(double x);
double normal_cdf(double z);

}  // namespace tiltsense
