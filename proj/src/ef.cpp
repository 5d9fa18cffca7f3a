#include "tiltsense/ef.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace tiltsense {

namespace {
constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2*pi))

double logsumexp(const std::vector<double>& xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}
}  // namespace

double logit(double p) { return std::log(p) - std::log1p(-p); }
double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

namespace {
// Acklam's rational approximation refined by one Halley step against erfc;
// used only to seed samplers and bisection brackets, never as an oracle.
double normal_quantile(double q) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (q < plow) {
    const double u = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  } else if (q <= 1.0 - plow) {
    const double u = q - 0.5;
    const double r = u * u;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double u = std::sqrt(-2.0 * std::log1p(-q));
    x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  }
  const double e = normal_cdf(x) - q;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  const double u = e / pdf;
  return x - u / (1.0 + 0.5 * x * u);
}
}  // namespace

UnivariateEF UnivariateEF::bernoulli(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    fail(Code::INVARIANT_VIOLATION,
         "Bernoulli success probability must lie strictly in (0,1), got " + std::to_string(p));
  }
  UnivariateEF d;
  d.family_ = Family::Bernoulli;
  d.mean_ = p;
  d.variance_ = p * (1.0 - p);
  d.eta1_ = logit(p);
  d.eta2_ = 0.0;
  return d;
}

UnivariateEF UnivariateEF::normal(double mean, double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean)) {
    fail(Code::INVARIANT_VIOLATION,
         "Normal requires finite mean and variance > 0, got variance " + std::to_string(variance));
  }
  UnivariateEF d;
  d.family_ = Family::Normal;
  d.mean_ = mean;
  d.variance_ = variance;
  d.eta1_ = mean / variance;
  d.eta2_ = -0.5 / variance;
  return d;
}

UnivariateEF UnivariateEF::from_natural(Family family, double eta1, double eta2) {
  if (family == Family::Bernoulli) {
    if (eta2 != 0.0) fail(Code::FAMILY_MISMATCH, "Bernoulli has no quadratic natural parameter");
    return bernoulli(expit(eta1));
  }
  if (!(eta2 < 0.0)) {
    fail(Code::PROPRIETY_VIOLATION, "Normal natural parameter eta2 must be negative");
  }
  const double variance = -0.5 / eta2;
  return normal(eta1 * variance, variance);
}

double UnivariateEF::sd() const { return std::sqrt(variance_); }

double UnivariateEF::log_normalizer() const {
  if (family_ == Family::Bernoulli) {
    // log(1 + e^eta), stable for large |eta|
    return eta1_ > 0.0 ? eta1_ + std::log1p(std::exp(-eta1_)) : std::log1p(std::exp(eta1_));
  }
  return -eta1_ * eta1_ / (4.0 * eta2_) - 0.5 * std::log(-2.0 * eta2_);
}

double UnivariateEF::log_pdf(double y) const {
  if (family_ == Family::Bernoulli) {
    if (y == 1.0) return std::log(mean_);
    if (y == 0.0) return std::log1p(-mean_);
    return -std::numeric_limits<double>::infinity();
  }
  const double z = y - mean_;
  return -0.5 * z * z / variance_ - 0.5 * std::log(variance_) - kLogSqrt2Pi;
}

double UnivariateEF::pdf(double y) const { return std::exp(log_pdf(y)); }

double UnivariateEF::cdf(double y) const {
  if (family_ == Family::Bernoulli) {
    if (y < 0.0) return 0.0;
    if (y < 1.0) return 1.0 - mean_;
    return 1.0;
  }
  return normal_cdf((y - mean_) / sd());
}

double UnivariateEF::quantile(double q) const {
  if (!(q > 0.0 && q < 1.0)) fail(Code::Q_OUT_OF_RANGE, "quantile requires 0 < q < 1");
  if (family_ == Family::Bernoulli) return q <= 1.0 - mean_ ? 0.0 : 1.0;
  return mean_ + sd() * normal_quantile(q);
}

double UnivariateEF::sample(Rng& rng) const {
  if (family_ == Family::Bernoulli) return rng.bernoulli(mean_) ? 1.0 : 0.0;
  return rng.normal(mean_, sd());
}

bool tilt_proper(const UnivariateEF& dist, const TiltVector& tv) {
  if (dist.family() == Family::Bernoulli) return tv.quadratic == 0.0;
  return 1.0 - 2.0 * tv.quadratic * dist.variance() > 0.0;
}

void require_proper(const UnivariateEF& dist, const TiltVector& tv) {
  if (dist.family() == Family::Bernoulli && tv.quadratic != 0.0) {
    fail(Code::FAMILY_MISMATCH, "quadratic tilt is undefined for Bernoulli outcomes");
  }
  if (!tilt_proper(dist, tv)) {
    fail(Code::PROPRIETY_VIOLATION,
         "tilted Normal is improper: 1 - 2*quadratic*sigma2 = " +
             std::to_string(1.0 - 2.0 * tv.quadratic * dist.variance()));
  }
}

UnivariateEF tilt(const UnivariateEF& dist, const TiltVector& tv) {
  require_proper(dist, tv);
  if (tv.zero()) return dist;
  if (dist.family() == Family::Bernoulli) {
    return UnivariateEF::from_natural(Family::Bernoulli, dist.eta1() + tv.linear);
  }
  return UnivariateEF::from_natural(Family::Normal, dist.eta1() + tv.linear,
                                    dist.eta2() + tv.quadratic);
}

double log_tilt_constant(const UnivariateEF& dist, const TiltVector& tv) {
  require_proper(dist, tv);
  if (tv.zero()) return 0.0;
  return tilt(dist, tv).log_normalizer() - dist.log_normalizer();
}

MixtureDist::MixtureDist(std::vector<UnivariateEF> components, std::vector<double> weights,
                         double zero_atom)
    : components_(std::move(components)), weights_(std::move(weights)), zero_atom_(zero_atom) {
  if (components_.empty() || components_.size() != weights_.size()) {
    fail(Code::INVARIANT_VIOLATION, "mixture needs matching, nonempty components and weights");
  }
  const Family f = components_.front().family();
  for (const auto& c : components_) {
    if (c.family() != f) fail(Code::FAMILY_MISMATCH, "mixture components must share one family");
  }
  double total = zero_atom_;
  for (double w : weights_) {
    if (w < 0.0) fail(Code::INVARIANT_VIOLATION, "mixture weights must be nonnegative");
    total += w;
  }
  if (zero_atom_ < 0.0 || zero_atom_ >= 1.0) {
    fail(Code::INVARIANT_VIOLATION, "zero atom must lie in [0,1)");
  }
  if (std::abs(total - 1.0) > 1e-12) {
    fail(Code::INVARIANT_VIOLATION,
         "mixture weights plus zero atom must sum to 1, got " + std::to_string(total));
  }
}

MixtureDist::MixtureDist(const UnivariateEF& single)
    : components_{single}, weights_{1.0}, zero_atom_(0.0) {}

double MixtureDist::pdf(double y) const {
  double p = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) p += weights_[k] * components_[k].pdf(y);
  return p;
}

bool tilt_proper(const MixtureDist& mix, const TiltVector& tv) {
  return std::all_of(mix.components().begin(), mix.components().end(),
                     [&](const UnivariateEF& c) { return tilt_proper(c, tv); });
}

MixtureDist tilt_mixture(const MixtureDist& mix, const TiltVector& tv) {
  if (tv.zero()) {
    for (const auto& c : mix.components()) require_proper(c, tv);
    return mix;
  }
  std::vector<UnivariateEF> tilted;
  std::vector<double> logw;
  tilted.reserve(mix.size());
  logw.reserve(mix.size());
  for (std::size_t k = 0; k < mix.size(); ++k) {
    tilted.push_back(tilt(mix.components()[k], tv));
    const double logc = tilted.back().log_normalizer() - mix.components()[k].log_normalizer();
    logw.push_back(std::log(std::max(mix.weights()[k], 1e-300)) + logc);
  }
  const double lse = logsumexp(logw);
  std::vector<double> weights(mix.size());
  const double continuous_mass = 1.0 - mix.zero_atom();
  for (std::size_t k = 0; k < mix.size(); ++k) {
    weights[k] = continuous_mass * std::exp(logw[k] - lse);
  }
  return MixtureDist(std::move(tilted), std::move(weights), mix.zero_atom());
}

double mean(const UnivariateEF& dist) { return dist.mean(); }

double mean(const MixtureDist& mix) {
  double m = 0.0;
  for (std::size_t k = 0; k < mix.size(); ++k) m += mix.weights()[k] * mix.components()[k].mean();
  return m;  // the zero atom contributes 0
}

double variance(const UnivariateEF& dist) { return dist.variance(); }

double variance(const MixtureDist& mix) {
  const double m = mean(mix);
  double second = 0.0;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const auto& c = mix.components()[k];
    second += mix.weights()[k] * (c.variance() + c.mean() * c.mean());
  }
  return second - m * m;
}

double cdf(const MixtureDist& mix, double y) {
  double p = y >= 0.0 ? mix.zero_atom() : 0.0;
  for (std::size_t k = 0; k < mix.size(); ++k) p += mix.weights()[k] * mix.components()[k].cdf(y);
  return p;
}

double quantile(const MixtureDist& mix, double q) {
  if (!(q > 0.0 && q < 1.0)) fail(Code::Q_OUT_OF_RANGE, "quantile requires 0 < q < 1");
  if (mix.family() == Family::Bernoulli) {
    double p0 = mix.zero_atom();
    for (std::size_t k = 0; k < mix.size(); ++k) {
      p0 += mix.weights()[k] * (1.0 - mix.components()[k].mean());
    }
    return q <= p0 ? 0.0 : 1.0;
  }
  if (mix.zero_atom() > 0.0) {
    const double below = cdf(mix, 0.0) - mix.zero_atom();  // continuous mass at y < 0
    if (q > below && q <= below + mix.zero_atom()) return 0.0;
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& c : mix.components()) {
    lo = std::min(lo, c.mean() - 12.0 * c.sd());
    hi = std::max(hi, c.mean() + 12.0 * c.sd());
  }
  if (mix.zero_atom() > 0.0) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
  }
  // widen until the bracket is guaranteed, then bisect
  while (cdf(mix, lo) > q) lo -= std::abs(lo) + 1.0;
  while (cdf(mix, hi) < q) hi += std::abs(hi) + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double c = cdf(mix, mid);
    if (std::abs(c - q) <= 1e-10) {
      // polish: the interval may still be wide at a flat region; mid suffices
      return mid;
    }
    if (c < q) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14 * (1.0 + std::abs(mid))) break;
  }
  // converged onto a jump (atom) or the flat tolerance; return the right edge,
  // which keeps cdf(quantile(q)) >= q - 1e-10
  return hi;
}

double sample(const MixtureDist& mix, Rng& rng) {
  double u = rng.uniform();
  if (u < mix.zero_atom()) return 0.0;
  u -= mix.zero_atom();
  for (std::size_t k = 0; k < mix.size(); ++k) {
    if (u < mix.weights()[k] || k + 1 == mix.size()) return mix.components()[k].sample(rng);
    u -= mix.weights()[k];
  }
  return mix.components().back().sample(rng);
}

TiltOracleResult numeric_tilt_oracle(const MixtureDist& mix, const TiltVector& tv,
                                     std::size_t nodes, double span_sd) {
  if (mix.zero_atom() > 0.0) {
    fail(Code::INVARIANT_VIOLATION, "the quadrature oracle handles the continuous part only");
  }
  TiltOracleResult out;
  if (mix.family() == Family::Bernoulli) {
    if (tv.quadratic != 0.0) fail(Code::FAMILY_MISMATCH, "quadratic tilt on Bernoulli");
    // exact two-point sum
    out.grid = {0.0, 1.0};
    double p1 = 0.0;
    for (std::size_t k = 0; k < mix.size(); ++k) p1 += mix.weights()[k] * mix.components()[k].mean();
    const double f0 = 1.0 - p1;
    const double c = f0 + p1 * std::exp(tv.linear);
    out.density = {f0 / c, p1 * std::exp(tv.linear) / c};
    out.log_constant = std::log(c);
    return out;
  }
  if (nodes < 4096) nodes = 4096;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& c : mix.components()) {
    lo = std::min(lo, c.mean() - span_sd * c.sd());
    hi = std::max(hi, c.mean() + span_sd * c.sd());
  }
  const double tail = cdf(mix, lo) + (1.0 - cdf(mix, hi));
  if (tail > 1e-9) {
    fail(Code::GRID_TOO_NARROW, "untilted tail mass beyond the oracle grid exceeds 1e-9");
  }
  const std::size_t n = nodes;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  out.grid.resize(n);
  std::vector<double> logf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = lo + h * static_cast<double>(i);
    out.grid[i] = y;
    logf[i] = std::log(std::max(mix.pdf(y), 1e-320)) + tv.linear * y + tv.quadratic * y * y;
  }
  // trapezoid in log space: C = sum w_i exp(logf_i), stabilized by the max
  const double m = *std::max_element(logf.begin(), logf.end());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
    s += w * std::exp(logf[i] - m);
  }
  out.log_constant = m + std::log(s * h);
  out.density.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.density[i] = std::exp(logf[i] - out.log_constant);
  return out;
}

const char* code_name(Code c) {
  switch (c) {
    case Code::PROPRIETY_VIOLATION: return "PROPRIETY_VIOLATION";
    case Code::FAMILY_MISMATCH: return "FAMILY_MISMATCH";
    case Code::GRID_TOO_NARROW: return "GRID_TOO_NARROW";
    case Code::Q_OUT_OF_RANGE: return "Q_OUT_OF_RANGE";
    case Code::ALPHA_UNSOLVED: return "ALPHA_UNSOLVED";
    case Code::RHO_OUT_OF_RANGE: return "RHO_OUT_OF_RANGE";
    case Code::NO_BRACKET: return "NO_BRACKET";
    case Code::SEPARATION_DETECTED: return "SEPARATION_DETECTED";
    case Code::DEGENERATE_FIT: return "DEGENERATE_FIT";
    case Code::EMPTY_STRATUM: return "EMPTY_STRATUM";
    case Code::SCHEMA_VIOLATION: return "SCHEMA_VIOLATION";
    case Code::INVARIANT_VIOLATION: return "INVARIANT_VIOLATION";
    case Code::USAGE: return "USAGE";
    case Code::DATA: return "DATA";
    case Code::INTERNAL: return "INTERNAL";
  }
  return "UNKNOWN";
}

}  // namespace tiltsense
