#include "tiltsense/copula.hpp"

#include <algorithm>
#include <cmath>

namespace tiltsense {

CopulaSpec CopulaSpec::gaussian(double rho) {
  if (!(rho > -1.0 && rho < 1.0)) fail(Code::USAGE, "Gaussian copula needs |rho| < 1");
  return CopulaSpec{Kind::GaussianRho, rho};
}

JointDraws joint_sample(const ObservedFit& fit, const SelectionModel& sel,
                        const SensitivityPoint& point, const CopulaSpec& copula, std::size_t n,
                        std::uint64_t seed, int workers) {
  const ArmParts arm0 = arm_parts(fit, sel, 0, point);
  const ArmParts arm1 = arm_parts(fit, sel, 1, point);
  const double p1 = fit.prevalence.p1;

  JointDraws draws;
  draws.y0.resize(n);
  draws.y1.resize(n);
  draws.t.resize(n);
  const std::size_t n_chunks = std::min<std::size_t>(64, std::max<std::size_t>(1, n));
  draws.chunk_offsets.resize(n_chunks + 1);
  for (std::size_t c = 0; c <= n_chunks; ++c) draws.chunk_offsets[c] = n * c / n_chunks;

  const Rng base(seed);
  const int nthreads = resolve_workers(workers);
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (long c = 0; c < static_cast<long>(n_chunks); ++c) {
    Rng rng = base.fork(static_cast<std::uint64_t>(c));
    for (std::size_t i = draws.chunk_offsets[c]; i < draws.chunk_offsets[c + 1]; ++i) {
      const int t = rng.bernoulli(p1) ? 1 : 0;
      double u0, u1;
      if (copula.kind == CopulaSpec::Kind::Independence) {
        u0 = rng.uniform_open();
        u1 = rng.uniform_open();
      } else {
        const double z0 = rng.normal();
        const double z1 = copula.rho * z0 + std::sqrt(1.0 - copula.rho * copula.rho) * rng.normal();
        u0 = normal_cdf(z0);
        u1 = normal_cdf(z1);
        u0 = std::clamp(u0, 1e-15, 1.0 - 1e-15);
        u1 = std::clamp(u1, 1e-15, 1.0 - 1e-15);
      }
      const Marginal& m0 = t == 0 ? arm0.obs : arm0.mis;
      const Marginal& m1 = t == 1 ? arm1.obs : arm1.mis;
      draws.t[i] = t;
      draws.y0[i] = marginal_quantile(m0, u0);
      draws.y1[i] = marginal_quantile(m1, u1);
    }
  }
  return draws;
}

namespace {
double sorted_quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double h = q * (static_cast<double>(xs.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}
}  // namespace

MCEstimate estimand_via_joint(const JointDraws& draws, EstimandKind kind, double q) {
  const std::size_t n = draws.y0.size();
  if (n == 0) fail(Code::USAGE, "no draws");
  MCEstimate out;
  switch (kind) {
    case EstimandKind::ATE:
    case EstimandKind::ATT:
    case EstimandKind::ATC: {
      double sum = 0.0, sum2 = 0.0;
      std::size_t m = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (kind == EstimandKind::ATT && draws.t[i] != 1) continue;
        if (kind == EstimandKind::ATC && draws.t[i] != 0) continue;
        const double d = draws.y1[i] - draws.y0[i];
        sum += d;
        sum2 += d * d;
        ++m;
      }
      if (m < 2) fail(Code::DATA, "too few draws in the conditioning group");
      out.value = sum / static_cast<double>(m);
      const double var = (sum2 - sum * sum / static_cast<double>(m)) / static_cast<double>(m - 1);
      out.se = std::sqrt(var / static_cast<double>(m));
      return out;
    }
    case EstimandKind::QTE: {
      out.value = sorted_quantile(draws.y1, q) - sorted_quantile(draws.y0, q);
      // batch-means SE over the sampling chunks (captures the copula coupling)
      const std::size_t n_chunks = draws.chunk_offsets.size() - 1;
      std::vector<double> batch;
      batch.reserve(n_chunks);
      for (std::size_t c = 0; c < n_chunks; ++c) {
        const auto first = draws.chunk_offsets[c];
        const auto last = draws.chunk_offsets[c + 1];
        if (last - first < 8) continue;
        std::vector<double> b0(draws.y0.begin() + first, draws.y0.begin() + last);
        std::vector<double> b1(draws.y1.begin() + first, draws.y1.begin() + last);
        batch.push_back(sorted_quantile(std::move(b1), q) - sorted_quantile(std::move(b0), q));
      }
      if (batch.size() < 2) {
        out.se = 0.0;
        return out;
      }
      double m = 0.0;
      for (double b : batch) m += b;
      m /= static_cast<double>(batch.size());
      double v = 0.0;
      for (double b : batch) v += (b - m) * (b - m);
      v /= static_cast<double>(batch.size() - 1);
      out.se = std::sqrt(v / static_cast<double>(batch.size()));
      return out;
    }
  }
  fail(Code::INTERNAL, "unknown estimand");
}

}  // namespace tiltsense
