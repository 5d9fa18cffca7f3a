#pragma once

#include <cstdint>
#include <vector>

#include "tiltsense/estimands.hpp"

namespace tiltsense {

/// Conditional copula coupling the two potential outcomes given T. Marginal
/// contrast estimands are invariant to this choice; the joint sampler exists
/// to verify that empirically and for diagnostics.
struct CopulaSpec {
  enum class Kind { Independence, GaussianRho };
  Kind kind = Kind::Independence;
  double rho = 0.0;  // |rho| < 1 for GaussianRho

  static CopulaSpec independence() { return {}; }
  static CopulaSpec gaussian(double rho);
};

struct JointDraws {
  std::vector<double> y0, y1;
  std::vector<int> t;
  std::vector<std::size_t> chunk_offsets;  // fixed partition, worker-count free
};

/// Samples (Y(0), Y(1), T): T from the prevalence, the observed arm from its
/// observed conditional and the other arm from the tilted missing conditional,
/// the two uniforms coupled through the copula and mapped through each
/// marginal's inverse CDF. Partitioned into fixed chunks with derived seeds,
/// so results are bit-identical for any worker count.
JointDraws joint_sample(const ObservedFit& fit, const SelectionModel& sel,
                        const SensitivityPoint& point, const CopulaSpec& copula, std::size_t n,
                        std::uint64_t seed, int workers = 0);

struct MCEstimate {
  double value = 0.0;
  double se = 0.0;  // Monte-Carlo standard error
};

/// Monte-Carlo estimand from joint draws; the oracle side of the
/// analytic-vs-sampling comparison. QTE standard errors use batch means over
/// the sampling chunks.
MCEstimate estimand_via_joint(const JointDraws& draws, EstimandKind kind, double q = 0.5);

}  // namespace tiltsense
