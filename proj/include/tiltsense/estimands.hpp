#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tiltsense/observed.hpp"

namespace tiltsense {

enum class EstimandKind { ATE, ATT, ATC, QTE };
const char* estimand_name(EstimandKind k);

enum class SelectionKind { Logistic, LatentClass, TwoPart };

/// Sensitivity coordinates of one grid cell. Logistic: (gamma0, gamma1);
/// latent class: (omega0, omega1); two-part: a0 = gamma on log income in both
/// arms, a1 = omega on the employment atom in both arms.
struct SensitivityPoint {
  double a0 = 0.0;
  double a1 = 0.0;
};

struct SelectionModel {
  SelectionKind kind = SelectionKind::Logistic;
  double psi0 = 0.0;  // fixed quadratic tilt coefficients (logistic only)
  double psi1 = 0.0;
};

struct CompleteDataModel {
  ObservedFit fit;
  SelectionModel selection;
};

/// A marginal potential-outcome distribution. For Natural scale the atom (if
/// any) lives inside `dist`; for Log scale `dist` is the log-outcome mixture
/// and `atom` the raw zero mass.
struct Marginal {
  MixtureDist dist;
  double atom = 0.0;
  OutcomeScale scale = OutcomeScale::Natural;
};

double marginal_mean(const Marginal& m);
double marginal_quantile(const Marginal& m, double q);

/// Observed and missing halves of one arm's complete-data marginal.
struct ArmParts {
  Marginal obs;
  Marginal mis;
};
ArmParts arm_parts(const ObservedFit& fit, const SelectionModel& sel, int arm,
                   const SensitivityPoint& point);

/// f(Y(arm)) = p_arm * observed part + p_other * tilted/reweighted part.
Marginal complete_marginal(const ObservedFit& fit, const SelectionModel& sel, int arm,
                           const SensitivityPoint& point);

/// Point value of an estimand at one sensitivity point (no uncertainty).
double point_estimand(const ObservedFit& fit, const SelectionModel& sel, EstimandKind kind,
                      double q, const SensitivityPoint& point);

struct EstimandResult {
  EstimandKind kind = EstimandKind::ATE;
  double q = 0.0;  // meaningful for QTE only
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int n_draws = 0;
};

/// Estimate plus an interval from replicate fits (posterior draws or
/// bootstrap) at the given level; the sensitivity point is held fixed across
/// replicates. With no draws the interval degenerates to the estimate.
EstimandResult evaluate_estimand(const CompleteDataModel& model, EstimandKind kind, double q,
                                 const SensitivityPoint& point, double level = 0.95);

struct GridAxis {
  std::string name;
  double start = 0.0;
  double stop = 0.0;
  int count = 1;
  std::vector<double> values() const;
};

struct SweepRequest {
  GridAxis axis0;
  GridAxis axis1;
  EstimandKind kind = EstimandKind::ATE;
  std::vector<double> qs;  // QTE only
  double level = 0.95;
};

struct IgnoranceCell {
  double a0 = 0.0, a1 = 0.0;
  EstimandResult result;
  bool na = false;  // PROPRIETY_VIOLATION at this cell
};

struct IgnoranceTable {
  SweepRequest request;
  std::vector<IgnoranceCell> cells;  // row-major over (axis0, axis1, estimand row)
  std::string to_csv() const;
};

/// Evaluates the grid with OpenMP; cells are independent and deterministic,
/// so any worker count produces bit-identical tables. workers <= 0 uses the
/// TILT_SENSE_THREADS environment value or the OpenMP default.
IgnoranceTable sweep(const CompleteDataModel& model, const SweepRequest& request,
                     int workers = 0);

/// Serial reference implementation kept for testing and benchmarking.
IgnoranceTable sweep_reference(const CompleteDataModel& model, const SweepRequest& request);

/// Latent-class estimand bounds at the (omega0, omega1) = (-inf,+inf) /
/// (+inf,-inf) sentinels; every finite-omega estimate lies between them.
std::pair<EstimandResult, EstimandResult> latent_class_bounds(const CompleteDataModel& model,
                                                              EstimandKind kind, double q,
                                                              double level = 0.95);

/// Residual sd sigma_r(gamma) of arm `arm`'s complete-data conditionals as a
/// function of the tilt magnitude, for the recursive calibration solve.
std::function<double(double)> residual_sd_function(const ObservedFit& fit,
                                                   const SelectionModel& sel, int arm);

int resolve_workers(int workers);

}  // namespace tiltsense
