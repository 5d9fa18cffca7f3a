#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tiltsense/ef.hpp"
#include "tiltsense/selection.hpp"

namespace tiltsense {

/// Unit-level study data. `y` is the observed outcome, `t` the binary
/// treatment, `x` the covariate rows, `w` an optional employment indicator
/// with w=0 implying y=0.
struct Dataset {
  std::vector<double> y;
  std::vector<int> t;
  std::vector<std::vector<double>> x;
  std::vector<std::string> covariate_names;
  std::optional<std::vector<int>> w;

  std::size_t size() const { return y.size(); }
  void validate() const;
  std::vector<double> arm_outcomes(int arm) const;
};

/// CSV with a header row; `y,t` required, `w` optional, every other column is
/// a covariate. UTF-8, '.' decimal.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& data, const std::string& path);

enum class OutcomeScale { Natural, Log };

/// One arm's conditional outcome model: a single pooled mixture, or one
/// mixture per dataset unit (every unit, in dataset order, so the model can be
/// evaluated at the opposite group's covariates).
struct ArmFit {
  std::vector<MixtureDist> units;
  bool pooled() const { return units.size() == 1; }
  const MixtureDist& at(std::size_t unit) const { return pooled() ? units[0] : units[unit]; }
};

/// Fitted (or ingested) observed-data model for both arms, with optional
/// replicate fits for uncertainty (posterior draws or bootstrap).
struct ObservedFit {
  TreatmentPrevalence prevalence;
  std::vector<int> treatment;  // required when any arm is per-unit
  std::array<ArmFit, 2> arms;
  std::array<std::optional<double>, 2> atom;  // two-part zero mass, pooled per arm
  OutcomeScale scale = OutcomeScale::Natural;
  std::vector<ObservedFit> draws;

  std::size_t n_units() const { return treatment.size(); }
  bool two_part() const { return atom[0].has_value() || atom[1].has_value(); }
  void validate() const;
};

struct TwoPartFit {
  std::array<double, 2> atom;        // unemployment mass per arm
  std::array<MixtureDist, 2> log_mix;  // log-outcome mixture among the employed

  ObservedFit to_observed_fit(const TreatmentPrevalence& prev) const;
};

/// Gaussian-mixture EM. Deterministic given the seed: best of `restarts`
/// k-means++-style initializations, convergence when the relative
/// log-likelihood change drops below 1e-8 (500 iterations cap), variance
/// floored at 1e-6 times the sample variance, components sorted by mean.
/// Throws DEGENERATE_FIT when any weight falls below 1/(10n).
MixtureDist em_fit(const std::vector<double>& samples, int k, int restarts, std::uint64_t seed);

/// MAP-EM with a truncated stick-breaking prior on the weights (Beta(1, conc)
/// sticks). Components with weight below 1e-4 are pruned and the rest
/// renormalized.
MixtureDist fit_large_k(const std::vector<double>& samples, int k_max, double concentration,
                        std::uint64_t seed);

/// Two-part zero-inflated fit: per arm, atom = fraction with w = 0 and the
/// continuous part a large-K mixture of log(y) among the employed.
/// Throws EMPTY_STRATUM when an arm-by-employment cell is empty.
TwoPartFit fit_two_part(const Dataset& data, int k_max = 10, double concentration = 1.0,
                        std::uint64_t seed = 1);

/// Two-component latent-class fit: per arm a 2-component EM (shared component
/// densities, class 0 = lower mean) plus a logistic model of the class-0
/// responsibility on the covariates, evaluated at every unit so the missing
/// group's weights are available. Falls back to the pooled class weight when
/// the dataset has no covariates.
struct LatentClassFit {
  std::array<UnivariateEF, 2> f0{UnivariateEF::normal(0, 1), UnivariateEF::normal(0, 1)};
  std::array<UnivariateEF, 2> f1{UnivariateEF::normal(0, 1), UnivariateEF::normal(0, 1)};
  std::array<std::vector<double>, 2> pi;  // class-0 weight per unit (all units)
  std::array<double, 2> pi_pooled{0.5, 0.5};

  ObservedFit to_observed_fit(const TreatmentPrevalence& prev, const std::vector<int>& t) const;
};
LatentClassFit fit_latent_class(const Dataset& data, std::uint64_t seed, int restarts = 5);

using Fitter = std::function<ObservedFit(const Dataset&, std::uint64_t seed)>;

/// Parametric bootstrap: resample outcomes from the fitted model (covariates,
/// treatment and employment structure held fixed), refit, repeat. Replicate b
/// uses seed + b; replicates are independent and run in parallel.
std::vector<ObservedFit> bootstrap_draws(const Dataset& data, const ObservedFit& fit,
                                         const Fitter& fitter, int b, std::uint64_t seed);

/// JSON schema (see README): {"prevalence": {"n0", "n1"}, "arms": [{"t",
/// "units": [{"weights", "means", "sds"}], "atom"?}], "treatment"?, "scale"?,
/// "draws"? }. A pooled arm is a length-1 units list; per-unit arms carry one
/// entry per dataset unit. Throws SCHEMA_VIOLATION with a JSON-pointer path,
/// or INVARIANT_VIOLATION with the offending unit index.
ObservedFit ingest_external_fit(const std::string& path);
ObservedFit parse_external_fit(const std::string& json_text);
std::string export_fit_json(const ObservedFit& fit);
void write_fit_json(const ObservedFit& fit, const std::string& path);

}  // namespace tiltsense
