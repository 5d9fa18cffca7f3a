#include "tiltsense/estimands.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace tiltsense {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

TiltVector arm_tilt(const SelectionModel& sel, int arm, const SensitivityPoint& p) {
  const TiltVector g0{p.a0, sel.psi0};
  const TiltVector g1{p.a1, sel.psi1};
  return arm == 0 ? g0 : -g1;
}

double shifted_atom(double atom_obs, double shift) {
  if (atom_obs <= 0.0) return 0.0;
  if (shift == kInf) return 1.0;
  if (shift == -kInf) return 0.0;
  return expit(logit(atom_obs) + shift);
}

/// Pools per-unit mixtures of one treatment group into a single mixture with
/// total mass `mass`.
void append_group(std::vector<UnivariateEF>& comps, std::vector<double>& weights,
                  const ObservedFit& fit, int model_arm, int group, double mass,
                  const std::function<MixtureDist(const MixtureDist&)>& transform) {
  const ArmFit& arm = fit.arms[model_arm];
  if (arm.pooled()) {
    const MixtureDist m = transform(arm.units[0]);
    for (std::size_t k = 0; k < m.size(); ++k) {
      comps.push_back(m.components()[k]);
      weights.push_back(mass * m.weights()[k]);
    }
    return;
  }
  std::size_t group_n = 0;
  for (int t : fit.treatment) group_n += t == group;
  if (group_n == 0) fail(Code::DATA, "treatment group " + std::to_string(group) + " is empty");
  const double unit_mass = mass / static_cast<double>(group_n);
  for (std::size_t i = 0; i < fit.treatment.size(); ++i) {
    if (fit.treatment[i] != group) continue;
    const MixtureDist m = transform(arm.units[i]);
    for (std::size_t k = 0; k < m.size(); ++k) {
      comps.push_back(m.components()[k]);
      weights.push_back(unit_mass * m.weights()[k]);
    }
  }
}

MixtureDist latent_reweight(const MixtureDist& unit, double omega) {
  if (unit.size() != 2) {
    fail(Code::USAGE, "latent-class selection needs two-component observed fits");
  }
  const double pi_obs = unit.weights()[0] / (unit.weights()[0] + unit.weights()[1]);
  const double pi_mis = latent_class_missing_weight(std::clamp(pi_obs, 1e-12, 1.0 - 1e-12), omega);
  return MixtureDist(unit.components(), {pi_mis, 1.0 - pi_mis});
}

Marginal normalized_marginal(std::vector<UnivariateEF> comps, std::vector<double> weights,
                             double atom, OutcomeScale scale) {
  double total = atom;
  for (double w : weights) total += w;
  if (total != 1.0) {  // keep exact inputs bit-identical
    for (double& w : weights) w /= total;
    atom /= total;
  }
  if (scale == OutcomeScale::Natural) {
    MixtureDist dist(std::move(comps), std::move(weights), atom);
    return Marginal{std::move(dist), atom, OutcomeScale::Natural};
  }
  // Log scale: atom kept outside; continuous weights renormalized to 1
  double cw = 0.0;
  for (double w : weights) cw += w;
  for (double& w : weights) w /= cw;
  return Marginal{MixtureDist(std::move(comps), std::move(weights)), atom, OutcomeScale::Log};
}

Marginal part_marginal(const ObservedFit& fit, const SelectionModel& sel, int arm,
                       const SensitivityPoint& point, bool missing_part) {
  const int group = missing_part ? 1 - arm : arm;
  std::function<MixtureDist(const MixtureDist&)> transform;
  double atom = 0.0;
  switch (sel.kind) {
    case SelectionKind::Logistic: {
      const TiltVector tv = missing_part ? arm_tilt(sel, arm, point) : TiltVector{};
      transform = [tv](const MixtureDist& m) { return tilt_mixture(m, tv); };
      atom = fit.atom[arm].value_or(0.0);
      break;
    }
    case SelectionKind::LatentClass: {
      if (fit.two_part()) fail(Code::USAGE, "latent-class selection does not apply to two-part fits");
      const double omega = arm == 0 ? point.a0 : point.a1;
      if (missing_part) {
        transform = [omega](const MixtureDist& m) { return latent_reweight(m, omega); };
      } else {
        transform = [](const MixtureDist& m) { return m; };
      }
      break;
    }
    case SelectionKind::TwoPart: {
      if (!fit.two_part()) fail(Code::USAGE, "two-part selection needs a two-part fit");
      if (!fit.arms[arm].pooled()) fail(Code::USAGE, "two-part fits are pooled");
      const double gamma = point.a0;
      const double omega = point.a1;
      const TiltVector tv = missing_part ? TiltVector{arm == 0 ? gamma : -gamma, 0.0}
                                         : TiltVector{};
      transform = [tv](const MixtureDist& m) { return tilt_mixture(m, tv); };
      const double atom_obs = fit.atom[arm].value_or(0.0);
      // employment indicator tilted like a Bernoulli: unemployment log-odds
      // shift is -omega in arm 0, +omega in arm 1
      atom = missing_part ? shifted_atom(atom_obs, arm == 0 ? -omega : omega) : atom_obs;
      break;
    }
  }
  std::vector<UnivariateEF> comps;
  std::vector<double> weights;
  append_group(comps, weights, fit, arm, group, 1.0 - atom, transform);
  return normalized_marginal(std::move(comps), std::move(weights), atom, fit.scale);
}
}  // namespace

const char* estimand_name(EstimandKind k) {
  switch (k) {
    case EstimandKind::ATE: return "ate";
    case EstimandKind::ATT: return "att";
    case EstimandKind::ATC: return "atc";
    case EstimandKind::QTE: return "qte";
  }
  return "?";
}

double marginal_mean(const Marginal& m) {
  if (m.scale == OutcomeScale::Natural) return mean(m.dist);
  double acc = 0.0;
  for (std::size_t k = 0; k < m.dist.size(); ++k) {
    const auto& c = m.dist.components()[k];
    acc += m.dist.weights()[k] * std::exp(c.mean() + 0.5 * c.variance());
  }
  return (1.0 - m.atom) * acc;
}

double marginal_quantile(const Marginal& m, double q) {
  if (!(q > 0.0 && q < 1.0)) fail(Code::Q_OUT_OF_RANGE, "quantile requires 0 < q < 1");
  if (m.scale == OutcomeScale::Natural) return quantile(m.dist, q);
  if (q <= m.atom) return 0.0;
  const double q_cont = (q - m.atom) / (1.0 - m.atom);
  return std::exp(quantile(m.dist, std::min(q_cont, 1.0 - 1e-15)));
}

ArmParts arm_parts(const ObservedFit& fit, const SelectionModel& sel, int arm,
                   const SensitivityPoint& point) {
  return ArmParts{part_marginal(fit, sel, arm, point, false),
                  part_marginal(fit, sel, arm, point, true)};
}

Marginal complete_marginal(const ObservedFit& fit, const SelectionModel& sel, int arm,
                           const SensitivityPoint& point) {
  const double p_obs = arm == 1 ? fit.prevalence.p1 : fit.prevalence.p0();
  const ArmParts parts = arm_parts(fit, sel, arm, point);
  std::vector<UnivariateEF> comps;
  std::vector<double> weights;
  const auto add = [&](const Marginal& part, double mass) {
    for (std::size_t k = 0; k < part.dist.size(); ++k) {
      comps.push_back(part.dist.components()[k]);
      // Natural-scale parts carry the atom inside dist (weights sum to
      // 1-atom); Log-scale parts have unit continuous mass
      const double cont = part.scale == OutcomeScale::Natural ? 1.0 : 1.0 - part.atom;
      weights.push_back(mass * cont * part.dist.weights()[k]);
    }
  };
  add(parts.obs, p_obs);
  add(parts.mis, 1.0 - p_obs);
  const double atom = p_obs * parts.obs.atom + (1.0 - p_obs) * parts.mis.atom;
  return normalized_marginal(std::move(comps), std::move(weights), atom, fit.scale);
}

double point_estimand(const ObservedFit& fit, const SelectionModel& sel, EstimandKind kind,
                      double q, const SensitivityPoint& point) {
  switch (kind) {
    case EstimandKind::ATE:
      return marginal_mean(complete_marginal(fit, sel, 1, point)) -
             marginal_mean(complete_marginal(fit, sel, 0, point));
    case EstimandKind::ATT:
      return marginal_mean(arm_parts(fit, sel, 1, point).obs) -
             marginal_mean(arm_parts(fit, sel, 0, point).mis);
    case EstimandKind::ATC:
      return marginal_mean(arm_parts(fit, sel, 1, point).mis) -
             marginal_mean(arm_parts(fit, sel, 0, point).obs);
    case EstimandKind::QTE:
      return marginal_quantile(complete_marginal(fit, sel, 1, point), q) -
             marginal_quantile(complete_marginal(fit, sel, 0, point), q);
  }
  fail(Code::INTERNAL, "unknown estimand");
}

namespace {
double draw_quantile(std::vector<double> xs, double p) {
  // R-7 interpolation
  std::sort(xs.begin(), xs.end());
  const double h = p * (static_cast<double>(xs.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}
}  // namespace

EstimandResult evaluate_estimand(const CompleteDataModel& model, EstimandKind kind, double q,
                                 const SensitivityPoint& point, double level) {
  EstimandResult r;
  r.kind = kind;
  r.q = q;
  r.estimate = point_estimand(model.fit, model.selection, kind, q, point);
  r.n_draws = static_cast<int>(model.fit.draws.size());
  if (model.fit.draws.empty()) {
    r.lo = r.hi = r.estimate;
    return r;
  }
  std::vector<double> values;
  values.reserve(model.fit.draws.size());
  for (const auto& draw : model.fit.draws) {
    values.push_back(point_estimand(draw, model.selection, kind, q, point));
  }
  const double tail = 0.5 * (1.0 - level);
  r.lo = draw_quantile(values, tail);
  r.hi = draw_quantile(values, 1.0 - tail);
  // keep the invariant lo <= estimate <= hi even under heavy bootstrap skew
  r.lo = std::min(r.lo, r.estimate);
  r.hi = std::max(r.hi, r.estimate);
  return r;
}

std::vector<double> GridAxis::values() const {
  if (count < 1) fail(Code::USAGE, "grid axis needs count >= 1");
  std::vector<double> v(static_cast<std::size_t>(count));
  if (count == 1) {
    v[0] = start;
    return v;
  }
  const double step = (stop - start) / static_cast<double>(count - 1);
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = start + step * i;
  v.back() = stop;  // inclusive endpoints, exact
  return v;
}

namespace {
IgnoranceTable sweep_impl(const CompleteDataModel& model, const SweepRequest& request,
                          int workers, bool parallel) {
  IgnoranceTable table;
  table.request = request;
  const std::vector<double> a0 = request.axis0.values();
  const std::vector<double> a1 = request.axis1.values();
  const std::vector<double> qs =
      request.kind == EstimandKind::QTE ? request.qs : std::vector<double>{0.0};
  if (request.kind == EstimandKind::QTE && request.qs.empty()) {
    fail(Code::USAGE, "QTE sweep needs at least one q");
  }
  const std::size_t rows = qs.size();
  const std::size_t n_cells = a0.size() * a1.size() * rows;
  table.cells.resize(n_cells);
  const long total = static_cast<long>(a0.size() * a1.size());

  std::exception_ptr first_error = nullptr;
  const auto run_cell = [&](long c) {
    const std::size_t i = static_cast<std::size_t>(c) / a1.size();
    const std::size_t j = static_cast<std::size_t>(c) % a1.size();
    const SensitivityPoint point{a0[i], a1[j]};
    for (std::size_t r = 0; r < rows; ++r) {
      IgnoranceCell& cell = table.cells[(i * a1.size() + j) * rows + r];
      cell.a0 = point.a0;
      cell.a1 = point.a1;
      cell.result.kind = request.kind;
      cell.result.q = qs[r];
      try {
        cell.result = evaluate_estimand(model, request.kind, qs[r], point, request.level);
      } catch (const Error& e) {
        if (e.code() != Code::PROPRIETY_VIOLATION) {
#pragma omp critical(tiltsense_sweep_error)
          {
            if (!first_error) first_error = std::current_exception();
          }
          return;
        }
        cell.na = true;
      }
    }
  };

  if (parallel) {
    const int nthreads = resolve_workers(workers);
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (long c = 0; c < total; ++c) run_cell(c);
  } else {
    for (long c = 0; c < total; ++c) run_cell(c);
  }
  if (first_error) std::rethrow_exception(first_error);
  return table;
}
}  // namespace

IgnoranceTable sweep(const CompleteDataModel& model, const SweepRequest& request, int workers) {
  return sweep_impl(model, request, workers, true);
}

IgnoranceTable sweep_reference(const CompleteDataModel& model, const SweepRequest& request) {
  return sweep_impl(model, request, 1, false);
}

std::pair<EstimandResult, EstimandResult> latent_class_bounds(const CompleteDataModel& model,
                                                              EstimandKind kind, double q,
                                                              double level) {
  if (model.selection.kind != SelectionKind::LatentClass) {
    fail(Code::USAGE, "bounds are defined for latent-class selection");
  }
  const EstimandResult a =
      evaluate_estimand(model, kind, q, SensitivityPoint{kInf, -kInf}, level);
  const EstimandResult b =
      evaluate_estimand(model, kind, q, SensitivityPoint{-kInf, kInf}, level);
  return a.estimate <= b.estimate ? std::make_pair(a, b) : std::make_pair(b, a);
}

std::function<double(double)> residual_sd_function(const ObservedFit& fit,
                                                   const SelectionModel& sel, int arm) {
  // E[Var(Y(arm)|X)] over the complete population: observed conditionals for
  // the T=arm units, tilted conditionals for the rest.
  return [fit, sel, arm](double gamma) {
    SensitivityPoint point;
    if (arm == 0) {
      point.a0 = gamma;
    } else {
      point.a1 = gamma;
    }
    const ArmParts parts = arm_parts(fit, sel, arm, point);
    const double p_obs = arm == 1 ? fit.prevalence.p1 : fit.prevalence.p0();

    const auto expected_cond_var = [&](bool missing, int group) {
      const ArmFit& af = fit.arms[arm];
      if (af.pooled()) {
        // single conditional: its variance is the conditional variance
        return variance(missing ? parts.mis.dist : parts.obs.dist);
      }
      // average the per-unit conditional variances of this group under the
      // same transform the part used
      double acc = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < fit.treatment.size(); ++i) {
        if (fit.treatment[i] != group) continue;
        const MixtureDist& base = af.units[i];
        if (!missing) {
          acc += variance(base);
        } else if (sel.kind == SelectionKind::LatentClass) {
          acc += variance(latent_reweight(base, arm == 0 ? point.a0 : point.a1));
        } else {
          acc += variance(tilt_mixture(base, arm_tilt(sel, arm, point)));
        }
        ++n;
      }
      return acc / static_cast<double>(n);
    };

    const double v = p_obs * expected_cond_var(false, arm) +
                     (1.0 - p_obs) * expected_cond_var(true, 1 - arm);
    return std::sqrt(v);
  };
}

int resolve_workers(int workers) {
  if (const char* env = std::getenv("TILT_SENSE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  if (workers > 0) return workers;
  return omp_get_max_threads();
}

std::string IgnoranceTable::to_csv() const {
  std::ostringstream out;
  out << request.axis0.name << ',' << request.axis1.name
      << ",estimand,q,estimate,lo,hi,significant,na_flag\n";
  char buf[64];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& cell : cells) {
    out << fmt(cell.a0) << ',' << fmt(cell.a1) << ',' << estimand_name(cell.result.kind) << ',';
    if (cell.result.kind == EstimandKind::QTE) out << fmt(cell.result.q);
    out << ',';
    if (cell.na) {
      out << ",,,," << "1\n";
      continue;
    }
    const bool significant =
        cell.result.n_draws > 0 && (cell.result.lo > 0.0 || cell.result.hi < 0.0);
    out << fmt(cell.result.estimate) << ',' << fmt(cell.result.lo) << ',' << fmt(cell.result.hi)
        << ',' << (significant ? 1 : 0) << ",0\n";
  }
  return out.str();
}

}  // namespace tiltsense
