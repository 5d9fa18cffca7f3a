// Command-line front end: simulate -> fit/ingest -> calibrate -> sweep/bounds/check.
// The observed model is fit exactly once; sweeps read only fit.json.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tiltsense/calibration.hpp"
#include "tiltsense/copula.hpp"
#include "tiltsense/estimands.hpp"
#include "tiltsense/observed.hpp"
#include "tiltsense/selection.hpp"
#include "tiltsense/simgen.hpp"

using namespace tiltsense;
using nlohmann::json;

namespace {

int exit_code_for(Code code) {
  switch (code) {
    case Code::USAGE:
      return 2;
    case Code::DATA:
    case Code::SCHEMA_VIOLATION:
      return 3;
    default:
      return 4;
  }
}

[[noreturn]] void emit_error(Code code, const std::string& message, const std::string& field = "") {
  json j;
  j["error"]["code"] = code_name(code);
  j["error"]["message"] = message;
  if (!field.empty()) j["error"]["field"] = field;
  std::cerr << j.dump() << std::endl;
  std::exit(exit_code_for(code));
}

struct GridSpec {
  GridAxis axis0, axis1;
};

GridAxis parse_axis(const std::string& part) {
  const auto eq = part.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("axis needs name=start:stop:count");
  GridAxis axis;
  axis.name = part.substr(0, eq);
  const std::string rest = part.substr(eq + 1);
  const auto c1 = rest.find(':');
  const auto c2 = rest.find(':', c1 == std::string::npos ? 0 : c1 + 1);
  if (axis.name.empty() || c1 == std::string::npos || c2 == std::string::npos) {
    throw std::invalid_argument("axis needs name=start:stop:count");
  }
  std::size_t pos = 0;
  axis.start = std::stod(rest.substr(0, c1), &pos);
  axis.stop = std::stod(rest.substr(c1 + 1, c2 - c1 - 1), &pos);
  axis.count = std::stoi(rest.substr(c2 + 1), &pos);
  if (axis.count < 1 || !std::isfinite(axis.start) || !std::isfinite(axis.stop)) {
    throw std::invalid_argument("axis needs a finite range and count >= 1");
  }
  return axis;
}

GridSpec parse_grid(const std::string& spec) {
  const auto semi = spec.find(';');
  if (semi == std::string::npos) throw std::invalid_argument("grid needs two ';'-separated axes");
  return GridSpec{parse_axis(spec.substr(0, semi)), parse_axis(spec.substr(semi + 1))};
}

SensitivityPoint parse_point(const std::string& spec) {
  // "g0=0.1,g1=-0.2" (axis names are free-form; order decides)
  const auto comma = spec.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("point needs two comma-separated values");
  const auto value = [](const std::string& part) {
    const auto eq = part.find('=');
    return std::stod(eq == std::string::npos ? part : part.substr(eq + 1));
  };
  return SensitivityPoint{value(spec.substr(0, comma)), value(spec.substr(comma + 1))};
}

SelectionKind parse_selection(const std::string& name) {
  if (name == "logistic") return SelectionKind::Logistic;
  if (name == "latent-class") return SelectionKind::LatentClass;
  if (name == "two-part") return SelectionKind::TwoPart;
  throw std::invalid_argument("selection must be logistic, latent-class or two-part");
}

EstimandKind parse_estimand(const std::string& name) {
  if (name == "ate") return EstimandKind::ATE;
  if (name == "att") return EstimandKind::ATT;
  if (name == "atc") return EstimandKind::ATC;
  if (name == "qte") return EstimandKind::QTE;
  throw std::invalid_argument("estimand must be ate, att, atc or qte");
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string part =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) out.push_back(std::stod(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string part =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

TreatmentPrevalence dataset_prevalence(const Dataset& data) {
  const long n1 = std::count(data.t.begin(), data.t.end(), 1);
  return TreatmentPrevalence::from_counts(static_cast<long>(data.size()) - n1, n1);
}

ObservedFit fit_dataset(const Dataset& data, const std::string& model, std::uint64_t seed) {
  const TreatmentPrevalence prev = dataset_prevalence(data);
  if (model.rfind("em:", 0) == 0 || model.rfind("largek:", 0) == 0) {
    const bool large = model.rfind("largek:", 0) == 0;
    const int k = std::stoi(model.substr(model.find(':') + 1));
    ObservedFit fit;
    fit.prevalence = prev;
    for (int arm = 0; arm < 2; ++arm) {
      const std::vector<double> ys = data.arm_outcomes(arm);
      const std::uint64_t arm_seed = seed + static_cast<std::uint64_t>(arm) * 7919;
      fit.arms[arm].units = {large ? fit_large_k(ys, k, 1.0, arm_seed)
                                   : em_fit(ys, k, 5, arm_seed)};
    }
    return fit;
  }
  if (model == "two-part") return fit_two_part(data, 10, 1.0, seed).to_observed_fit(prev);
  if (model == "latent-class") return fit_latent_class(data, seed).to_observed_fit(prev, data.t);
  throw std::invalid_argument("model must be em:K, largek:K, two-part or latent-class");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(Code::DATA, "cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tiltsense: sensitivity analysis for unobserved confounding via exponential tilting"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a benchmark dataset plus truth sidecar");
  std::string sim_dgp = "example1", sim_out = "data.csv";
  std::size_t sim_n = 5000;
  std::uint64_t sim_seed = 1;
  sim->add_option("--dgp", sim_dgp, "example1|latent-class|zero-inflated|binary-normal");
  sim->add_option("--n", sim_n, "sample size")->required();
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "output CSV path")->required();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit an observed-data outcome model");
  std::string fit_in, fit_model = "em:2", fit_out = "fit.json";
  int fit_boot = 0;
  std::uint64_t fit_seed = 1;
  fit_cmd->add_option("--in", fit_in, "dataset CSV")->required();
  fit_cmd->add_option("--model", fit_model, "em:K|largek:K|two-part|latent-class");
  fit_cmd->add_option("--boot", fit_boot, "parametric bootstrap replicates");
  fit_cmd->add_option("--seed", fit_seed, "RNG seed");
  fit_cmd->add_option("--out", fit_out, "output fit JSON")->required();

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "validate and normalize an external fit");
  std::string ingest_in, ingest_out = "fit.json";
  ingest_cmd->add_option("--in", ingest_in, "external fit JSON")->required();
  ingest_cmd->add_option("--out", ingest_out, "output fit JSON")->required();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "benchmark sensitivity parameters against covariates");
  std::string cal_data, cal_fit, cal_covars, cal_out = "calib.json", cal_rho = "0.01,0.04";
  cal->add_option("--data", cal_data, "dataset CSV")->required();
  cal->add_option("--fit", cal_fit, "fit JSON")->required();
  cal->add_option("--covars", cal_covars, "comma-separated covariate names (default: all)");
  cal->add_option("--rho-star", cal_rho, "target rho^2 values, comma separated");
  cal->add_option("--out", cal_out, "output JSON")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "evaluate an estimand over a sensitivity grid");
  std::string sw_fit, sw_sel = "logistic", sw_grid, sw_est = "ate", sw_q = "0.25,0.5,0.75";
  std::string sw_out = "table.csv";
  double sw_level = 0.95;
  int sw_workers = 0;
  double sw_psi0 = 0.0, sw_psi1 = 0.0;
  sw->add_option("--fit", sw_fit, "fit JSON")->required();
  sw->add_option("--selection", sw_sel, "logistic|latent-class|two-part");
  sw->add_option("--grid", sw_grid, "axis0=start:stop:count;axis1=start:stop:count")->required();
  sw->add_option("--estimand", sw_est, "ate|att|atc|qte");
  sw->add_option("--q", sw_q, "QTE quantiles, comma separated");
  sw->add_option("--level", sw_level, "interval level");
  sw->add_option("--workers", sw_workers, "worker threads (0 = auto)");
  sw->add_option("--psi0", sw_psi0, "fixed quadratic tilt, arm 0 (logistic)");
  sw->add_option("--psi1", sw_psi1, "fixed quadratic tilt, arm 1 (logistic)");
  sw->add_option("--out", sw_out, "output CSV")->required();

  // bounds
  auto* bd = app.add_subcommand("bounds", "latent-class ignorance bounds at omega = +/-inf");
  std::string bd_fit, bd_est = "qte", bd_q = "0.25,0.5,0.75", bd_out = "bounds.csv";
  double bd_level = 0.95;
  bd->add_option("--fit", bd_fit, "fit JSON")->required();
  bd->add_option("--estimand", bd_est, "ate|att|atc|qte");
  bd->add_option("--q", bd_q, "QTE quantiles, comma separated");
  bd->add_option("--level", bd_level, "interval level");
  bd->add_option("--out", bd_out, "output CSV")->required();

  // check
  auto* ck = app.add_subcommand("check", "overlap, integral-constraint and propriety report");
  std::string ck_fit, ck_sel = "logistic", ck_point = "g0=0,g1=0", ck_out;
  std::uint64_t ck_seed = 1;
  ck->add_option("--fit", ck_fit, "fit JSON")->required();
  ck->add_option("--selection", ck_sel, "logistic|latent-class|two-part");
  ck->add_option("--point", ck_point, "sensitivity point, e.g. g0=0.03,g1=0.05");
  ck->add_option("--seed", ck_seed, "RNG seed for the overlap diagnostic");
  ck->add_option("--out", ck_out, "optional JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    json j;
    j["error"]["code"] = "USAGE";
    j["error"]["message"] = e.what();
    std::cerr << j.dump() << std::endl;
    return 2;
  }

  try {
    if (sim->parsed()) {
      SimResult result;
      if (sim_dgp == "example1") {
        result = gen_latent_confounder(LatentConfounderDGP{}, sim_n, sim_seed);
      } else if (sim_dgp == "latent-class") {
        result = gen_latent_class(LatentClassDGP{}, sim_n, sim_seed);
      } else if (sim_dgp == "zero-inflated") {
        ZeroInflatedDGP dgp;
        dgp.arm0 = ZeroInflatedArm{0.4, {0.6, 0.4}, {1.8, 2.8}, {0.5, 0.4}};
        dgp.arm1 = ZeroInflatedArm{0.9, {0.6, 0.4}, {2.0, 3.0}, {0.5, 0.4}};
        dgp.sel_gamma = 0.1;
        dgp.sel_omega = -0.4;
        result = gen_zero_inflated(dgp, sim_n, sim_seed);
      } else if (sim_dgp == "binary-normal") {
        result = gen_binary_normal_confounder(BinaryNormalConfounderDGP{}, sim_n, sim_seed);
      } else {
        emit_error(Code::USAGE, "unknown dgp: " + sim_dgp, "dgp");
      }
      write_dataset_csv(result.data, sim_out);
      write_truth_json(result.truth, sim_out + ".truth.json");
      std::cout << "wrote " << sim_out << " (" << result.data.size() << " units) and truth sidecar\n";
    } else if (fit_cmd->parsed()) {
      const Dataset data = read_dataset_csv(fit_in);
      std::string model_name = fit_model;
      ObservedFit fit = fit_dataset(data, model_name, fit_seed);
      if (fit_boot > 0) {
        fit.draws = bootstrap_draws(
            data, fit,
            [&model_name](const Dataset& d, std::uint64_t s) { return fit_dataset(d, model_name, s); },
            fit_boot, fit_seed + 0x5eedULL);
      }
      write_fit_json(fit, fit_out);
      std::cout << "wrote " << fit_out << " (model " << model_name << ", " << fit.draws.size()
                << " draws)\n";
    } else if (ingest_cmd->parsed()) {
      const ObservedFit fit = ingest_external_fit(ingest_in);
      write_fit_json(fit, ingest_out);
      std::cout << "wrote " << ingest_out << " (" << fit.draws.size() << " draws)\n";
    } else if (cal->parsed()) {
      const Dataset data = read_dataset_csv(cal_data);
      const ObservedFit fit = ingest_external_fit(cal_fit);
      std::vector<std::size_t> cols;
      if (cal_covars.empty()) {
        for (std::size_t c = 0; c < data.covariate_names.size(); ++c) cols.push_back(c);
      } else {
        for (const std::string& name : parse_names(cal_covars)) {
          const auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
          if (it == data.covariate_names.end()) {
            emit_error(Code::USAGE, "unknown covariate: " + name, "covars");
          }
          cols.push_back(static_cast<std::size_t>(it - data.covariate_names.begin()));
        }
      }
      const CalibrationReport report =
          build_calibration_report(data, fit, cols, parse_doubles(cal_rho));
      write_text(cal_out, report.to_json() + "\n");
      std::cout << report.to_table();
      std::cout << "wrote " << cal_out << "\n";
    } else if (sw->parsed()) {
      CompleteDataModel model{ingest_external_fit(sw_fit), SelectionModel{}};
      model.selection.kind = parse_selection(sw_sel);
      model.selection.psi0 = sw_psi0;
      model.selection.psi1 = sw_psi1;
      GridSpec grid;
      try {
        grid = parse_grid(sw_grid);
      } catch (const std::exception& e) {
        emit_error(Code::USAGE, std::string("malformed grid: ") + e.what(), "grid");
      }
      SweepRequest request;
      request.axis0 = grid.axis0;
      request.axis1 = grid.axis1;
      request.kind = parse_estimand(sw_est);
      request.qs = parse_doubles(sw_q);
      request.level = sw_level;
      const IgnoranceTable table = sweep(model, request, sw_workers);
      write_text(sw_out, table.to_csv());
      std::cout << "wrote " << sw_out << " (" << table.cells.size() << " rows)\n";
    } else if (bd->parsed()) {
      CompleteDataModel model{ingest_external_fit(bd_fit), SelectionModel{}};
      model.selection.kind = SelectionKind::LatentClass;
      const EstimandKind kind = parse_estimand(bd_est);
      const std::vector<double> qs =
          kind == EstimandKind::QTE ? parse_doubles(bd_q) : std::vector<double>{0.0};
      std::string csv = "estimand,q,lower,upper,lower_lo,lower_hi,upper_lo,upper_hi\n";
      char buf[256];
      for (double q : qs) {
        const auto [lower, upper] = latent_class_bounds(model, kind, q, bd_level);
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      estimand_name(kind), q, lower.estimate, upper.estimate, lower.lo, lower.hi,
                      upper.lo, upper.hi);
        csv += buf;
      }
      write_text(bd_out, csv);
      std::cout << "wrote " << bd_out << "\n";
    } else if (ck->parsed()) {
      const ObservedFit fit = ingest_external_fit(ck_fit);
      const SelectionKind kind = parse_selection(ck_sel);
      SensitivityPoint point;
      try {
        point = parse_point(ck_point);
      } catch (const std::exception& e) {
        emit_error(Code::USAGE, std::string("malformed point: ") + e.what(), "point");
      }
      SelectionModel sel{kind, 0.0, 0.0};
      json report;
      report["point"] = {point.a0, point.a1};
      for (int arm = 0; arm < 2; ++arm) {
        json a;
        const ArmParts parts = arm_parts(fit, sel, arm, point);  // throws if improper
        a["proper"] = true;
        if (kind == SelectionKind::Logistic || kind == SelectionKind::TwoPart) {
          const TiltVector tv{arm == 0 ? point.a0 : -point.a1, 0.0};
          const MixtureDist& obs = parts.obs.dist;
          LogisticSelection logi;
          logi.gamma0 = TiltVector{point.a0, sel.psi0};
          logi.gamma1 = TiltVector{point.a1, sel.psi1};
          const double alpha = solve_alpha(obs, logi.gamma(arm), fit.prevalence, arm);
          (arm == 0 ? logi.alpha0 : logi.alpha1) = alpha;
          a["alpha"] = alpha;
          a["integral_constraint_residual"] =
              verify_integral_constraint(obs, logi, fit.prevalence, arm);
          const OverlapDiagnostic ess = overlap_diagnostic(obs, tv, 100000, ck_seed);
          a["ess_ratio"] = ess.ess_ratio;
          a["overlap_warning"] = ess.warn;
        } else {
          const double omega = arm == 0 ? point.a0 : point.a1;
          const MixtureDist& obs = parts.obs.dist;
          if (obs.size() == 2) {
            const double pi_obs = obs.weights()[0];
            a["pi_obs"] = pi_obs;
            a["pi_mis"] = latent_class_missing_weight(pi_obs, omega);
            LatentClassArm lca{obs.components()[0], obs.components()[1], pi_obs};
            const auto [km, kp] = latent_class_asymptotes(lca, omega, arm, fit.prevalence);
            a["asymptotes"] = {km, kp};
          }
        }
        report["arm" + std::to_string(arm)] = std::move(a);
      }
      const std::string text = report.dump(1) + "\n";
      if (!ck_out.empty()) {
        write_text(ck_out, text);
        std::cout << "wrote " << ck_out << "\n";
      } else {
        std::cout << text;
      }
    }
  } catch (const Error& e) {
    emit_error(e.code(), e.what());
  } catch (const std::exception& e) {
    emit_error(Code::INTERNAL, e.what());
  }
  return 0;
}
