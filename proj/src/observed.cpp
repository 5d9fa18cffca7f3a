#include "tiltsense/observed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tiltsense/calibration.hpp"

namespace tiltsense {

using nlohmann::json;

namespace {

double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct EmState {
  std::vector<double> w, mu, var;
  double loglik = -std::numeric_limits<double>::infinity();
};

double mixture_loglik(const std::vector<double>& ys, const EmState& s) {
  const std::size_t k = s.w.size();
  double ll = 0.0;
  for (double y : ys) {
    double acc = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (s.w[j] <= 0.0) continue;
      const double z = y - s.mu[j];
      const double lp = std::log(s.w[j]) - 0.5 * z * z / s.var[j] - 0.5 * std::log(s.var[j]) -
                        0.9189385332046727;
      acc = acc == -std::numeric_limits<double>::infinity() ? lp : logsumexp2(acc, lp);
    }
    ll += acc;
  }
  return ll;
}

/// k-means++-style seeding: spread initial centers by squared distance.
std::vector<double> seed_centers(const std::vector<double>& ys, int k, Rng& rng) {
  std::vector<double> centers;
  centers.push_back(ys[rng.index(ys.size())]);
  std::vector<double> d2(ys.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (ys[i] - c) * (ys[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(ys[rng.index(ys.size())]);
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = ys.size() - 1;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    centers.push_back(ys[pick]);
  }
  return centers;
}

struct SampleStats {
  double mean = 0.0, var = 0.0;
};
SampleStats sample_stats(const std::vector<double>& ys) {
  SampleStats s;
  for (double y : ys) s.mean += y;
  s.mean /= static_cast<double>(ys.size());
  for (double y : ys) s.var += (y - s.mean) * (y - s.mean);
  s.var /= static_cast<double>(ys.size());
  return s;
}

MixtureDist state_to_mixture(EmState s) {
  std::vector<std::size_t> order(s.w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.mu[a] < s.mu[b]; });
  std::vector<UnivariateEF> comps;
  std::vector<double> weights;
  for (std::size_t j : order) {
    comps.push_back(UnivariateEF::normal(s.mu[j], s.var[j]));
    weights.push_back(s.w[j]);
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return MixtureDist(std::move(comps), std::move(weights));
}

/// One EM pass from a given initialization. When `stick_conc` is set, the
/// weight M-step uses the stick-breaking MAP update instead of the MLE.
EmState run_em(const std::vector<double>& ys, int k, Rng& rng,
               std::optional<double> stick_conc) {
  const std::size_t n = ys.size();
  const SampleStats stats = sample_stats(ys);
  const double var_floor = std::max(1e-6 * stats.var, 1e-12);

  EmState s;
  s.mu = seed_centers(ys, k, rng);
  s.w.assign(k, 1.0 / k);
  s.var.assign(k, std::max(stats.var, var_floor));

  std::vector<double> resp(n * k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 500; ++iter) {
    // E step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double z = ys[i] - s.mu[j];
        const double lp = (s.w[j] > 0.0 ? std::log(s.w[j]) : -1e300) -
                          0.5 * z * z / s.var[j] - 0.5 * std::log(s.var[j]) -
                          0.9189385332046727;
        resp[i * k + j] = lp;
        m = std::max(m, lp);
      }
      double denom = 0.0;
      for (int j = 0; j < k; ++j) denom += std::exp(resp[i * k + j] - m);
      const double log_denom = m + std::log(denom);
      for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(resp[i * k + j] - log_denom);
      ll += log_denom;
    }
    s.loglik = ll;

    // M step
    bool floored = false;
    std::vector<double> nk(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) nk[j] += resp[i * k + j];
    if (!stick_conc) {
      for (int j = 0; j < k; ++j) s.w[j] = nk[j] / static_cast<double>(n);
    } else {
      // Beta(1 + N_k, conc + N_{>k}) stick modes, trailing mass closed by the
      // final stick
      double remaining = 1.0;
      double tail = std::accumulate(nk.begin(), nk.end(), 0.0);
      for (int j = 0; j < k; ++j) {
        tail -= nk[j];
        double v;
        if (j + 1 == k) {
          v = 1.0;
        } else {
          const double denom = nk[j] + *stick_conc + tail - 1.0;
          v = denom <= nk[j] ? 1.0 : nk[j] / denom;
          v = std::clamp(v, 1e-12, 1.0);
        }
        s.w[j] = remaining * v;
        remaining *= (1.0 - v);
      }
    }
    for (int j = 0; j < k; ++j) {
      if (nk[j] < 1e-10) {
        // dead component; keep parameters, weight handles it
        continue;
      }
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += resp[i * k + j] * ys[i];
      mu /= nk[j];
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double z = ys[i] - mu;
        var += resp[i * k + j] * z * z;
      }
      var /= nk[j];
      if (var < var_floor) {
        var = var_floor;
        floored = true;
      }
      s.mu[j] = mu;
      s.var[j] = var;
    }

    if (!stick_conc && !floored && iter > 0 && ll < prev_ll - 1e-6 * (1.0 + std::abs(ll))) {
      fail(Code::INTERNAL, "EM log-likelihood decreased");
    }
    if (iter > 0 && std::abs(ll - prev_ll) <= 1e-8 * (1.0 + std::abs(prev_ll))) break;
    prev_ll = ll;
  }
  s.loglik = mixture_loglik(ys, s);
  return s;
}

}  // namespace

void Dataset::validate() const {
  const std::size_t n = size();
  if (n == 0) fail(Code::DATA, "dataset is empty");
  if (t.size() != n || x.size() != n) fail(Code::DATA, "dataset columns have mismatched lengths");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) fail(Code::DATA, "missing or non-finite y at row " + std::to_string(i));
    if (t[i] != 0 && t[i] != 1) fail(Code::DATA, "t must be 0/1 at row " + std::to_string(i));
    if (x[i].size() != covariate_names.size()) {
      fail(Code::DATA, "covariate count mismatch at row " + std::to_string(i));
    }
  }
  if (w.has_value()) {
    if (w->size() != n) fail(Code::DATA, "w column length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if ((*w)[i] != 0 && (*w)[i] != 1) fail(Code::DATA, "w must be 0/1 at row " + std::to_string(i));
      if ((*w)[i] == 0 && y[i] != 0.0) {
        fail(Code::DATA, "w = 0 requires y = 0 at row " + std::to_string(i));
      }
    }
  }
}

std::vector<double> Dataset::arm_outcomes(int arm) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (t[i] == arm) out.push_back(y[i]);
  }
  return out;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Code::DATA, "cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) fail(Code::DATA, "dataset file is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  long y_col = -1, t_col = -1, w_col = -1;
  std::vector<std::size_t> x_cols;
  Dataset data;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "y") {
      y_col = static_cast<long>(c);
    } else if (header[c] == "t") {
      t_col = static_cast<long>(c);
    } else if (header[c] == "w") {
      w_col = static_cast<long>(c);
    } else {
      x_cols.push_back(c);
      data.covariate_names.push_back(header[c]);
    }
  }
  if (y_col < 0 || t_col < 0) fail(Code::DATA, "dataset needs 'y' and 't' columns: " + path);
  if (w_col >= 0) data.w.emplace();

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) {
      fail(Code::DATA, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(header.size()));
    }
    const auto num = [&](std::size_t c) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(cells[c], &pos);
        if (pos != cells[c].size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        fail(Code::DATA, "cannot parse '" + cells[c] + "' at row " + std::to_string(row));
      }
    };
    data.y.push_back(num(static_cast<std::size_t>(y_col)));
    data.t.push_back(static_cast<int>(num(static_cast<std::size_t>(t_col))));
    if (w_col >= 0) data.w->push_back(static_cast<int>(num(static_cast<std::size_t>(w_col))));
    std::vector<double> xrow;
    xrow.reserve(x_cols.size());
    for (std::size_t c : x_cols) xrow.push_back(num(c));
    data.x.push_back(std::move(xrow));
  }
  data.validate();
  return data;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Code::DATA, "cannot write dataset file: " + path);
  out << "y,t";
  if (data.w.has_value()) out << ",w";
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << '\n';
  char buf[32];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << fmt(data.y[i]) << ',' << data.t[i];
    if (data.w.has_value()) out << ',' << (*data.w)[i];
    for (double v : data.x[i]) out << ',' << fmt(v);
    out << '\n';
  }
}

void ObservedFit::validate() const {
  for (int arm = 0; arm < 2; ++arm) {
    if (arms[arm].units.empty()) fail(Code::INVARIANT_VIOLATION, "arm fit has no units");
    if (!arms[arm].pooled() && arms[arm].units.size() != treatment.size()) {
      fail(Code::INVARIANT_VIOLATION,
           "per-unit arm fit must cover every dataset unit (" +
               std::to_string(arms[arm].units.size()) + " vs " +
               std::to_string(treatment.size()) + ")");
    }
    if (atom[arm].has_value() && !(*atom[arm] >= 0.0 && *atom[arm] < 1.0)) {
      fail(Code::INVARIANT_VIOLATION, "two-part atom must lie in [0,1)");
    }
  }
  if (!treatment.empty()) {
    long n1 = std::count(treatment.begin(), treatment.end(), 1);
    long n0 = static_cast<long>(treatment.size()) - n1;
    if (prevalence.n0 > 0 && (n0 != prevalence.n0 || n1 != prevalence.n1)) {
      fail(Code::INVARIANT_VIOLATION, "treatment vector inconsistent with prevalence counts");
    }
  }
}

ObservedFit TwoPartFit::to_observed_fit(const TreatmentPrevalence& prev) const {
  ObservedFit fit;
  fit.prevalence = prev;
  fit.scale = OutcomeScale::Log;
  for (int arm = 0; arm < 2; ++arm) {
    fit.arms[arm].units = {log_mix[arm]};
    fit.atom[arm] = atom[arm];
  }
  return fit;
}

MixtureDist em_fit(const std::vector<double>& samples, int k, int restarts, std::uint64_t seed) {
  if (k < 1) fail(Code::USAGE, "em_fit requires k >= 1");
  const long n = static_cast<long>(samples.size());
  if (n < 5L * k) fail(Code::DATA, "em_fit needs at least 5K samples");
  if (k == 1) {
    const SampleStats s = sample_stats(samples);
    if (!(s.var > 0.0)) fail(Code::DEGENERATE_FIT, "zero sample variance");
    return MixtureDist(UnivariateEF::normal(s.mean, s.var));
  }
  if (restarts < 1) restarts = 1;
  EmState best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(seed + static_cast<std::uint64_t>(r));
    EmState s = run_em(samples, k, rng, std::nullopt);
    if (s.loglik > best.loglik) best = std::move(s);
  }
  for (double w : best.w) {
    if (w < 1.0 / (10.0 * static_cast<double>(n))) {
      fail(Code::DEGENERATE_FIT, "mixture weight collapsed below 1/(10n)");
    }
  }
  return state_to_mixture(best);
}

MixtureDist fit_large_k(const std::vector<double>& samples, int k_max, double concentration,
                        std::uint64_t seed) {
  if (k_max < 1) fail(Code::USAGE, "fit_large_k requires k_max >= 1");
  if (!(concentration > 0.0)) fail(Code::USAGE, "concentration must be positive");
  const long n = static_cast<long>(samples.size());
  if (n < 5L * k_max) k_max = static_cast<int>(std::max(1L, n / 5L));
  Rng rng(seed);
  EmState s = run_em(samples, k_max, rng, concentration);

  // prune and renormalize
  EmState kept;
  for (std::size_t j = 0; j < s.w.size(); ++j) {
    if (s.w[j] >= 1e-4) {
      kept.w.push_back(s.w[j]);
      kept.mu.push_back(s.mu[j]);
      kept.var.push_back(s.var[j]);
    }
  }
  if (kept.w.empty()) fail(Code::DEGENERATE_FIT, "all components pruned");
  const double total = std::accumulate(kept.w.begin(), kept.w.end(), 0.0);
  for (double& w : kept.w) w /= total;
  for (double w : kept.w) {
    if (w < 1.0 / (10.0 * static_cast<double>(n))) {
      fail(Code::DEGENERATE_FIT, "mixture weight collapsed below 1/(10n)");
    }
  }
  return state_to_mixture(kept);
}

TwoPartFit fit_two_part(const Dataset& data, int k_max, double concentration, std::uint64_t seed) {
  data.validate();
  std::array<double, 2> atom{};
  std::array<std::vector<double>, 2> logs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int arm = data.t[i];
    const bool employed = data.w.has_value() ? (*data.w)[i] == 1 : data.y[i] > 0.0;
    if (employed) {
      if (!(data.y[i] > 0.0)) fail(Code::DATA, "employed unit with nonpositive outcome");
      logs[arm].push_back(std::log(data.y[i]));
    }
  }
  for (int arm = 0; arm < 2; ++arm) {
    long n_arm = 0;
    for (std::size_t i = 0; i < data.size(); ++i) n_arm += data.t[i] == arm;
    if (n_arm == 0 || logs[arm].empty()) {
      fail(Code::EMPTY_STRATUM, "arm " + std::to_string(arm) + " has no employed units");
    }
    atom[arm] = 1.0 - static_cast<double>(logs[arm].size()) / static_cast<double>(n_arm);
  }
  return TwoPartFit{
      atom,
      {fit_large_k(logs[0], k_max, concentration, seed),
       fit_large_k(logs[1], k_max, concentration, seed + 0x9e37ULL)}};
}

ObservedFit LatentClassFit::to_observed_fit(const TreatmentPrevalence& prev,
                                            const std::vector<int>& t) const {
  ObservedFit fit;
  fit.prevalence = prev;
  fit.treatment = t;
  for (int arm = 0; arm < 2; ++arm) {
    fit.arms[arm].units.reserve(pi[arm].size());
    for (double p : pi[arm]) {
      fit.arms[arm].units.emplace_back(std::vector<UnivariateEF>{f0[arm], f1[arm]},
                                       std::vector<double>{p, 1.0 - p});
    }
  }
  return fit;
}

LatentClassFit fit_latent_class(const Dataset& data, std::uint64_t seed, int restarts) {
  data.validate();
  LatentClassFit fit;
  const std::size_t n = data.size();
  for (int arm = 0; arm < 2; ++arm) {
    const std::vector<double> ys = data.arm_outcomes(arm);
    const MixtureDist mix = em_fit(ys, 2, restarts, seed + static_cast<std::uint64_t>(arm) * 7919);
    fit.f0[arm] = mix.components()[0];
    fit.f1[arm] = mix.components()[1];

    // class-0 responsibilities for the observed units of this arm
    std::vector<double> resp;
    std::vector<std::vector<double>> rows;
    resp.reserve(ys.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (data.t[i] != arm) continue;
      const double l0 = std::log(mix.weights()[0]) + fit.f0[arm].log_pdf(data.y[i]);
      const double l1 = std::log(mix.weights()[1]) + fit.f1[arm].log_pdf(data.y[i]);
      resp.push_back(std::exp(l0 - logsumexp2(l0, l1)));
      rows.push_back(data.x[i]);
    }
    fit.pi_pooled[arm] =
        std::accumulate(resp.begin(), resp.end(), 0.0) / static_cast<double>(resp.size());
    fit.pi_pooled[arm] = std::clamp(fit.pi_pooled[arm], 1e-9, 1.0 - 1e-9);

    fit.pi[arm].assign(n, fit.pi_pooled[arm]);
    if (!data.covariate_names.empty()) {
      const LogisticModel wm = logistic_irls(rows, resp);
      for (std::size_t i = 0; i < n; ++i) {
        fit.pi[arm][i] = std::clamp(expit(wm.linear_predictor(data.x[i])), 1e-9, 1.0 - 1e-9);
      }
    }
  }
  return fit;
}

namespace {
/// Resamples outcomes from `fit`, holding t (and x, carried by `data`) fixed.
Dataset simulate_from_fit(const Dataset& data, const ObservedFit& fit, Rng& rng) {
  Dataset synth = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int arm = data.t[i];
    if (fit.two_part()) {
      const double a = fit.atom[arm].value_or(0.0);
      const bool employed = !rng.bernoulli(a);
      if (synth.w.has_value()) (*synth.w)[i] = employed ? 1 : 0;
      synth.y[i] = employed ? std::exp(sample(fit.arms[arm].at(i), rng)) : 0.0;
    } else {
      synth.y[i] = sample(fit.arms[arm].at(i), rng);
    }
  }
  return synth;
}
}  // namespace

std::vector<ObservedFit> bootstrap_draws(const Dataset& data, const ObservedFit& fit,
                                         const Fitter& fitter, int b, std::uint64_t seed) {
  std::vector<ObservedFit> draws(std::max(b, 0));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < b; ++i) {
    Rng rng(seed + static_cast<std::uint64_t>(i) + 1);
    const Dataset synth = simulate_from_fit(data, fit, rng);
    draws[static_cast<std::size_t>(i)] = fitter(synth, seed + static_cast<std::uint64_t>(i) + 1);
    draws[static_cast<std::size_t>(i)].draws.clear();
  }
  return draws;
}

namespace {

json mixture_to_json(const MixtureDist& mix) {
  json unit;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    unit["weights"].push_back(mix.weights()[k]);
    unit["means"].push_back(mix.components()[k].mean());
    unit["sds"].push_back(mix.components()[k].sd());
  }
  return unit;
}

MixtureDist mixture_from_json(const json& unit, const std::string& path) {
  if (!unit.is_object() || !unit.contains("weights") || !unit.contains("means") ||
      !unit.contains("sds")) {
    fail(Code::SCHEMA_VIOLATION, path + ": unit needs weights/means/sds arrays");
  }
  const auto& w = unit.at("weights");
  const auto& m = unit.at("means");
  const auto& s = unit.at("sds");
  if (!w.is_array() || !m.is_array() || !s.is_array() || w.size() != m.size() ||
      w.size() != s.size() || w.empty()) {
    fail(Code::SCHEMA_VIOLATION, path + ": weights/means/sds must be equal-length arrays");
  }
  std::vector<UnivariateEF> comps;
  std::vector<double> weights;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double sd = s[k].get<double>();
    if (!(sd > 0.0)) {
      fail(Code::INVARIANT_VIOLATION, path + "/sds/" + std::to_string(k) + ": sd must be > 0");
    }
    comps.push_back(UnivariateEF::normal(m[k].get<double>(), sd * sd));
    weights.push_back(w[k].get<double>());
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    fail(Code::INVARIANT_VIOLATION, path + ": weights sum to " + std::to_string(total));
  }
  for (double& x : weights) x /= total;
  return MixtureDist(std::move(comps), std::move(weights));
}

json arms_to_json(const ObservedFit& fit) {
  json arms = json::array();
  for (int arm = 0; arm < 2; ++arm) {
    json block;
    block["t"] = arm;
    block["units"] = json::array();
    for (const auto& unit : fit.arms[arm].units) block["units"].push_back(mixture_to_json(unit));
    if (fit.atom[arm].has_value()) block["atom"] = *fit.atom[arm];
    arms.push_back(std::move(block));
  }
  return arms;
}

void arms_from_json(const json& arms, ObservedFit& fit, const std::string& base) {
  if (!arms.is_array() || arms.size() != 2) {
    fail(Code::SCHEMA_VIOLATION, base + ": expected exactly two arm blocks");
  }
  bool seen[2] = {false, false};
  for (std::size_t a = 0; a < 2; ++a) {
    const json& block = arms[a];
    const std::string path = base + "/" + std::to_string(a);
    if (!block.is_object() || !block.contains("t") || !block.contains("units")) {
      fail(Code::SCHEMA_VIOLATION, path + ": arm block needs 't' and 'units'");
    }
    const int t = block.at("t").get<int>();
    if (t != 0 && t != 1) fail(Code::SCHEMA_VIOLATION, path + "/t: must be 0 or 1");
    if (seen[t]) fail(Code::SCHEMA_VIOLATION, path + "/t: duplicate arm");
    seen[t] = true;
    const json& units = block.at("units");
    if (!units.is_array() || units.empty()) {
      fail(Code::SCHEMA_VIOLATION, path + "/units: must be a nonempty array");
    }
    fit.arms[t].units.clear();
    fit.arms[t].units.reserve(units.size());
    for (std::size_t u = 0; u < units.size(); ++u) {
      fit.arms[t].units.push_back(
          mixture_from_json(units[u], path + "/units/" + std::to_string(u)));
    }
    if (block.contains("atom")) {
      const double atom = block.at("atom").get<double>();
      if (!(atom >= 0.0 && atom < 1.0)) {
        fail(Code::INVARIANT_VIOLATION, path + "/atom: must lie in [0,1)");
      }
      fit.atom[t] = atom;
    }
  }
}

}  // namespace

std::string export_fit_json(const ObservedFit& fit) {
  json j;
  j["prevalence"]["n0"] = fit.prevalence.n0;
  j["prevalence"]["n1"] = fit.prevalence.n1;
  if (fit.prevalence.n0 == 0 && fit.prevalence.n1 == 0) j["prevalence"]["p1"] = fit.prevalence.p1;
  j["arms"] = arms_to_json(fit);
  if (!fit.treatment.empty()) j["treatment"] = fit.treatment;
  j["scale"] = fit.scale == OutcomeScale::Log ? "log" : "natural";
  if (!fit.draws.empty()) {
    j["draws"] = json::array();
    for (const auto& d : fit.draws) {
      json draw;
      draw["arms"] = arms_to_json(d);
      j["draws"].push_back(std::move(draw));
    }
  }
  return j.dump(1);
}

void write_fit_json(const ObservedFit& fit, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(Code::DATA, "cannot write fit file: " + path);
  out << export_fit_json(fit) << '\n';
}

ObservedFit parse_external_fit(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(Code::SCHEMA_VIOLATION, std::string("invalid JSON: ") + e.what());
  }
  ObservedFit fit;
  if (!j.is_object() || !j.contains("prevalence") || !j.contains("arms")) {
    fail(Code::SCHEMA_VIOLATION, "/: top level needs 'prevalence' and 'arms'");
  }
  const json& prev = j.at("prevalence");
  if (prev.contains("n0") && prev.contains("n1") &&
      (prev.at("n0").get<long>() > 0 || prev.at("n1").get<long>() > 0)) {
    fit.prevalence = TreatmentPrevalence::from_counts(prev.at("n0").get<long>(),
                                                      prev.at("n1").get<long>());
  } else if (prev.contains("p1")) {
    fit.prevalence = TreatmentPrevalence::from_probability(prev.at("p1").get<double>());
  } else {
    fail(Code::SCHEMA_VIOLATION, "/prevalence: needs counts n0,n1 or p1");
  }
  if (j.contains("scale")) {
    const std::string s = j.at("scale").get<std::string>();
    if (s == "log") {
      fit.scale = OutcomeScale::Log;
    } else if (s == "natural") {
      fit.scale = OutcomeScale::Natural;
    } else {
      fail(Code::SCHEMA_VIOLATION, "/scale: must be 'natural' or 'log'");
    }
  }
  arms_from_json(j.at("arms"), fit, "/arms");

  const std::size_t n_units =
      std::max(fit.arms[0].units.size(), fit.arms[1].units.size());
  if (n_units > 1) {
    if (j.contains("treatment")) {
      fit.treatment = j.at("treatment").get<std::vector<int>>();
      if (fit.treatment.size() != n_units) {
        fail(Code::SCHEMA_VIOLATION, "/treatment: length must match the unit count");
      }
    } else {
      // convention: first n0 units are controls, the rest treated
      if (fit.prevalence.n0 + fit.prevalence.n1 != static_cast<long>(n_units)) {
        fail(Code::SCHEMA_VIOLATION,
             "/treatment: required when unit count differs from n0 + n1");
      }
      fit.treatment.assign(n_units, 0);
      for (std::size_t i = static_cast<std::size_t>(fit.prevalence.n0); i < n_units; ++i) {
        fit.treatment[i] = 1;
      }
    }
  }
  if (j.contains("draws")) {
    const json& draws = j.at("draws");
    if (!draws.is_array()) fail(Code::SCHEMA_VIOLATION, "/draws: must be an array");
    for (std::size_t d = 0; d < draws.size(); ++d) {
      ObservedFit rep;
      rep.prevalence = fit.prevalence;
      rep.treatment = fit.treatment;
      rep.scale = fit.scale;
      const json& src = draws[d].contains("arms") ? draws[d] : json{{"arms", draws[d]}};
      arms_from_json(src.at("arms"), rep, "/draws/" + std::to_string(d) + "/arms");
      fit.draws.push_back(std::move(rep));
    }
  }
  fit.validate();
  return fit;
}

ObservedFit ingest_external_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Code::DATA, "cannot open fit file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_external_fit(ss.str());
}

}  // namespace tiltsense
