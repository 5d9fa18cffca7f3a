// Timing harness comparing the serial reference kernels against the
// OpenMP-parallel ones on a synthetic per-unit model.

#include <chrono>
#include <cstdio>
#include <omp.h>

#include "tiltsense/copula.hpp"
#include "tiltsense/estimands.hpp"
#include "tiltsense/simgen.hpp"

using namespace tiltsense;

namespace {

double seconds(const std::function<void()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ObservedFit per_unit_fixture(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ObservedFit fit;
  fit.treatment.resize(n);
  for (std::size_t i = 0; i < n; ++i) fit.treatment[i] = rng.bernoulli(0.5) ? 1 : 0;
  const long n1 = std::count(fit.treatment.begin(), fit.treatment.end(), 1);
  fit.prevalence = TreatmentPrevalence::from_counts(static_cast<long>(n) - n1, n1);
  for (int arm = 0; arm < 2; ++arm) {
    fit.arms[arm].units.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      fit.arms[arm].units.emplace_back(
          UnivariateEF::normal(rng.normal(arm == 1 ? -0.7 : 0.0, 2.0), 120.0));
    }
  }
  return fit;
}

}  // namespace

int main() {
  const std::size_t n_units = 4000;
  CompleteDataModel model{per_unit_fixture(n_units, 99), SelectionModel{}};

  SweepRequest request;
  request.axis0 = GridAxis{"gamma0", -0.05, 0.05, 11};
  request.axis1 = GridAxis{"gamma1", -0.05, 0.05, 11};
  request.kind = EstimandKind::ATE;

  IgnoranceTable serial_table, parallel_table;
  const double t_serial = seconds([&] { serial_table = sweep_reference(model, request); });
  const double t_parallel = seconds([&] { parallel_table = sweep(model, request); });
  bool identical = serial_table.cells.size() == parallel_table.cells.size();
  for (std::size_t i = 0; identical && i < serial_table.cells.size(); ++i) {
    identical = serial_table.cells[i].result.estimate == parallel_table.cells[i].result.estimate;
  }

  std::printf("sweep (11x11 ATE, %zu per-unit conditionals)\n", n_units);
  std::printf("  serial reference : %8.3f s\n", t_serial);
  std::printf("  openmp (%d thr)   : %8.3f s  speedup %.2fx  identical=%s\n",
              omp_get_max_threads(), t_parallel, t_serial / t_parallel,
              identical ? "yes" : "NO");

  ObservedFit pooled;
  pooled.prevalence = TreatmentPrevalence::from_probability(0.5);
  pooled.arms[0].units = {MixtureDist(UnivariateEF::normal(0.0, 120.0))};
  pooled.arms[1].units = {MixtureDist(UnivariateEF::normal(-0.7, 110.0))};
  const SensitivityPoint point{0.02, 0.02};
  const CopulaSpec copula = CopulaSpec::gaussian(0.5);
  JointDraws d1, d4;
  const double t_joint1 = seconds(
      [&] { d1 = joint_sample(pooled, SelectionModel{}, point, copula, 400000, 7, 1); });
  const double t_joint = seconds(
      [&] { d4 = joint_sample(pooled, SelectionModel{}, point, copula, 400000, 7, 0); });
  bool joint_identical = d1.y0 == d4.y0 && d1.y1 == d4.y1 && d1.t == d4.t;
  std::printf("joint_sample (4e5 draws, Gaussian copula)\n");
  std::printf("  1 worker         : %8.3f s\n", t_joint1);
  std::printf("  openmp (%d thr)   : %8.3f s  speedup %.2fx  identical=%s\n",
              omp_get_max_threads(), t_joint, t_joint1 / t_joint,
              joint_identical ? "yes" : "NO");
  return identical && joint_identical ? 0 : 1;
}
