#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tiltsense/ef.hpp"

using namespace tiltsense;

namespace {

MixtureDist two_comp() {
  return MixtureDist({UnivariateEF::normal(0.0, 1.0), UnivariateEF::normal(5.0, 4.0)},
                     {0.5, 0.5});
}

MixtureDist five_comp() {
  return MixtureDist({UnivariateEF::normal(-2.0, 0.5), UnivariateEF::normal(-0.5, 1.0),
                      UnivariateEF::normal(0.7, 2.0), UnivariateEF::normal(3.0, 0.8),
                      UnivariateEF::normal(6.0, 3.0)},
                     {0.1, 0.25, 0.3, 0.15, 0.2});
}

// Quadrature reference for the tilted mixture weights: per-component
// normalizers integrated independently of the closed-form path.
std::vector<double> oracle_weights(const MixtureDist& mix, const TiltVector& tv) {
  std::vector<double> c(mix.size());
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const auto one = MixtureDist(mix.components()[k]);
    c[k] = mix.weights()[k] * std::exp(numeric_tilt_oracle(one, tv).log_constant);
  }
  double s = 0.0;
  for (double x : c) s += x;
  for (double& x : c) x /= s;
  return c;
}

}  // namespace

TEST_CASE("parameter views stay consistent") {
  for (double p : {1e-6, 0.3, 0.5, 0.97, 1.0 - 1e-9}) {
    const auto d = UnivariateEF::bernoulli(p);
    const auto back = UnivariateEF::from_natural(Family::Bernoulli, d.eta1());
    CHECK(back.mean() == doctest::Approx(p).epsilon(1e-12));
  }
  for (double mu : {-7.0, 0.0, 1.3}) {
    for (double s2 : {1e-4, 0.49, 11.0}) {
      const auto d = UnivariateEF::normal(mu, s2);
      const auto back = UnivariateEF::from_natural(Family::Normal, d.eta1(), d.eta2());
      CHECK(back.mean() == doctest::Approx(mu).epsilon(1e-12));
      CHECK(back.variance() == doctest::Approx(s2).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(UnivariateEF::bernoulli(0.0), Error);
  CHECK_THROWS_AS(UnivariateEF::bernoulli(1.0), Error);
  CHECK_THROWS_AS(UnivariateEF::normal(0.0, 0.0), Error);
  CHECK_THROWS_AS(UnivariateEF::normal(0.0, -1.0), Error);
}

TEST_CASE("zero tilt is the identity, bitwise") {
  const auto d = UnivariateEF::normal(1.3, 0.49);
  const auto t = tilt(d, {0.0, 0.0});
  CHECK(t.mean() == 1.3);
  CHECK(t.variance() == 0.49);
  const auto mix = two_comp();
  const auto tm = tilt_mixture(mix, {0.0, 0.0});
  for (std::size_t k = 0; k < mix.size(); ++k) {
    CHECK(tm.weights()[k] == mix.weights()[k]);
    CHECK(tm.components()[k].mean() == mix.components()[k].mean());
    CHECK(tm.components()[k].variance() == mix.components()[k].variance());
  }
}

TEST_CASE("linear Normal tilt shifts the mean by gamma*sigma2 and keeps the sd") {
  const double mu = -0.4, s2 = 2.3, g = 0.8;
  const auto t = tilt(UnivariateEF::normal(mu, s2), {g, 0.0});
  CHECK(t.mean() == doctest::Approx(mu + g * s2).epsilon(1e-15));
  CHECK(t.variance() == doctest::Approx(s2).epsilon(1e-15));
  CHECK(t.mean() - mu == g * s2);
}

TEST_CASE("quadratic Normal tilt matches the closed form") {
  const double mu = 1.0, s2 = 0.5, g = 0.3, q = 0.4;
  const double denom = 1.0 - 2.0 * q * s2;  // 0.6
  const auto t = tilt(UnivariateEF::normal(mu, s2), {g, q});
  CHECK(t.mean() == doctest::Approx((mu + g * s2) / denom).epsilon(1e-14));
  CHECK(t.variance() == doctest::Approx(s2 / denom).epsilon(1e-14));
}

TEST_CASE("tilt propriety is enforced") {
  const auto d = UnivariateEF::normal(0.0, 1.0);
  CHECK_THROWS_AS(tilt(d, {0.0, 0.5}), Error);   // 1 - 2*0.5*1 = 0
  CHECK_THROWS_AS(tilt(d, {0.0, 0.7}), Error);
  CHECK_NOTHROW(tilt(d, {0.0, 0.49}));
  CHECK_NOTHROW(tilt(d, {0.0, -3.0}));  // negative quadratic always proper
  try {
    tilt(d, {0.0, 0.6});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Code::PROPRIETY_VIOLATION);
  }
  try {
    tilt(UnivariateEF::bernoulli(0.3), {0.1, 0.2});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Code::FAMILY_MISMATCH);
  }
}

TEST_CASE("Bernoulli tilt is a log-odds shift") {
  const auto t = tilt(UnivariateEF::bernoulli(0.3), {std::log(2.0), 0.0});
  CHECK(t.mean() == doctest::Approx(6.0 / 13.0).epsilon(1e-12));
  // cross-check against the two-point oracle
  const auto o = numeric_tilt_oracle(MixtureDist(UnivariateEF::bernoulli(0.3)),
                                     {std::log(2.0), 0.0});
  CHECK(o.density[1] == doctest::Approx(6.0 / 13.0).epsilon(1e-12));
  CHECK(std::exp(o.log_constant) == doctest::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("oracle normalizer matches the Normal MGF") {
  const auto d = MixtureDist(UnivariateEF::normal(1.3, 0.49));
  const double g = 0.7;
  const auto o = numeric_tilt_oracle(d, {g, 0.0});
  const double closed = g * 1.3 + 0.5 * g * g * 0.49;  // 0.91 + 0.12005
  CHECK(o.log_constant == doctest::Approx(closed).epsilon(1e-8));
  const auto zero = numeric_tilt_oracle(d, {0.0, 0.0});
  CHECK(std::exp(zero.log_constant) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("mixture reweighting agrees with the quadrature oracle") {
  const auto mix = two_comp();
  for (double g : {0.7, -0.7, 0.3, 1.0}) {
    const auto tm = tilt_mixture(mix, {g, 0.0});
    const auto ow = oracle_weights(mix, {g, 0.0});
    for (std::size_t k = 0; k < mix.size(); ++k) {
      CHECK(tm.weights()[k] == doctest::Approx(ow[k]).epsilon(1e-6));
    }
  }
  const auto big = five_comp();
  const auto tm = tilt_mixture(big, {-0.5, 0.1});
  const auto ow = oracle_weights(big, {-0.5, 0.1});
  for (std::size_t k = 0; k < big.size(); ++k) {
    CHECK(tm.weights()[k] == doctest::Approx(ow[k]).epsilon(1e-6));
  }
}

TEST_CASE("tilted mixture density agrees pointwise with the oracle") {
  const auto mix = five_comp();
  const TiltVector tv{0.6, 0.0};
  const auto tm = tilt_mixture(mix, tv);
  const auto o = numeric_tilt_oracle(mix, tv);
  for (std::size_t i = 0; i < o.grid.size(); i += 97) {
    CHECK(std::abs(tm.pdf(o.grid[i]) - o.density[i]) <= 1e-6);
  }
}

TEST_CASE("tilts compose additively and invert") {
  const TiltVector a{0.4, 0.05};
  const TiltVector b{-0.9, 0.1};
  const auto d = UnivariateEF::normal(0.7, 1.4);
  const auto two_step = tilt(tilt(d, a), b);
  const auto one_step = tilt(d, a + b);
  CHECK(two_step.mean() == doctest::Approx(one_step.mean()).epsilon(1e-12));
  CHECK(two_step.variance() == doctest::Approx(one_step.variance()).epsilon(1e-12));
  const auto back = tilt(tilt(d, a), -a);
  CHECK(back.mean() == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(back.variance() == doctest::Approx(1.4).epsilon(1e-12));

  // mixture round trip, weights included
  const auto mix = two_comp();
  const auto round = tilt_mixture(tilt_mixture(mix, a), -a);
  for (std::size_t k = 0; k < mix.size(); ++k) {
    CHECK(round.weights()[k] == doctest::Approx(mix.weights()[k]).epsilon(1e-12));
    CHECK(round.components()[k].mean() ==
          doctest::Approx(mix.components()[k].mean()).epsilon(1e-12));
  }
}

TEST_CASE("mixture moments") {
  const auto mix = two_comp();
  CHECK(mean(mix) == doctest::Approx(2.5));
  // E[Y^2] = .5*(0+1) + .5*(25+4) = 15 ; var = 15 - 6.25
  CHECK(variance(mix) == doctest::Approx(8.75));
  const MixtureDist with_atom({UnivariateEF::normal(5.0, 1.0)}, {0.6}, 0.4);
  CHECK(mean(with_atom) == doctest::Approx(3.0));
}

TEST_CASE("mixture density integrates to one (quadrature)") {
  const auto o = numeric_tilt_oracle(five_comp(), {0.0, 0.0});
  CHECK(std::exp(o.log_constant) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("quantile basics") {
  const MixtureDist std_normal(UnivariateEF::normal(0.0, 1.0));
  CHECK(std::abs(quantile(std_normal, 0.5)) <= 1e-9);
  CHECK_THROWS_AS(quantile(std_normal, 0.0), Error);
  CHECK_THROWS_AS(quantile(std_normal, 1.0), Error);

  const MixtureDist with_atom({UnivariateEF::normal(5.0, 1.0)}, {0.6}, 0.4);
  CHECK(quantile(with_atom, 0.3) == 0.0);
  CHECK(quantile(with_atom, 0.39999) == 0.0);
  CHECK(quantile(with_atom, 0.5) > 0.0);
}

TEST_CASE("cdf-quantile round trip over a q grid") {
  const auto mix = two_comp();
  for (double q = 0.01; q < 0.999; q += 0.0317) {
    const double y = quantile(mix, q);
    CHECK(cdf(mix, y) >= q - 1e-10);
    CHECK(cdf(mix, y) <= q + 1e-9);
  }
  const MixtureDist with_atom({UnivariateEF::normal(5.0, 1.0)}, {0.6}, 0.4);
  for (double q : {0.1, 0.4, 0.41, 0.9}) {
    const double y = quantile(with_atom, q);
    CHECK(cdf(with_atom, y) >= q - 1e-10);  // jump at the atom allowed upward
  }
}

TEST_CASE("median of the two-component mixture matches a Monte-Carlo oracle") {
  const auto mix = two_comp();
  const double med = quantile(mix, 0.5);
  const std::size_t n = 10'000'000;
  Rng rng(20240811);
  std::size_t below = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sample(mix, rng) <= med) ++below;
  }
  const double phat = static_cast<double>(below) / static_cast<double>(n);
  const double se = std::sqrt(0.25 / static_cast<double>(n));
  CHECK(std::abs(phat - 0.5) <= 3.0 * se);
}

TEST_CASE("Bernoulli mixture cdf and quantile") {
  const MixtureDist mix({UnivariateEF::bernoulli(0.2), UnivariateEF::bernoulli(0.8)},
                        {0.5, 0.5});
  CHECK(cdf(mix, 0.0) == doctest::Approx(0.5));
  CHECK(cdf(mix, 1.0) == doctest::Approx(1.0));
  CHECK(quantile(mix, 0.4) == 0.0);
  CHECK(quantile(mix, 0.6) == 1.0);
}

TEST_CASE("oracle rejects a grid that clips the tails") {
  const auto mix = MixtureDist(UnivariateEF::normal(0.0, 1.0));
  CHECK_THROWS_AS(numeric_tilt_oracle(mix, {0.0, 0.0}, 4096, 2.0), Error);
}

TEST_CASE("weights must sum to one") {
  CHECK_THROWS_AS(MixtureDist({UnivariateEF::normal(0, 1)}, {0.9}), Error);
  CHECK_THROWS_AS(MixtureDist({UnivariateEF::normal(0, 1)}, {0.5}, 0.4), Error);
  CHECK_NOTHROW(MixtureDist({UnivariateEF::normal(0, 1)}, {0.6}, 0.4));
}
