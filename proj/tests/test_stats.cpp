#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "wgm/errors.hpp"
#include "wgm/interval.hpp"
#include "wgm/models.hpp"
#include "wgm/observables.hpp"
#include "wgm/stats.hpp"
#include "wgm/tower.hpp"

using namespace wgm;

namespace {

SymbolicModel full_shift_r1() {
  SymbolicModel m;
  m.name = "r1";
  m.n_symbols = 2;
  m.images = {{0, 1}, {0, 1}};
  m.return_time = {1, 1};
  m.element_mass = {0.5, 0.5};
  m.edge_weight = {{0.5, 0.5}, {0.5, 0.5}};
  m.beta = 0.5;
  m.gibbs_constant = 1.0;
  m.delta0 = 0.5;
  m.validate();
  return m;
}

CorrelationSeries synthetic(const std::vector<double>& values) {
  CorrelationSeries s;
  s.exact = true;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s.n.push_back(static_cast<int>(i));
    s.corr.push_back(values[i]);
    s.err.push_back(0.0);
  }
  return s;
}

}  // namespace

TEST_CASE("sampled correlations agree with the transfer-matrix series") {
  const auto o1 = oracle_o1();
  const auto t = build_tower(o1, 2, 8, 0.0);
  const auto transfer = build_transfer(t);
  const auto chain = build_forward_chain(t);
  const auto inv = invariant_density(t, transfer);
  const auto law = stationary_forward(t, chain);
  const auto phi = make_observable(t, {ObsClass::V1, 0.5}, 7);
  const auto psi = make_observable(t, {ObsClass::V4, 2.0}, 9);

  const auto exact = exact_correlation(t, transfer, inv, phi, psi, 20);
  REQUIRE(exact.exact);

  CorrelationOptions opt;
  opt.n_max = 20;
  opt.ensemble = 20000;
  opt.seed = 3;
  const auto mc = correlation_mc(t, chain, law, phi, psi, opt);
  REQUIRE(mc.n == exact.n);
  int within = 0, tested = 0;
  for (std::size_t i = 0; i < mc.n.size(); ++i) {
    if (mc.err[i] <= 0) continue;
    ++tested;
    if (std::abs(mc.corr[i] - exact.corr[i]) <= 3 * mc.err[i]) ++within;
  }
  REQUIRE(tested >= 15);
  CHECK(within >= tested * 95 / 100);
}

TEST_CASE("independent symbols have exactly zero correlation beyond lag zero") {
  const auto m = full_shift_r1();
  const auto t = build_tower(m, 1, 4, 0.0);
  const auto transfer = build_transfer(t);
  const auto inv = invariant_density(t, transfer);
  const std::vector<double> phi = {1.0, 0.0}, psi = {1.0, 0.0};
  const auto s = exact_correlation(t, transfer, inv, phi, psi, 12);
  CHECK(s.corr[0] == doctest::Approx(0.25).epsilon(1e-12));
  for (std::size_t i = 0; i < s.n.size(); ++i)
    if (s.n[i] >= 1) CHECK(std::abs(s.corr[i]) < 1e-14);
}

TEST_CASE("a constant factor has no signal to fit") {
  const auto o1 = oracle_o1();
  const auto t = build_tower(o1, 2, 8, 0.0);
  const auto transfer = build_transfer(t);
  const auto inv = invariant_density(t, transfer);
  const auto phi = make_observable(t, {ObsClass::V1, 0.5}, 7);
  const std::vector<double> ones(t.n_cells(), 1.0);
  const auto s = exact_correlation(t, transfer, inv, phi, ones, 20);
  for (double c : s.corr) CHECK(std::abs(c) < 1e-13);
  CHECK_THROWS_AS(fit_rate(s), hypothesis_error);
}

TEST_CASE("rate fitting recovers synthetic laws") {
  std::vector<double> poly, polylog, expo, stretched, logpower;
  for (int n = 0; n <= 40; ++n) {
    const double x = std::max(n, 1);
    poly.push_back(std::pow(x, -2.0) * (1.0 + 0.01 * (n % 2 ? 1 : -1)));
    polylog.push_back(std::pow(x, -1.0) * std::log(x));  // zero until n = 2, then exact
    expo.push_back(std::exp(-0.3 * n));
    stretched.push_back(std::exp(-std::pow(x, 0.5)));
    logpower.push_back(std::exp(-std::pow(std::log(x), 2.0)));
  }
  const auto f1 = fit_rate(synthetic(poly));
  CHECK(f1.law == "polynomial");
  CHECK(f1.exponent == doctest::Approx(-2.0).epsilon(0.05));

  const auto f2 = fit_rate(synthetic(polylog));
  CHECK(f2.law == "poly-log");

  const auto f3 = fit_rate(synthetic(expo));
  CHECK(f3.law == "exponential");
  CHECK(f3.rate == doctest::Approx(0.3).epsilon(0.02));

  const auto f4 = fit_rate(synthetic(stretched));
  CHECK(f4.law == "stretched-exp");
  CHECK(f4.tau == doctest::Approx(0.5).epsilon(0.05));

  const auto f5 = fit_rate(synthetic(logpower));
  CHECK(f5.law == "log-power");
  CHECK(f5.tau == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("rate fitting is scale-equivariant") {
  std::vector<double> base, scaled;
  for (int n = 0; n <= 30; ++n) {
    const double v = std::pow(std::max(n, 1), -1.5);
    base.push_back(v);
    scaled.push_back(7.0 * v);
  }
  const auto a = fit_rate(synthetic(base));
  const auto b = fit_rate(synthetic(scaled));
  CHECK(a.law == b.law);
  CHECK(a.exponent == doctest::Approx(b.exponent).epsilon(1e-12));
  CHECK(b.constant == doctest::Approx(7.0 * a.constant).epsilon(1e-9));
}

TEST_CASE("wilson bands bracket the proportion and stay inside [0,1]") {
  double lo = -1, hi = -1;
  wilson_band(0, 1000, 2.0, lo, hi);
  CHECK(lo == 0.0);
  CHECK(hi > 0.0);
  CHECK(hi < 0.02);

  wilson_band(1000, 1000, 2.0, lo, hi);
  CHECK(hi <= 1.0);
  CHECK(lo > 0.98);

  wilson_band(300, 1000, 2.0, lo, hi);
  CHECK(lo < 0.3);
  CHECK(hi > 0.3);
  CHECK(hi - lo < 0.07);
}

TEST_CASE("power-tail fits weight by surviving counts") {
  std::vector<double> n, surv, counts;
  for (double x = 2; x <= 512; x *= 2) {
    n.push_back(x);
    surv.push_back(3.0 * std::pow(x, -1.7));
    counts.push_back(1e6 * surv.back());
  }
  // a zero-survival point must drop out instead of destroying the fit
  n.push_back(1024);
  surv.push_back(0.0);
  counts.push_back(0.0);
  const auto f = fit_power_tail(n, surv, counts);
  CHECK(f.used == 9);
  CHECK(f.slope == doctest::Approx(-1.7).epsilon(1e-9));
  CHECK(f.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  CHECK(f.rms < 1e-9);

  CHECK_THROWS_AS(fit_power_tail({2.0}, {0.5}, {100.0}), hypothesis_error);
}

TEST_CASE("normalized sums of independent signs have unit variance") {
  const auto m = full_shift_r1();
  const auto t = build_tower(m, 1, 4, 0.0);
  const auto chain = build_forward_chain(t);
  const auto law = stationary_forward(t, chain);
  const std::vector<double> phi = {1.0, -1.0};
  const auto rep = clt_experiment(t, chain, law, phi, 500, 4000, 11);
  CHECK_FALSE(rep.degenerate);
  CHECK(rep.sigma2 == doctest::Approx(1.0).epsilon(0.08));
  CHECK(std::abs(rep.mean) < 1e-12);
  CHECK(rep.ks < 0.06);
}

TEST_CASE("an identically zero observable is reported degenerate") {
  const auto m = full_shift_r1();
  const auto t = build_tower(m, 1, 4, 0.0);
  const auto chain = build_forward_chain(t);
  const auto law = stationary_forward(t, chain);
  const std::vector<double> zero(t.n_cells(), 0.0);
  const auto rep = clt_experiment(t, chain, law, zero, 100, 500, 11);
  CHECK(rep.degenerate);
}

TEST_CASE("KS distance does not grow with the sum length") {
  const auto o1 = oracle_o1();
  const auto t = build_tower(o1, 2, 8, 0.0);
  const auto chain = build_forward_chain(t);
  const auto law = stationary_forward(t, chain);
  const auto phi = make_observable(t, {ObsClass::V1, 0.5}, 7);
  const auto small = clt_experiment(t, chain, law, phi, 100, 10000, 13);
  const auto big = clt_experiment(t, chain, law, phi, 10000, 10000, 13);
  REQUIRE_FALSE(small.degenerate);
  REQUIRE_FALSE(big.degenerate);
  CHECK(big.ks <= small.ks + 0.01);
}

TEST_CASE("exceedance probabilities decay and keep their bands") {
  const auto o1 = oracle_o1();
  const auto t = build_tower(o1, 2, 8, 0.0);
  const auto chain = build_forward_chain(t);
  const auto law = stationary_forward(t, chain);
  const auto phi = make_observable(t, {ObsClass::V1, 0.5}, 7);

  LdOptions opt;
  opt.eps = 0.1;
  opt.n_grid = {2, 4, 8, 16, 32, 64};
  opt.ensemble = 30000;
  opt.seed = 19;
  const auto rep = ld_experiment(t, chain, law, phi, opt);
  double mu = 0;
  for (std::size_t i = 0; i < law.size(); ++i) mu += law[i] * phi[i];
  CHECK(rep.mean == doctest::Approx(mu).epsilon(1e-12));
  for (std::size_t i = 0; i < rep.n_grid.size(); ++i) {
    CHECK(rep.lo[i] <= rep.ld[i] + 1e-12);
    CHECK(rep.hi[i] >= rep.ld[i] - 1e-12);
    CHECK(rep.ld[i] == doctest::Approx(static_cast<double>(rep.hits[i]) / opt.ensemble));
  }
  CHECK(rep.ld.back() < rep.ld.front());

  // a constant observable never exceeds its own mean
  const std::vector<double> ones(t.n_cells(), 1.0);
  const auto flat = ld_experiment(t, chain, law, ones, opt);
  CHECK(flat.one_sided);
  for (auto h : flat.hits) CHECK(h == 0);
  CHECK_FALSE(flat.fitted);
}

TEST_CASE("interval routes refuse a burn-in below the minimum") {
  const auto skew = SkewProduct::default_skew();
  const BaseObservable phi = [](double, double x) { return x; };
  CorrelationOptions opt;
  opt.burn_in = 10;
  opt.ensemble = 100;
  CHECK_THROWS_AS(correlation_mc(skew, phi, phi, opt), config_error);
  CHECK_THROWS_AS(clt_experiment(skew, phi, 100, 100, 1, 10), config_error);
  LdOptions lopt;
  lopt.burn_in = 10;
  lopt.ensemble = 100;
  lopt.n_grid = {4, 8};
  CHECK_THROWS_AS(ld_experiment(skew, phi, lopt), config_error);
}

TEST_CASE("fixed seeds reproduce every estimate bit for bit") {
  const auto o1 = oracle_o1();
  const auto t = build_tower(o1, 2, 8, 0.0);
  const auto chain = build_forward_chain(t);
  const auto law = stationary_forward(t, chain);
  const auto phi = make_observable(t, {ObsClass::V1, 0.5}, 7);

  CorrelationOptions opt;
  opt.n_max = 10;
  opt.ensemble = 5000;
  opt.seed = 21;
  const auto a = correlation_mc(t, chain, law, phi, phi, opt);
  const auto b = correlation_mc(t, chain, law, phi, phi, opt);
  CHECK(a.corr == b.corr);
  CHECK(a.err == b.err);

  opt.seed = 22;
  const auto c = correlation_mc(t, chain, law, phi, phi, opt);
  CHECK(a.corr != c.corr);
}
