#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wgm/errors.hpp"
#include "wgm/models.hpp"
#include "wgm/observables.hpp"

using namespace wgm;

TEST_CASE("class templates at frozen points") {
  CHECK(class_template({ObsClass::V1, 0.5}, 3) == doctest::Approx(0.125));
  CHECK(class_template({ObsClass::V2, 0.5}, 4) == doctest::Approx(std::exp(-2.0)));
  CHECK(class_template({ObsClass::V3, 2.0}, 1) == doctest::Approx(1.0));
  CHECK(class_template({ObsClass::V3, 2.0}, 4) ==
        doctest::Approx(std::exp(-std::pow(std::log(4.0), 2))));
  CHECK(class_template({ObsClass::V4, 3.0}, 2) == doctest::Approx(0.125));
  for (auto cls : {ObsClass::V1, ObsClass::V2}) CHECK(class_template({cls, 0.5}, 0) == 1.0);
  for (auto cls : {ObsClass::V3, ObsClass::V4}) {
    CHECK(class_template({cls, 2.0}, 0) == 1.0);
    CHECK(class_template({cls, 2.0}, 1) == 1.0);
  }
}

TEST_CASE("radial templates") {
  CHECK(radial_template({ObsClass::R4, 2.0}, std::exp(-1.0)) == doctest::Approx(0.25));
  CHECK(radial_template({ObsClass::R1, 0.5}, 0.25) == doctest::Approx(0.5));
  for (auto cls : {ObsClass::R1, ObsClass::R2}) {
    CHECK(radial_template({cls, 0.5}, 0.0) == 0.0);
    CHECK(radial_template({cls, 0.5}, 1.5) == 1.0);
  }
  // monotone in the distance
  for (auto cls : {ObsClass::R1, ObsClass::R2, ObsClass::R3, ObsClass::R4}) {
    double tau = (cls == ObsClass::R1 || cls == ObsClass::R2) ? 0.5 : 2.0;
    double prev = 0;
    for (double d = 1e-9; d < 1; d *= 10) {
      double g = radial_template({cls, tau}, d);
      CHECK(g >= prev);
      prev = g;
    }
  }
}

TEST_CASE("legal parameter ranges") {
  CHECK_THROWS_AS(check_class_range({ObsClass::V1, 1.5}), config_error);
  CHECK_THROWS_AS(check_class_range({ObsClass::V4, 0.5}), config_error);
  CHECK_THROWS_AS(check_class_range({ObsClass::R2, 1.0}), config_error);
  CHECK_NOTHROW(check_class_range({ObsClass::V2, 0.5}));
  CHECK_NOTHROW(check_class_range({ObsClass::R3, 2.0}));
}

TEST_CASE("variation of a leading-symbol function vanishes from 1 on") {
  auto t = build_tower(oracle_o1(), 4, 8, 0.0);
  std::vector<double> phi(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) phi[c] = t.word_of(c)[0];
  auto prof = variation_v(t, phi, 6);
  CHECK(prof.v[0] == 2.0);
  for (int n = 1; n <= 6; ++n) CHECK(prof.v[n] == 0.0);
}

TEST_CASE("variation matches the tail-sum oracle for a parity series") {
  auto t = build_tower(oracle_o1(), 5, 8, 0.0);
  std::vector<double> coef(5);
  for (int k = 0; k < 5; ++k) coef[k] = std::pow(k + 1.0, -3);
  std::vector<double> phi(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) {
    double acc = 0;
    for (int k = 0; k < 5; ++k) acc += coef[k] * (t.word_of(c)[k] & 1);
    phi[c] = acc;
  }
  auto prof = variation_v(t, phi, 7);
  for (int n = 0; n <= 7; ++n) {
    double tail = 0;
    for (int k = n; k < 5; ++k) tail += coef[k];
    CHECK(prof.v[n] == doctest::Approx(tail).epsilon(1e-13));
  }
  for (size_t n = 1; n < prof.v.size(); ++n) CHECK(prof.v[n] <= prof.v[n - 1]);
}

TEST_CASE("fixtures hit their template variation exactly and round-trip") {
  auto t = build_tower(oracle_o1(), 8, 8, 0.0);
  struct Want {
    ClassSpec spec;
    double tol;
  };
  std::vector<Want> cases = {
      {{ObsClass::V1, 0.3}, 0.02}, {{ObsClass::V1, 0.5}, 0.02}, {{ObsClass::V1, 0.7}, 0.02},
      {{ObsClass::V2, 0.3}, 0.05}, {{ObsClass::V2, 0.5}, 0.05}, {{ObsClass::V2, 0.8}, 0.05},
      {{ObsClass::V3, 1.5}, 0.05}, {{ObsClass::V3, 2.0}, 0.05}, {{ObsClass::V3, 3.0}, 0.05},
      {{ObsClass::V4, 1.5}, 0.02}, {{ObsClass::V4, 3.0}, 0.02}, {{ObsClass::V4, 6.0}, 0.02},
  };
  for (const auto& want : cases) {
    CAPTURE(class_name(want.spec.cls));
    CAPTURE(want.spec.tau);
    auto phi = make_observable(t, want.spec, 2026);
    auto prof = variation_v(t, phi, 8);
    for (int n = 0; n < 8; ++n)
      CHECK(prof.v[n] == doctest::Approx(class_template(want.spec, n)).epsilon(1e-12));
    CHECK(prof.v[8] == 0.0);
    auto cls = classify_profile(prof.v);
    CHECK(cls.cls == want.spec.cls);
    CHECK(cls.tau == doctest::Approx(want.spec.tau).epsilon(want.tol));
    CHECK_FALSE(cls.ambiguous);
    CHECK_FALSE(cls.locally_constant);
    // same profile under a different seed, different values
    auto phi2 = make_observable(t, want.spec, 77);
    auto prof2 = variation_v(t, phi2, 8);
    for (int n = 0; n <= 8; ++n) CHECK(prof2.v[n] == doctest::Approx(prof.v[n]).epsilon(1e-12));
  }
}

TEST_CASE("classification of synthetic profiles") {
  {
    std::vector<double> v;
    for (int n = 0; n <= 12; ++n) v.push_back(std::pow(0.5, n));
    auto r = classify_profile(v);
    CHECK(r.cls == ObsClass::V1);
    CHECK(r.tau == doctest::Approx(0.5).epsilon(1e-6));
  }
  {
    std::vector<double> v{1.0};
    for (int n = 1; n <= 12; ++n) v.push_back(std::pow(n, -3.0));
    auto r = classify_profile(v);
    CHECK(r.cls == ObsClass::V4);
    CHECK(r.tau == doctest::Approx(3.0).epsilon(0.05 / 3));
  }
  {
    std::vector<double> v;
    for (int n = 0; n <= 12; ++n) v.push_back(std::exp(-std::sqrt(n)));
    auto r = classify_profile(v);
    CHECK(r.cls == ObsClass::V2);
    CHECK(r.tau == doctest::Approx(0.5).epsilon(0.05 / 0.5));
  }
  {
    std::vector<double> zeros(10, 0.0);
    auto r = classify_profile(zeros);
    CHECK(r.locally_constant);
  }
  CHECK_THROWS_AS(classify_profile(std::vector<double>{1, 0.5, 0.25}), config_error);
}

TEST_CASE("a geometric profile is dominated by looser templates but classified tight") {
  std::vector<double> v;
  for (int n = 0; n <= 10; ++n) v.push_back(std::pow(0.5, n));
  CHECK(class_constant(v, {ObsClass::V1, 0.5}) == doctest::Approx(1.0));
  CHECK(class_constant(v, {ObsClass::V2, 0.5}) < 1e6);
  for (double tau : {1.5, 3.0, 6.0}) CHECK(std::isfinite(class_constant(v, {ObsClass::V4, tau})));
  CHECK(classify_profile(v).cls == ObsClass::V1);
}

TEST_CASE("star normalization: sandwich, unit integral, regularity bound") {
  auto t = build_tower(oracle_o1(), 3, 8, 0.0);
  auto inv = invariant_density(t, build_transfer(t));
  Rng rng(31);
  std::vector<double> phi(t.n_cells());
  for (auto& x : phi) x = 2 * rng.uniform() - 1;
  auto star = normalize_star(t, inv, phi);
  CHECK(star.integral == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(star.min_value > 1.0 / 3);
  CHECK(star.max_value < 3.0);

  std::vector<double> constant(t.n_cells(), 2.5);
  auto cstar = normalize_star(t, inv, constant);
  for (double x : cstar.values) CHECK(x == doctest::Approx(1.0).epsilon(1e-13));

  CHECK_THROWS_AS(normalize_star(t, inv, std::vector<double>(t.n_cells(), 0.0)), config_error);

  // product regularity: v_n(phi* rho_bar) <= 3 C0 (e^{C beta^n} - 1) + C0 v_n(phi*)
  std::vector<double> psi(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) psi[c] = star.values[c] * inv.rho[c] * t.total_mass;
  auto vpsi = variation_v(t, psi, 3).v;
  auto vstar = variation_v(t, star.values, 3).v;
  for (int n = 1; n <= 3; ++n) {
    double bound = 3 * inv.c0 * std::expm1(inv.log_regularity * std::pow(t.base.beta, n)) +
                   inv.c0 * vstar[n];
    CHECK(vpsi[n] <= bound + 1e-12);
  }
}

TEST_CASE("ratio regularity membership") {
  auto t = build_tower(oracle_o1(), 3, 8, 0.0);
  auto inv = invariant_density(t, build_transfer(t));

  std::vector<double> constant(t.n_cells(), 4.0);
  std::vector<double> vzero(4, 0.0);
  auto triv = iplus_membership(t, constant, vzero, inv.log_regularity);
  CHECK(triv.c_variation == 0.0);
  CHECK(triv.c_geometric == 0.0);
  CHECK(triv.passed);

  auto phi = make_observable(t, {ObsClass::V1, 0.5}, 9);
  auto vphi = variation_v(t, phi, 3).v;
  auto star = normalize_star(t, inv, phi);
  std::vector<double> psi(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) psi[c] = star.values[c] * inv.rho[c] * t.total_mass;
  auto clean = iplus_membership(t, psi, vphi, inv.log_regularity);
  CHECK(clean.min_value > 0);
  CHECK(std::isfinite(clean.c_variation));
  CHECK(std::isfinite(clean.c_geometric));
  CHECK(clean.worst_excess <= 1e-12);
  CHECK(clean.k2_prime >= 0);
  CHECK(clean.passed);

  // planted ratio fault inside one eta element blows past the clean caps
  auto faulty = psi;
  faulty[1] *= 101.0;
  auto rep = iplus_membership(t, faulty, vphi, inv.log_regularity,
                              1.5 * std::max(clean.c_variation, 1.0),
                              1.5 * std::max(clean.c_geometric, 1.0));
  CHECK_FALSE(rep.passed);

  CHECK_THROWS_AS(iplus_membership(t, std::vector<double>(t.n_cells(), 0.0), vphi, 1.0),
                  config_error);
}

TEST_CASE("oscillation modulus estimates") {
  Rng rng(4);
  std::vector<double> grid = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};

  auto flat = modulus_R([](double) { return 7.0; }, 0, 1, grid, 2000, rng);
  for (const auto& p : flat) CHECK(p.value == 0.0);

  auto ident = modulus_R([](double x) { return x; }, 0, 1, grid, 4000, rng);
  for (const auto& p : ident) CHECK(p.value == doctest::Approx(p.eps).epsilon(0.05));

  ClassSpec r4{ObsClass::R4, 2.0};
  auto bump = [&](double x) { return radial_template(r4, std::abs(x - 1.0)); };
  auto est = modulus_R(bump, 0, 1, grid, 4000, rng, {1.0});
  for (const auto& p : est) {
    const double truth = radial_template(r4, p.eps);
    CHECK(p.value > truth / 2);
    CHECK(p.value < 2 * truth);
  }
  // isotonic in eps even though the grid is descending
  for (size_t i = 1; i < est.size(); ++i) CHECK(est[i].value <= est[i - 1].value);
}
