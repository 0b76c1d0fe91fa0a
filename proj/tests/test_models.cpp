#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "wgm/config.hpp"
#include "wgm/errors.hpp"
#include "wgm/models.hpp"
#include "wgm/report.hpp"
#include "wgm/symbolic.hpp"

using namespace wgm;

TEST_CASE("catalog entry o1 carries its closed-form constants") {
  const auto m = oracle_o1();
  CHECK(m.name == "oracle-o1");
  REQUIRE(m.n_symbols == 3);
  CHECK(m.return_time == std::vector<std::int32_t>{1, 2, 3});
  CHECK(m.element_mass == std::vector<double>{0.5, 0.25, 0.25});
  CHECK(m.images[1] == std::vector<std::int32_t>{0, 1, 2});
  CHECK(m.kac_mean() == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(m.delta0 == 0.75);
  CHECK(m.min_image_mass() == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.edge_weight[0][0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.edge_weight[1][0] == doctest::Approx(0.5).epsilon(1e-15));
  // proportional weights collapse the Jacobian to image_mass/mass per element
  CHECK(m.branch_jacobian({0, 0}) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(m.branch_jacobian({0, 1}) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(m.branch_jacobian({1, 2}) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("catalog entry o2 has spread return times and a proper subset image") {
  const auto m = oracle_o2();
  CHECK(m.name == "oracle-o2");
  REQUIRE(m.n_symbols == 4);
  CHECK(m.return_time == std::vector<std::int32_t>{1, 2, 5, 9});
  CHECK(m.element_mass == std::vector<double>{0.4, 0.3, 0.2, 0.1});
  CHECK(m.images[3] == std::vector<std::int32_t>{0, 1});
  CHECK(m.delta0 == 0.6);
  CHECK(m.min_image_mass() >= m.delta0);
  CHECK(check_aperiodicity(m, 16).k0 == 2);
  const auto block = check_coprime_block(m);
  REQUIRE(block.found);
  CHECK(block.symbols == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("both catalog models satisfy the declared regularity bounds") {
  for (const auto& m : {oracle_o1(), oracle_o2()}) {
    const auto gibbs = check_gibbs(m, 4);
    CHECK(gibbs.passed);
    CHECK(gibbs.tight_constant <= 1e-12);  // constant-per-element Jacobians
    CHECK(check_nonsingularity(m, 4) <= 1e-12);
  }
}

TEST_CASE("a planted Jacobian override trips the consistency detectors") {
  auto m = oracle_o1();
  m.jacobian_override[{0, 1}] = 2.0;  // true branchwise value is 1.5
  CHECK(check_nonsingularity(m, 3) > 1e-3);
  const auto gibbs = check_gibbs(m, 3);
  CHECK(gibbs.tight_constant > 0.1);
}

TEST_CASE("name resolution covers the catalog, files and failures") {
  CHECK(symbolic_model_by_name("oracle-o1").n_symbols == 3);
  CHECK(symbolic_model_by_name("oracle-o2").n_symbols == 4);
  CHECK_THROWS_AS(symbolic_model_by_name("oracle-o3"), config_error);

  const std::string path = "model_roundtrip.tmp";
  write_text_file(path,
                  "name = two-state\n"
                  "symbols = 2\n"
                  "return_times = [1, 2]\n"
                  "masses = [0.5, 0.5]\n"
                  "images.0 = [0, 1]\n"
                  "images.1 = [0, 1]\n");
  const auto m = symbolic_model_by_name(path);
  CHECK(m.name == "two-state");
  CHECK(m.n_symbols == 2);
  // omitted weights default to proportional
  CHECK(m.edge_weight[0][0] == doctest::Approx(0.5).epsilon(1e-15));
  std::remove(path.c_str());
}

TEST_CASE("config-built models reject partial weight rows") {
  const auto cfg = Config::parse_string(
      "symbols = 2\n"
      "return_times = [1, 2]\n"
      "masses = [0.5, 0.5]\n"
      "images.0 = [0, 1]\n"
      "images.1 = [0, 1]\n"
      "weights.0 = [0.5, 0.5]\n");
  CHECK_THROWS_AS(SymbolicModel::from_config(cfg), config_error);
}

TEST_CASE("interval model names parse the constant exponent") {
  double alpha = 0;
  CHECK(parse_pm_const("pm-const-0.5", alpha));
  CHECK(alpha == 0.5);
  CHECK(parse_pm_const("pm-const-0.60", alpha));
  CHECK(alpha == 0.60);
  CHECK_FALSE(parse_pm_const("oracle-o1", alpha));
  CHECK_FALSE(parse_pm_const("skew-default", alpha));
  CHECK_THROWS_AS(parse_pm_const("pm-const-x", alpha), config_error);
  CHECK_THROWS_AS(parse_pm_const("pm-const-1.5", alpha), config_error);
  CHECK_THROWS_AS(parse_pm_const("pm-const-0", alpha), config_error);
}
