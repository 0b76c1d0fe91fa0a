#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "wgm/errors.hpp"
#include "wgm/models.hpp"
#include "wgm/symbolic.hpp"

using namespace wgm;

TEST_CASE("o1 frozen quantities") {
  auto m = oracle_o1();
  CHECK(m.kac_mean() == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(m.image_mass(0) == doctest::Approx(0.75));
  CHECK(m.image_mass(1) == doctest::Approx(1.0));
  CHECK(m.image_mass(2) == doctest::Approx(0.75));
  CHECK(m.min_image_mass() == doctest::Approx(0.75));
  // proportional weights make J constant per element: image_mass/mass
  CHECK(m.branch_jacobian({0, 0}) == doctest::Approx(1.5));
  CHECK(m.branch_jacobian({0, 1}) == doctest::Approx(1.5));
  CHECK(m.branch_jacobian({1, 2}) == doctest::Approx(4.0));
  CHECK(m.branch_jacobian({2, 1}) == doctest::Approx(3.0));
  CHECK(m.word_mass({0, 1, 2}) == doctest::Approx(1.0 / 24).epsilon(1e-15));
}

TEST_CASE("o2 frozen quantities") {
  auto m = oracle_o2();
  CHECK(m.kac_mean() == doctest::Approx(2.9).epsilon(1e-15));
  CHECK(m.min_image_mass() == doctest::Approx(0.6));
  CHECK(m.branch_jacobian({0, 2}) == doctest::Approx(2.25));
  CHECK(m.branch_jacobian({1, 3}) == doctest::Approx(10.0 / 3));
  CHECK(m.branch_jacobian({3, 0}) == doctest::Approx(7.0));
  CHECK(m.edge_weight_to(2, 1) == doctest::Approx(0.5));
  CHECK(m.edge_weight_to(2, 3) == doctest::Approx(1.0 / 6));
}

TEST_CASE("word enumeration is lexicographic and carries full mass") {
  auto m = oracle_o1();
  auto w2 = m.enumerate_words(2);
  REQUIRE(w2.size() == 7);
  CHECK(w2.front() == Word{0, 0});
  CHECK(w2.back() == Word{2, 1});
  for (size_t k = 1; k < w2.size(); ++k) CHECK(w2[k - 1] < w2[k]);
  for (int depth : {1, 2, 3, 4, 5}) {
    double total = 0;
    for (const auto& w : m.enumerate_words(depth)) total += m.word_mass(w);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("separation time is an ultrametric depth") {
  auto m = oracle_o2();
  Rng rng(17);
  std::vector<Word> pts;
  for (int k = 0; k < 24; ++k) {
    SymbolicPoint p{{static_cast<std::int32_t>(rng.uniform_below(4))}};
    p.extend(m, rng, 12);
    pts.push_back(p.word);
  }
  for (const auto& a : pts)
    for (const auto& b : pts)
      for (const auto& c : pts) {
        int sab = separation_time(a, b);
        int sbc = separation_time(b, c);
        int sac = separation_time(a, c);
        CHECK(sac >= std::min(sab, sbc));
      }
  CHECK(separation_time(pts[0], pts[0]) == 12);
  CHECK(separation_time(pts[0], pts[1]) == separation_time(pts[1], pts[0]));
}

TEST_CASE("gibbs check passes with zero distortion on proportional weights") {
  for (auto m : {oracle_o1(), oracle_o2()}) {
    double prev = -1;
    for (int depth : {2, 3, 4, 5}) {
      auto rep = check_gibbs(m, depth);
      CHECK(rep.passed);
      CHECK(rep.tight_constant <= 1e-14);
      CHECK(rep.pairs_checked > 0);
      CHECK(rep.tight_constant >= prev);  // never shrinks with depth
      prev = rep.tight_constant;
    }
  }
}

TEST_CASE("gibbs check flags a planted jacobian fault at the right depth") {
  auto m = oracle_o1();
  // distortion on the sub-cylinder [0,1,0] only; its sibling [0,1,1] keeps
  // the clean value 1.5, shifted words separate at index 1, so the bound is
  // gibbs_constant * beta = 0.5 while the planted ratio is log 1.7 ~ 0.53
  m.jacobian_override[{0, 1, 0}] = 1.5 * 1.7;
  auto shallow = check_gibbs(m, 2);
  CHECK(shallow.passed);  // depth 2 cannot see a depth-3 fault
  auto deep = check_gibbs(m, 3);
  CHECK_FALSE(deep.passed);
  REQUIRE(!deep.violations.empty());
  CHECK(deep.violations[0].log_ratio > deep.violations[0].allowed);
  CHECK(deep.tight_constant >= shallow.tight_constant);
  CHECK(check_gibbs(m, 4).tight_constant >= deep.tight_constant);
}

TEST_CASE("jacobian override resolves by longest matching prefix") {
  auto m = oracle_o1();
  m.jacobian_override[{0, 1}] = 2.0;
  m.jacobian_override[{0, 1, 2}] = 5.0;
  CHECK(m.branch_jacobian({0, 1}) == doctest::Approx(2.0));
  CHECK(m.branch_jacobian({0, 1, 0}) == doctest::Approx(2.0));
  CHECK(m.branch_jacobian({0, 1, 2}) == doctest::Approx(5.0));
  CHECK(m.branch_jacobian({0, 1, 2, 1}) == doctest::Approx(5.0));
  CHECK(m.branch_jacobian({0, 0}) == doctest::Approx(1.5));  // untouched
}

namespace {
// reference path count: number of admissible words i -> j of exactly n steps
bool every_pair_connected_in(const SymbolicModel& m, int n) {
  const int A = m.n_symbols;
  std::vector<std::vector<long long>> cnt(A, std::vector<long long>(A, 0));
  for (int i = 0; i < A; ++i)
    for (auto j : m.images[i]) cnt[i][j] = 1;
  for (int step = 1; step < n; ++step) {
    std::vector<std::vector<long long>> nxt(A, std::vector<long long>(A, 0));
    for (int i = 0; i < A; ++i)
      for (int k = 0; k < A; ++k)
        if (cnt[i][k] > 0)
          for (auto j : m.images[k]) nxt[i][j] = std::min<long long>(nxt[i][j] + cnt[i][k], 1 << 20);
    cnt = std::move(nxt);
  }
  for (int i = 0; i < A; ++i)
    for (int j = 0; j < A; ++j)
      if (cnt[i][j] == 0) return false;
  return true;
}
}  // namespace

TEST_CASE("aperiodicity matches brute-force path enumeration") {
  for (auto m : {oracle_o1(), oracle_o2()}) {
    auto rep = check_aperiodicity(m, 16);
    REQUIRE(rep.aperiodic);
    for (int n = 1; n <= 16; ++n) CHECK(every_pair_connected_in(m, n) == (n >= rep.k0));
  }
  CHECK(check_aperiodicity(oracle_o1(), 16).k0 == 2);
}

TEST_CASE("aperiodicity rejects a period-2 cycle") {
  SymbolicModel m;
  m.name = "period2";
  m.n_symbols = 2;
  m.images = {{1}, {0}};
  m.return_time = {1, 1};
  m.element_mass = {0.5, 0.5};
  m.edge_weight = {{1.0}, {1.0}};
  m.beta = 0.5;
  m.validate();
  CHECK_FALSE(check_aperiodicity(m, 32).aperiodic);
}

TEST_CASE("coprime block search picks the smallest then lexicographic block") {
  auto b1 = check_coprime_block(oracle_o1());
  REQUIRE(b1.found);
  CHECK(b1.symbols == std::vector<std::int32_t>{0, 1});
  auto b2 = check_coprime_block(oracle_o2());
  REQUIRE(b2.found);
  CHECK(b2.symbols == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("coprime block absent when return times share a factor") {
  SymbolicModel m = oracle_o1();
  m.return_time = {2, 4, 6};
  m.validate();
  CHECK_FALSE(check_coprime_block(m).found);
}

TEST_CASE("config round trip") {
  const char* text =
      "name = tiny\n"
      "symbols = 2\n"
      "return_times = [1, 2]\n"
      "masses = [0.75, 0.25]\n"
      "images.0 = [0, 1]\n"
      "images.1 = [0, 1]\n"
      "beta = 0.4\n"
      "gibbs_constant = 0.0\n"
      "delta0 = 1.0\n";
  auto m = SymbolicModel::from_config(Config::parse_string(text, "inline"));
  CHECK(m.n_symbols == 2);
  CHECK(m.beta == doctest::Approx(0.4));
  // no weights given: proportional default
  CHECK(m.edge_weight_to(0, 0) == doctest::Approx(0.75));
  CHECK(m.edge_weight_to(1, 1) == doctest::Approx(0.25));
  CHECK(m.kac_mean() == doctest::Approx(1.25));

  const char* partial =
      "symbols = 2\n"
      "return_times = [1, 1]\n"
      "masses = [0.5, 0.5]\n"
      "images.0 = [0, 1]\n"
      "images.1 = [0, 1]\n"
      "weights.0 = [0.5, 0.5]\n";
  CHECK_THROWS_AS(SymbolicModel::from_config(Config::parse_string(partial, "inline")),
                  config_error);
}

TEST_CASE("validation rejects structural faults") {
  auto bad_mass = oracle_o1();
  bad_mass.element_mass[1] = 0.0;
  CHECK_THROWS_AS(bad_mass.validate(), hypothesis_error);

  auto bad_row = oracle_o1();
  bad_row.edge_weight[0][0] = 0.9;
  CHECK_THROWS_AS(bad_row.validate(), hypothesis_error);

  auto bad_return = oracle_o1();
  bad_return.return_time[2] = 0;
  CHECK_THROWS_AS(bad_return.validate(), hypothesis_error);

  auto bad_delta = oracle_o1();
  bad_delta.delta0 = 0.8;  // min image mass is 0.75
  CHECK_THROWS_AS(bad_delta.validate(), hypothesis_error);

  auto bad_image = oracle_o1();
  bad_image.images[2] = {1, 0};  // unsorted
  CHECK_THROWS_AS(bad_image.validate(), hypothesis_error);
}

TEST_CASE("model lookup by name") {
  CHECK(symbolic_model_by_name("oracle-o1").n_symbols == 3);
  CHECK(symbolic_model_by_name("oracle-o2").n_symbols == 4);
  CHECK_THROWS_AS(symbolic_model_by_name("no-such-model"), config_error);
  double a = 0;
  CHECK(parse_pm_const("pm-const-0.6", a));
  CHECK(a == doctest::Approx(0.6));
  CHECK_FALSE(parse_pm_const("oracle-o1", a));
  CHECK_THROWS_AS(parse_pm_const("pm-const-1.5", a), config_error);
  CHECK_THROWS_AS(parse_pm_const("pm-const-x", a), config_error);
}

TEST_CASE("point extension is deterministic and respects the image digraph") {
  auto m = oracle_o2();
  SymbolicPoint p{{2}}, q{{2}};
  Rng r1(99), r2(99);
  p.extend(m, r1, 64);
  q.extend(m, r2, 64);
  CHECK(p.word == q.word);
  for (size_t k = 0; k + 1 < p.word.size(); ++k) CHECK(m.edge(p.word[k], p.word[k + 1]));
  // symbol 2 never maps to 0
  for (size_t k = 0; k + 1 < p.word.size(); ++k)
    if (p.word[k] == 2) CHECK(p.word[k + 1] != 0);
}
