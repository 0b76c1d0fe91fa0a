#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wgm/config.hpp"
#include "wgm/rng.hpp"

// Finite-alphabet induced Markov maps with a weak Gibbs reference structure.
//
// A model is the full shift data of an induced map F = f^R on a base partition
// {omega_0, ..., omega_{A-1}}: each branch F|omega_i maps onto the union of the
// elements listed in images[i]. The reference measure m assigns element_mass[i]
// to omega_i and splits each element across its refinement cylinders with the
// edge weights: m([i, j]) = edge_weight(i, j) * m(omega_i). The branch Jacobian
// is then constant on each depth-2 cylinder,
//     J_F|[i,j] = m(omega_j) / m([i,j]),
// which makes the nonsingularity identity m(F(A)) = int_A J_F dm exact by
// construction. Proportional weights (edge_weight(i,j) ~ m(omega_j)) collapse
// J_F to a constant per element.
namespace wgm {

using Word = std::vector<std::int32_t>;  // admissible itinerary fragment

struct GibbsReport {
  double tight_constant = 0;   // smallest C with log(J(x)/J(y)) <= C beta^{s(Fx,Fy)}
  int depth = 0;               // refinement depth the enumeration ran at
  long long pairs_checked = 0;
  // pairs whose log-ratio exceeds declared_constant * beta^s
  struct Violation {
    Word a, b;
    double log_ratio = 0, allowed = 0;
  };
  std::vector<Violation> violations;
  bool passed = true;
};

struct AperiodicityReport {
  bool aperiodic = false;
  int k0 = -1;     // first power with all-positive transition matrix
  int horizon = 0;
};

struct CoprimeBlockReport {
  bool found = false;
  std::vector<std::int32_t> symbols;  // the block, lexicographically first
};

struct SymbolicModel {
  std::int32_t n_symbols = 0;
  std::vector<std::vector<std::int32_t>> images;  // sorted, non-empty
  std::vector<std::int32_t> return_time;          // R_i >= 1
  std::vector<double> element_mass;               // m(omega_i) > 0
  // edge_weight[i][k] pairs with images[i][k]; each row sums to 1
  std::vector<std::vector<double>> edge_weight;
  double beta = 0.5;            // symbolic contraction rate in (0,1)
  double gibbs_constant = 1.0;  // declared C_F for the W4 bound
  double delta0 = 0.0;          // declared long-branch lower bound (W5)
  // planted-irregularity hook: J_F forced to `value` on the cylinder `word`
  // (longest matching prefix wins); used to exercise check_gibbs failure paths
  std::map<Word, double> jacobian_override;

  std::string name = "symbolic";

  // throws hypothesis_error on structural defects (W1/W5/mass/weight rows)
  void validate() const;

  double image_mass(std::int32_t i) const;                // m(F(omega_i))
  double min_image_mass() const;                          // attained W5 bound
  bool edge(std::int32_t i, std::int32_t j) const;        // j in images[i]?
  double edge_weight_to(std::int32_t i, std::int32_t j) const;
  double kac_mean() const;                                // sum_i m_i R_i

  // J_F on the cylinder of `w` (|w| >= 2), override-aware
  double branch_jacobian(const Word& w) const;
  // m of the cylinder of `w` (|w| >= 1)
  double word_mass(const Word& w) const;

  std::vector<Word> enumerate_words(int depth) const;

  // proportional-weight constructor helper used by the oracle catalog
  static std::vector<std::vector<double>> proportional_weights(
      const std::vector<std::vector<std::int32_t>>& images,
      const std::vector<double>& element_mass);

  static SymbolicModel from_config(const Config& cfg);
};

// separation time of two itineraries: first index with differing symbols;
// if one word is a prefix of the other the words are indistinguishable at
// this resolution and the common length is returned (a lower bound)
int separation_time(const Word& a, const Word& b);

// W4: exhaustive cylinder-pair enumeration at `depth` (>= 2). Reports the
// tightest implied constant and all declared-bound violations.
GibbsReport check_gibbs(const SymbolicModel& m, int depth);

// W3 at word resolution: worst relative error of
// mass(w) = sum_j mass(shift(w) ++ j) / J(w ++ j) over depth-words.
// Zero (to rounding) for consistent Jacobians; planted overrides break it.
double check_nonsingularity(const SymbolicModel& m, int depth);

// aperiodicity of the 0/1 transition matrix: first k0 with A^n > 0 for every
// n in [k0, horizon]
AperiodicityReport check_aperiodicity(const SymbolicModel& m, int horizon = 64);

// smallest (block size, then lexicographic) subset {omega_i} with
// gcd of return times 1 and every image covering the whole block
CoprimeBlockReport check_coprime_block(const SymbolicModel& m);

// lazily extended symbolic point: a word plus the model's Markov kernel
struct SymbolicPoint {
  Word word;
  // extend to length `len` by sampling edge weights
  void extend(const SymbolicModel& m, Rng& rng, int len);
};

}  // namespace wgm
