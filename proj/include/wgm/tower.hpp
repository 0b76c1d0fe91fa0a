#pragma once

#include <cstdint>
#include <vector>

#include "wgm/rng.hpp"
#include "wgm/symbolic.hpp"

namespace wgm {

// Minimal sparse matrix. Rows are whatever the builder says they are; both
// orientations of apply are used (transfer rows are targets, chain rows are
// sources).
struct Csr {
  int rows = 0;
  int cols = 0;
  std::vector<std::int64_t> row_ptr;  // rows + 1 entries
  std::vector<std::int32_t> col;
  std::vector<double> val;

  void apply(const std::vector<double>& x, std::vector<double>& out) const;
  void apply_transpose(const std::vector<double>& x, std::vector<double>& out) const;
};

// Cell of the (possibly truncated) tower: a level and a base cylinder given
// by an admissible word of the configured depth whose leading symbol has
// return time exceeding the level.
struct TowerCell {
  std::int32_t level;
  std::int32_t word_id;
};

// Discretized tower over a symbolic base. Reference measure: each cell
// carries the mass of its base cylinder, repeated per level; the total over
// all levels of a full word set is the mean return time. Levels above
// height_cap are dropped and their mass is tracked in truncated_mass.
struct TowerModel {
  SymbolicModel base;
  int depth = 2;
  int height_cap = 0;
  std::vector<Word> words;        // admissible depth-words, lexicographic
  std::vector<double> word_mass;  // aligned with words
  std::vector<TowerCell> cells;   // level-major, word-minor
  std::vector<double> level_mass;
  double truncated_mass = 0;
  double total_mass = 0;  // sum of retained level masses
  int max_return = 0;

  int n_cells() const { return static_cast<int>(cells.size()); }
  int n_words() const { return static_cast<int>(words.size()); }
  std::int32_t cell_index(std::int32_t level, std::int32_t word_id) const;
  std::int32_t level_of(std::int32_t c) const { return cells[c].level; }
  const Word& word_of(std::int32_t c) const { return words[cells[c].word_id]; }
  double cell_mass(std::int32_t c) const { return word_mass[cells[c].word_id]; }
  std::int32_t cell_return(std::int32_t c) const { return base.return_time[word_of(c)[0]]; }
  bool is_top(std::int32_t c) const { return cells[c].level == cell_return(c) - 1; }
  // steps to completion of the current excursion: 0 at the base, otherwise
  // the leading return time minus the level
  std::int32_t hat_return(std::int32_t c) const {
    return cells[c].level == 0 ? 0 : cell_return(c) - cells[c].level;
  }

 private:
  std::vector<std::int32_t> lookup_;  // (level * n_words + word_id) -> cell or -1
  friend TowerModel build_tower(const SymbolicModel&, int, int, double);
};

// Builds the cell set. Throws numerical_error when the mass above the cap
// exceeds tail_tol. A cap of at least max_return - 1 keeps every level and
// makes all downstream quantities exact.
TowerModel build_tower(const SymbolicModel& base, int depth, int height_cap, double tail_tol);

// Transfer operator for densities with respect to the reference measure.
// Rows are target cells: climbing copies the density, dropping from a top
// divides by the branch Jacobian of the extended word. Override-aware up to
// override keys of length depth + 1.
Csr build_transfer(const TowerModel& t);

// Forward cell process as a probability kernel, rows are source cells.
// Climbs are deterministic; drops follow the base edge weights of the last
// symbol. No Jacobians enter: this is the independent route.
Csr build_forward_chain(const TowerModel& t);

struct InvariantDensity {
  std::vector<double> rho;  // per cell; sum rho * cell_mass = 1
  double residual = 0;      // mass-weighted L1 distance of L rho from rho
  int iterations = 0;
  double c0 = 0;               // bound with 1/c0 <= rho_bar <= c0, rho_bar wrt normalized mass
  double log_regularity = 0;   // fitted constant for |log rho(a)-log rho(b)| <= C beta^s(a,b)
};

InvariantDensity invariant_density(const TowerModel& t, const Csr& transfer,
                                   int max_iter = 50000, double tol = 1e-14);

struct DenseSpectrum {
  double leading_eigenvalue = 0;
  std::vector<double> density;  // normalized like InvariantDensity::rho
};

// Dense eigensolve of the same operator; used as an independent check on the
// power iteration.
DenseSpectrum invariant_density_dense(const TowerModel& t, const Csr& transfer);

// Stationary law of the forward chain (cell probabilities), by power
// iteration on the transpose.
std::vector<double> stationary_forward(const TowerModel& t, const Csr& chain,
                                       int max_iter = 50000, double tol = 1e-14);

// Exact centered correlation sequence for cellwise observables:
// out[n] = int phi . (psi o T^n) dnu - int phi dnu . int psi dnu,
// nu = rho dm, by pushing phi*rho through the transfer operator.
std::vector<double> exact_correlations(const TowerModel& t, const Csr& transfer,
                                       const std::vector<double>& rho,
                                       const std::vector<double>& phi,
                                       const std::vector<double>& psi, int n_max);

// Same quantity through the forward chain and its stationary law; shares no
// code or measure data with the transfer route.
std::vector<double> exact_correlations_chain(const TowerModel& t, const Csr& chain,
                                             const std::vector<double>& pi,
                                             const std::vector<double>& phi,
                                             const std::vector<double>& psi, int n_max);

// tail[n] = probability (under normalized reference mass) that the
// completion count exceeds n; truncation shaves at most
// truncated_mass/total_mass off each entry.
std::vector<double> hat_return_tail(const TowerModel& t, int n_max);

// Samples a categorical law given as nonnegative weights summing to ~1.
std::int32_t sample_categorical(const std::vector<double>& p, Rng& rng);

// One step of the forward chain. Throws numerical_error if the orbit climbs
// past the cap of a truncated tower.
std::int32_t tower_step(const TowerModel& t, const Csr& chain, std::int32_t cell, Rng& rng);

}  // namespace wgm
