#pragma once

#include <cstdint>
#include <vector>

#include "wgm/observables.hpp"
#include "wgm/rng.hpp"
#include "wgm/stats.hpp"
#include "wgm/tower.hpp"

// Product-system coupling of two copies of one tower. Two initial densities
// are pushed forward together; an alternating waiting scheme produces joint
// base returns, and a density-splitting recursion removes matched mass at
// each joint return. Everything on finite towers is computed exactly through
// the cell algebra; Monte Carlo enters only where the contracts ask for
// (sampled tail estimates and conditional floors).
namespace wgm {

// Smallest lag n0 (searched from 1) such that for every branch image and
// every n in [n0, horizon], the set of image points whose orbit is on the
// base at time n has mass at least gamma0 > 0. Computed exactly by the
// renewal recursion over symbols. Preconditions: aperiodic transition
// matrix and a coprime block; failure of either, or no admissible n0 by
// the horizon, throws hypothesis_error.
struct LagConstants {
  int n0 = 0;
  double gamma0 = 0;
};
LagConstants choose_n0(const SymbolicModel& base, int horizon);

// Two probability densities on one full (untruncated) tower, with the lag
// constants verified at construction. phi1, phi2 are cellwise densities with
// respect to the reference measure, integrating to 1; both must pass the
// ratio-regularity membership check.
struct ProductModel {
  const TowerModel* tower = nullptr;
  Csr chain;     // forward cell process, rows are sources
  Csr transfer;  // density pushforward, rows are targets
  std::vector<double> phi1, phi2;
  int n0 = 0;
  double gamma0 = 0;
  IplusReport reg1, reg2;
};
ProductModel make_product_model(const TowerModel& t, std::vector<double> phi1,
                                std::vector<double> phi2, int horizon = 64);

// Sampled pair trajectory at cell resolution; a[t], b[t] are the two
// coordinates' cells at time t.
struct PairOrbit {
  std::vector<std::int32_t> a, b;
};
void extend_pair_orbit(const TowerModel& t, const Csr& chain, PairOrbit& orbit, int len,
                       Rng& rng);

// Waiting-scheme stopping times along an orbit: tau[0] = 0 and
// tau[k] = n0 + tau[k-1] + (steps from time n0 + tau[k-1] until the active
// coordinate is on the base), the active coordinate alternating 1,2,1,2,...
// Stops early (complete < k_max) if the orbit is too short to decide.
struct StoppingRecord {
  std::vector<std::int64_t> tau;  // tau[0..complete]
  int complete = 0;               // largest k with tau[k] decided
};
StoppingRecord stopping_times(const TowerModel& t, const PairOrbit& orbit, int n0, int k_max);

// First stopping time tau_i with i >= 2 at which both coordinates sit on the
// base. Censored samples report the last decided stopping time as `s` and
// are retained by the tail estimator as right-censored observations.
struct ReturnPairSample {
  std::int64_t s = 0;
  int tau_index = 0;
  bool censored = false;
};
ReturnPairSample simultaneous_return(const TowerModel& t, const PairOrbit& orbit, int n0,
                                     int i_cap);
// Sampling wrapper: draws start cells from the two per-cell start laws and
// extends the orbit lazily until the joint return (or i_cap).
ReturnPairSample sample_simultaneous_return(const TowerModel& t, const Csr& chain,
                                            const std::vector<double>& start_law1,
                                            const std::vector<double>& start_law2, int n0,
                                            int i_cap, Rng& rng);

// Exact law of the joint return time S for the pair process with the waiting
// scheme attached, from a joint initial measure over cell pairs (index
// c1 * n_cells + c2). survival[n] = measure{S > n} / initial total;
// landing[c1 * n_cells + c2] is the deposited measure at the joint return,
// drained until the transient residual falls below droplet precision.
struct JointReturnLaw {
  std::vector<double> survival;  // n = 0..n_max
  std::vector<double> landing;   // per landing cell pair, sums to absorbed
  double absorbed = 0;
  double residual = 0;
};
JointReturnLaw exact_joint_return_law(const TowerModel& t, const Csr& chain, int n0,
                                      const std::vector<double>& joint_init, int n_max);
// Product-measure convenience: initial = (w1 x w2), normalized internally.
JointReturnLaw exact_joint_return_law(const TowerModel& t, const Csr& chain, int n0,
                                      const std::vector<double>& w1,
                                      const std::vector<double>& w2, int n_max);

// Survival model for S used by the matching bound. `exact` carries the two
// curves (initial-law route and normalized product-reference route); the
// analytic kinds evaluate min(1, n^-exponent) and exp(-rate n). Evaluation
// at real x uses the integer floor (S is integer-valued).
struct TailModel {
  enum class Kind { exact, poly, exponential } kind = Kind::exact;
  std::vector<double> survival_p;   // initial-law survival
  std::vector<double> survival_mm;  // product-reference survival
  double exponent = 0;              // poly: survival ~ n^-exponent
  double rate = 0;                  // exponential: survival ~ exp(-rate n)
  double survival(double x, bool product_reference) const;
};
TailModel poly_tail(double exponent);
TailModel exponential_tail(double rate);

// Monte Carlo survival estimate for S with Wilson bands, censored samples
// retained as right-censored (reduced-sample survival: a point n uses only
// samples still classifiable at n). More than 1% censoring widens the bands
// (doubled half-width) and raises `widened`. Fits both a power law and an
// exponential to the curve; `model` carries the one matching `expect`.
struct STailEstimate {
  std::vector<std::int64_t> grid;
  std::vector<double> survival, lo, hi;
  std::vector<std::int64_t> at_risk, hits;
  double censored_fraction = 0;
  bool widened = false;
  PowerTailFit poly_fit;      // on log n
  double exp_rate = 0;        // from log-linear fit
  double exp_rate_rms = 0;
  TailModel model;
};
STailEstimate estimate_s_tail(const ProductModel& p, std::int64_t samples,
                              const std::vector<std::int64_t>& grid, int i_cap,
                              std::uint64_t seed, TailModel::Kind expect);

// Splitting fractions eps'_i in (0, 1/2], built from the target products
// P_i = min(1 / v_i, beta^{-i/2}) (monotone enforced; decaying positive
// floor min(1/2, i^-2)), then verified: the variation-growth product
// v_i * prod(1 + eps'_j) and the geometric backlog sum
// sum_j prod_{k=j..i}(1 + eps'_k) beta^{i-j+1} must both stay bounded; d3 is
// the realized bound. The decay of prod(1 - eps_j / d_bar) is fitted on the
// two construction arms (profile-driven and geometric cap).
struct ProductDecayFit {
  double poly_slope = 0;  // log prod vs log i on the profile arm
  double poly_rms = 0;
  double theta = 0;  // per-step ratio on the geometric arm
  double c_tilde = 0;
  double geo_rms = 0;
  int arm_split = 0;  // first index on the geometric arm
};
struct EpsilonSequence {
  std::vector<double> eps_prime;  // eps_prime[i-1] holds step i
  std::vector<double> eps;        // delta_bar * eps_prime
  double delta_bar = 1;
  double d3 = 0;
  double d4 = 1;  // contraction slack; overwritten by the recursion when run
  double zeta = 0;
  ProductDecayFit fit;
};
EpsilonSequence epsilon_sequence(const std::vector<double>& v_profile, double beta,
                                 double delta_bar, int i_max, double d_bar = 2.0);

// Density-splitting recursion, run exactly on the finite product model. The
// iterates are stored in transported form: after i joint returns the
// remaining density decomposes over branch classes ("strands"), each living
// on one base rectangle with a per-cell-pair slope profile; branch classes
// whose profile is constant collapse onto their rectangle. At each step the
// matched amount on a branch is eps_i times the branch minimum of the
// transported slope, so the iterates decrease pointwise and stay positive
// for eps_i < 1; d4 is the smallest constant with
// step decrement >= (eps_i / d4) * previous iterate everywhere.
struct DensityRecursion {
  std::vector<double> mass;  // remaining total, mass[0] = initial
  std::vector<double> leak;  // matched mass per step, leak[i-1] for step i
  double d4 = 1;
  bool monotone = true;
  int steps = 0;
  std::vector<int> strand_count;  // non-constant branch classes per step
  double mass_error = 0;          // worst telescoping defect observed
};
DensityRecursion density_recursion(const ProductModel& p, const EpsilonSequence& eps,
                                   int i_max);

// Matching prefactor d5 = 2 d2 (1 + delta_bar d4 / (2 d4 - delta_bar)).
double matching_prefactor(double d2, double delta_bar, double d4);

// Upper bound on the distribution distance after n steps:
//   2 P{S > n} + d5 sum_{i=1..n} prod_{j<=i}(1 - eps_j / d4) (i+1) mm{S > n/(i+1)},
// with mm the product-reference survival. n = 0 gives 2. Requires the
// epsilon sequence to be constructed at least to length n.
double matching_bound(std::int64_t n, const TailModel& tail, const EpsilonSequence& eps,
                      double d5);

// Exact distribution distance sum_cells |L^n phi1 - L^n phi2| * cell mass
// for n = 0..n_max, by iterating the cell transfer operator.
std::vector<double> exact_tv_curve(const ProductModel& p, int n_max);

// Closed-form decay envelopes. Polynomial return tail with exponent a:
// n^{1-a} log n at tau = (a+1)/zeta, otherwise max(n^{1-a}, n^{2-zeta tau});
// faster-than-polynomial variation classes inherit the tail-driven n^{1-a}.
// Exponential return tail: exp(-rate' n) for geometric variation,
// exp(-n^{tau'}) / exp(-(log n)^{tau'}) with representative tau' = 0.95 tau
// for the two stretched classes, n^{1-zeta tau} for polynomial variation.
// Constants are representative (shape-only comparisons downstream).
struct RateEnvelope {
  enum class Kind { poly, poly_log, exp_linear, exp_stretched, exp_log_power } kind;
  double exponent = 0;   // poly / poly_log / exp-V4: power of n
  double rate = 1;       // exp_linear
  double tau_prime = 0;  // exp_stretched, exp_log_power
  double eval(double n) const;
  const char* label() const;
};
RateEnvelope rate_envelope(TailModel::Kind tail, double a, ObsClass cls, double tau,
                           double zeta);

// Conditional floor for ending at the k-th stopping time: over scheme cells
// (joint itinerary classes at stage k) holding at least min_cell_samples
// Monte Carlo samples, the empirical P(S = tau_k | cell, S > tau_{k-1})
// must stay above a uniform floor; the minimum per stage and overall is
// reported. The joint return is only a candidate from the second stopping
// time on, so the stages measured are k = 2..k_max. `stabilized` flags the
// last two stage minima agreeing within 20% (heuristic, reported not
// asserted). Stages without a qualifying cell report -1.
struct ConditionalFloorReport {
  double eps0_min = 1;
  std::vector<double> per_k_min;          // index j holds stage k = j + 2
  std::vector<std::int64_t> cells_tested;  // qualifying cells per stage
  bool stabilized = false;
  std::int64_t samples = 0;
};
ConditionalFloorReport conditional_return_floor(const ProductModel& p, int k_max,
                                                std::int64_t samples, std::uint64_t seed,
                                                std::int64_t min_cell_samples = 10000);

// Gap-tail domination: empirical P(tau_{k+1} - tau_k > n + n0 | cell) must
// be dominated by d1 * (hat-return tail at n); d1 is the realized maximum
// ratio over qualifying cells, stages k <= k_max and n with positive tail.
struct GapTailReport {
  double d1 = 0;
  std::vector<double> hat_tail;  // single-tower hat-return tail
  std::int64_t cells_tested = 0;
  std::int64_t samples = 0;
};
GapTailReport gap_tail_domination(const ProductModel& p, int k_max, std::int64_t samples,
                                  std::uint64_t seed, std::int64_t min_cell_samples = 10000);

// Block-gap domination: the law of S_{k+1} - S_k (scheme restarted from the
// exact landing distribution) is dominated by d2 times the product-reference
// survival of S. Exact on finite models via repeated landing restarts.
struct BlockGapReport {
  double d2 = 0;
  std::vector<std::vector<double>> gap_survival;  // per block k = 0..k_max-1
  std::vector<double> mm_survival;
};
BlockGapReport block_gap_domination(const ProductModel& p, int k_max, int n_max);

// Full pipeline on one product model: exact S laws, tail fit, epsilon
// sequence from the product variation profile, splitting recursion (auto
// delta_bar: largest 2^-k that completes without a recursion fault),
// conditional floor and gap/block dominations, matching-bound curve against
// the exact distance curve.
struct CouplingReport {
  int n0 = 0;
  double gamma0 = 0;
  double eps0_min = 0;
  double d1 = 0, d2 = 0, d3 = 0, d4 = 0, d5 = 0;
  double zeta = 0;
  double delta_bar = 1;
  STailEstimate s_tail;
  EpsilonSequence eps;
  DensityRecursion recursion;
  ConditionalFloorReport floor;
  GapTailReport gap;
  BlockGapReport blocks;
  std::vector<double> bound_curve;  // n = 0..n_max
  std::vector<double> tv_curve;
  bool tv_dominated = false;
};
struct CouplingOptions {
  int horizon = 64;
  int n_max = 200;        // bound / distance curve length
  int i_max = 50;         // recursion steps
  int k_max_floor = 6;    // stages for the conditional floor
  int k_max_blocks = 4;   // blocks for the gap domination
  std::int64_t samples = 200000;
  int i_cap = 64;
  std::uint64_t seed = 1;
  double delta_bar = 0;   // 0 = auto
};
CouplingReport run_coupling(const ProductModel& p, const CouplingOptions& opt);

// Upper bound for the variation profile of the product density
// phi1(x) phi2(y): sup|phi1| v_n(phi2) + sup|phi2| v_n(phi1), extended by
// zero beyond the cell depth (cellwise observables separate there).
std::vector<double> product_variation(const TowerModel& t, const std::vector<double>& phi1,
                                      const std::vector<double>& phi2, int n_max);

}  // namespace wgm
