#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "wgm/rng.hpp"
#include "wgm/tower.hpp"

namespace wgm {

// Regularity classes. R-classes are radial moduli on a metric base space,
// V-classes are symbolic variation-decay classes on a tower. Legal parameter
// ranges: tau in (0,1) for R1/R2/V1/V2, tau > 1 for R3/R4/V3/V4.
enum class ObsClass { R1, R2, R3, R4, V1, V2, V3, V4 };

struct ClassSpec {
  ObsClass cls;
  double tau;
};

const char* class_name(ObsClass c);
bool is_v_class(ObsClass c);
void check_class_range(const ClassSpec& spec);

// Variation-decay template a_k:
//   V1: tau^k   V2: exp(-k^tau)   V3: exp(-log(max(k,1))^tau)   V4: max(k,1)^-tau
double class_template(const ClassSpec& spec, int k);

// Radial modulus template g(d) matched to the V-templates under geometric
// cylinder shrinking:
//   R1: d^tau   R2: exp(-|log d|^tau)   R3: exp(-log(1+|log d|)^tau)
//   R4: (1+|log d|)^-tau
// All vanish as d -> 0 and equal 1 at d = 1.
double radial_template(const ClassSpec& spec, double dist);

struct VariationProfile {
  std::vector<double> v;  // v[n], n = 0..n_max
  bool exact = true;
  int depth = 0;
};

// v_n = sup |phi(x)-phi(y)| over pairs separating no earlier than n. Exact
// for cellwise observables: zero from the cell depth on, per-level prefix
// grouping below it, global oscillation at n = 0.
VariationProfile variation_v(const TowerModel& t, const std::vector<double>& values, int n_max);

struct ClassifyResult {
  ObsClass cls = ObsClass::V1;
  double tau = 0;
  double constant = 0;  // fitted prefactor
  double rms = 0;       // log-space residual of the winner
  double second_rms = 0;
  bool ambiguous = false;
  bool locally_constant = false;
};

// Least-squares template fits in linearized coordinates, inner coefficient
// pinned to 1 so geometric decay cannot masquerade as stretched-exponential.
// Needs at least 8 profile points; an all-zero profile returns the
// locally-constant sentinel; two classes within 5% relative residual are
// flagged ambiguous.
ClassifyResult classify_profile(const std::vector<double>& v);

// Smallest constant with v_n <= constant * a_n over the profile.
double class_constant(const std::vector<double>& v, const ClassSpec& spec);

// Fixture with exactly prescribed variation: phi = sum_k c_k sigma_k(x_k)
// with telescoped template coefficients and seeded +-1 symbol colorings in
// which every branch image sees both colors, so v_n = a_n for n < depth and
// v_n = 0 beyond. V-classes only; every image set must have >= 2 elements.
std::vector<double> make_observable(const TowerModel& t, const ClassSpec& spec,
                                    std::uint64_t seed);

struct StarObservable {
  std::vector<double> values;
  double integral = 0;  // against nu; 1 up to rounding
  double min_value = 0;
  double max_value = 0;
};

// phi* = (phi + 2 sup|phi| + 1) / integral of the same against nu.
// Integrates to 1 and lands in [1/3, 3] pointwise. Rejects phi == 0.
StarObservable normalize_star(const TowerModel& t, const InvariantDensity& inv,
                              const std::vector<double>& phi);

struct IplusReport {
  double min_value = 0;
  double c_variation = 0;   // C' on v_s(phi)
  double c_geometric = 0;   // C'' on beta^s, fitted first from v_s = 0 pairs
  double log_c_variation = 0;  // log-form coefficient on v_s given the density constant
  double k2_prime = 0;         // log_c_variation / c_density
  double worst_excess = 0;     // log-form slack on v_s = 0 pairs (<= 0 when clean)
  std::int64_t pairs = 0;
  bool passed = false;
};

// Ratio-regularity of a positive cell function psi within elements sharing
// level and leading symbol: |psi(x)/psi(y) - 1| <= C' v_s(phi) + C'' beta^s.
// Also fits the log-form coefficient against a given density constant. caps
// bound the fitted constants for pass/fail (defaults: positivity only).
IplusReport iplus_membership(const TowerModel& t, const std::vector<double>& psi,
                             const std::vector<double>& v_phi, double c_density,
                             double cap_variation = std::numeric_limits<double>::infinity(),
                             double cap_geometric = std::numeric_limits<double>::infinity());

struct ModulusPoint {
  double eps;
  double value;
};

// Monte Carlo lower estimate of the oscillation modulus of f on [lo, hi]
// over pairs at distance <= eps, isotonic-corrected to be non-decreasing in
// eps. hints concentrate sampling near suspected oscillation anchors with
// log-uniform offsets; without them the estimate can badly undershoot
// singular moduli.
std::vector<ModulusPoint> modulus_R(const std::function<double(double)>& f, double lo, double hi,
                                    const std::vector<double>& eps_grid, int samples, Rng& rng,
                                    const std::vector<double>& hints = {});

}  // namespace wgm
