#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wgm/interval.hpp"
#include "wgm/tower.hpp"

namespace wgm {

struct CorrelationSeries {
  std::vector<int> n;
  std::vector<double> corr;  // |covariance|, absolute value taken after averaging
  std::vector<double> err;   // per-orbit standard errors; zero on exact entries
  bool exact = false;
};

struct CorrelationOptions {
  int n_max = 20;
  long long ensemble = 100000;
  long long burn_in = 1000;  // interval models only; towers start stationary
  std::uint64_t seed = 1;
};

// Burn-in from the uniform initial law must be long enough to damp the
// non-stationary transient; shorter requests are refused.
inline constexpr long long kMinBurnIn = 100;

using BaseObservable = std::function<double(double theta, double x)>;

CorrelationSeries correlation_mc(const SkewProduct& model, const BaseObservable& phi,
                                 const BaseObservable& psi, const CorrelationOptions& opt);

// finite model: initial cells drawn exactly from the given stationary law
CorrelationSeries correlation_mc(const TowerModel& t, const Csr& chain,
                                 const std::vector<double>& law, const std::vector<double>& phi,
                                 const std::vector<double>& psi, const CorrelationOptions& opt);

// Exact series through powers of the cell transfer matrix. Observables are
// cell vectors, i.e. cylinder functions at the tower's depth by
// construction; anything else has no exact route.
CorrelationSeries exact_correlation(const TowerModel& t, const Csr& transfer,
                                    const InvariantDensity& inv, const std::vector<double>& phi,
                                    const std::vector<double>& psi, int n_max);

struct RateFit {
  std::string law;  // polynomial | poly-log | exponential | stretched-exp | log-power
  double exponent = 0;  // polynomial, poly-log: slope in log-log coordinates
  double rate = 0;      // exponential: decay rate; stretched/log-power: outer coefficient
  double tau = 0;       // stretched-exp, log-power: inner exponent
  double constant = 0;  // fitted prefactor
  double held_out_rms = 0;
  int usable = 0;
  int window_lo = 0, window_hi = 0;
};

// Fits every candidate law in its linearizing coordinates on the usable
// points (estimate > 2 stderr), selects by held-out residual on the even/odd
// split, and only promotes the log-corrected polynomial over the pure one
// when the residual F-ratio clears 4. Needs >= 12 usable points; a series
// entirely below the noise floor has no signal to fit.
RateFit fit_rate(const CorrelationSeries& s);

struct CltReport {
  double sigma2 = 0;  // truncated sum of autocovariances
  double sigma2_err = 0;
  int cutoff = 0;  // last lag included
  bool cutoff_saturated = false;
  double ks = 0;  // Kolmogorov-Smirnov distance to Normal(0, sigma)
  double mean = 0;
  bool degenerate = false;  // sigma2 <= 0: coboundary-like signal, reported not decided
  long long n = 0;
  long long ensemble = 0;
};

// Normalized Birkhoff sums over independent stationary orbits against the
// Gaussian with the summed-autocovariance variance. The lag cutoff is
// adaptive: summation stops once a term drops below twice its own error.
CltReport clt_experiment(const SkewProduct& model, const BaseObservable& phi, long long n,
                         long long ensemble, std::uint64_t seed, long long burn_in = 1000);
CltReport clt_experiment(const TowerModel& t, const Csr& chain, const std::vector<double>& law,
                         const std::vector<double>& phi, long long n, long long ensemble,
                         std::uint64_t seed);

// two-sided score interval for a binomial proportion
void wilson_band(long long hits, long long trials, double z, double& lo, double& hi);

struct LdOptions {
  double eps = 0.1;
  std::vector<long long> n_grid;
  long long ensemble = 20000;
  long long burn_in = 1000;  // interval models only
  std::uint64_t seed = 1;
};

struct LdReport {
  std::vector<long long> n_grid;
  std::vector<double> ld;        // exceedance probability estimates
  std::vector<double> lo, hi;    // Wilson bands (z = 2)
  std::vector<long long> hits;   // raw exceedance counts
  double mean = 0;               // centering value used
  bool one_sided = false;        // some grid point had zero exceedances
  RateFit fit;                   // empty law when too few usable points
  bool fitted = false;
};

// Exceedance-probability window for fitting: estimates in (0, 0.3] backed by
// enough raw counts for a stable log transform.
inline constexpr double kLdFitCeiling = 0.3;
inline constexpr long long kLdFitMinHits = 25;

LdReport ld_experiment(const SkewProduct& model, const BaseObservable& phi, const LdOptions& opt);
LdReport ld_experiment(const TowerModel& t, const Csr& chain, const std::vector<double>& law,
                       const std::vector<double>& phi, const LdOptions& opt);

struct PowerTailFit {
  double slope = 0;
  double intercept = 0;
  double rms = 0;
  int used = 0;
};

// Count-weighted log-log fit of a survival curve. Weights are the raw
// surviving counts (inverse variance of the log), so the sparse far tail
// cannot drag the slope; zero-survival points drop out.
PowerTailFit fit_power_tail(const std::vector<double>& n, const std::vector<double>& survival,
                            const std::vector<double>& counts);

}  // namespace wgm
