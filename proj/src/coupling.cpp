#include "wgm/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "wgm/errors.hpp"
#include "wgm/parallel.hpp"

namespace wgm {
namespace {

// ---------------------------------------------------------------------------
// Waiting-scheme phase. The scheme checks one coordinate at a time: after a
// check fires (the checked coordinate is on the base) the other coordinate
// becomes active and the next check happens n0 steps later. `wait` counts
// steps until that check (0 = checking on every step until the hit), `armed`
// is set once the first check has fired, and a simultaneous base hit at an
// armed check is the joint return.
struct Phase {
  int wait;
  int active;  // 1 or 2
  bool armed;
};

inline int n_phases(int n0) { return 4 * (n0 + 1); }

inline int phase_id(const Phase& p, int n0) {
  return ((p.armed ? 2 : 0) + (p.active - 1)) * (n0 + 1) + p.wait;
}

struct Resolution {
  bool fired = false;     // the active coordinate was checked and found on base
  bool absorbed = false;  // fired while armed with both coordinates on base
  Phase next{0, 1, false};  // continuation phase (valid even when absorbed)
};

inline Resolution resolve_step(const Phase& p, int n0, int lvl1, int lvl2) {
  Resolution r;
  if (p.wait >= 2) {
    r.next = {p.wait - 1, p.active, p.armed};
    return r;
  }
  const int la = p.active == 1 ? lvl1 : lvl2;
  if (la != 0) {
    r.next = {0, p.active, p.armed};
    return r;
  }
  r.fired = true;
  r.absorbed = p.armed && lvl1 == 0 && lvl2 == 0;
  r.next = {n0, 3 - p.active, true};
  return r;
}

// ---------------------------------------------------------------------------
// Exact absorbing chain on (cell pair, phase) states. Cell moves carry the
// forward-chain weights, so evolving a measure through this chain is exactly
// the pushforward of the corresponding product measure; absorption deposits
// the landed measure per level-0 cell pair.
struct PairEngine {
  const TowerModel* t;
  int C, n0, NP;
  std::int64_t NS;
  std::vector<std::int64_t> off;   // NS + 1
  std::vector<std::int32_t> to;    // transient target state, or -1 if absorbed
  std::vector<std::int32_t> land;  // landing pair for absorbed edges
  std::vector<double> pr;
  bool lu_ready = false;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;

  static constexpr std::int64_t kStateCap = 2'000'000;

  PairEngine(const TowerModel& tower, const Csr& chain, int lag)
      : t(&tower), C(tower.n_cells()), n0(lag), NP(n_phases(lag)) {
    NS = static_cast<std::int64_t>(NP) * C * C;
    if (NS > kStateCap)
      throw numerical_error("product state space too large for the exact pair engine");
    std::vector<std::int32_t> lvl(C);
    for (int c = 0; c < C; ++c) lvl[c] = tower.level_of(c);

    off.assign(NS + 1, 0);
    for (int ph = 0; ph < NP; ++ph)
      for (int c1 = 0; c1 < C; ++c1) {
        const auto d1 = chain.row_ptr[c1 + 1] - chain.row_ptr[c1];
        for (int c2 = 0; c2 < C; ++c2) {
          const auto d2 = chain.row_ptr[c2 + 1] - chain.row_ptr[c2];
          off[state(ph, c1, c2) + 1] = d1 * d2;
        }
      }
    for (std::int64_t s = 0; s < NS; ++s) off[s + 1] += off[s];
    to.resize(off[NS]);
    land.assign(off[NS], -1);
    pr.resize(off[NS]);

    for (int ph = 0; ph < NP; ++ph) {
      Phase p = decode(ph);
      for (int c1 = 0; c1 < C; ++c1)
        for (int c2 = 0; c2 < C; ++c2) {
          std::int64_t e = off[state(ph, c1, c2)];
          for (auto e1 = chain.row_ptr[c1]; e1 < chain.row_ptr[c1 + 1]; ++e1)
            for (auto e2 = chain.row_ptr[c2]; e2 < chain.row_ptr[c2 + 1]; ++e2, ++e) {
              const int n1 = chain.col[e1], n2 = chain.col[e2];
              pr[e] = chain.val[e1] * chain.val[e2];
              const Resolution r = resolve_step(p, n0, lvl[n1], lvl[n2]);
              if (r.absorbed) {
                to[e] = -1;
                land[e] = n1 * C + n2;
              } else {
                const Phase q = r.fired ? Phase{n0, 3 - p.active, true} : r.next;
                to[e] = static_cast<std::int32_t>(state(phase_id(q, n0), n1, n2));
              }
            }
        }
    }
  }

  std::int64_t state(int ph, int c1, int c2) const {
    return (static_cast<std::int64_t>(ph) * C + c1) * C + c2;
  }
  Phase decode(int ph) const {
    const int j = ph % (n0 + 1), f = ph / (n0 + 1);
    return {j, (f & 1) + 1, (f & 2) != 0};
  }
  int initial_phase() const { return phase_id({n0, 1, false}, n0); }

  // one step of measure evolution; absorbed mass lands per cell pair
  void step(const std::vector<double>& mu, std::vector<double>& nxt,
            std::vector<double>& landing) const {
    std::fill(nxt.begin(), nxt.end(), 0.0);
    for (std::int64_t s = 0; s < NS; ++s) {
      const double m = mu[s];
      if (m == 0) continue;
      for (std::int64_t e = off[s]; e < off[s + 1]; ++e) {
        if (to[e] >= 0)
          nxt[to[e]] += pr[e] * m;
        else
          landing[land[e]] += pr[e] * m;
      }
    }
  }

  void ensure_lu() {
    if (lu_ready) return;
    std::vector<Eigen::Triplet<double>> tr;
    tr.reserve(static_cast<std::size_t>(off[NS]) + NS);
    for (std::int64_t s = 0; s < NS; ++s) {
      tr.emplace_back(static_cast<int>(s), static_cast<int>(s), 1.0);
      for (std::int64_t e = off[s]; e < off[s + 1]; ++e)
        if (to[e] >= 0) tr.emplace_back(to[e], static_cast<int>(s), -pr[e]);
    }
    Eigen::SparseMatrix<double> A(static_cast<int>(NS), static_cast<int>(NS));
    A.setFromTriplets(tr.begin(), tr.end());
    lu.compute(A);
    if (lu.info() != Eigen::Success)
      throw numerical_error("pair engine absorption system failed to factorize");
    lu_ready = true;
  }

  // total landed measure from an initial state measure, drained exactly
  std::vector<double> drain(const std::vector<double>& mu0) {
    ensure_lu();
    Eigen::VectorXd b(NS);
    for (std::int64_t s = 0; s < NS; ++s) b[s] = mu0[s];
    Eigen::VectorXd x = lu.solve(b);
    if (lu.info() != Eigen::Success)
      throw numerical_error("pair engine absorption solve failed");
    std::vector<double> landing(static_cast<std::size_t>(C) * C, 0.0);
    for (std::int64_t s = 0; s < NS; ++s) {
      const double m = x[s];
      if (m == 0) continue;
      for (std::int64_t e = off[s]; e < off[s + 1]; ++e)
        if (to[e] < 0) landing[land[e]] += pr[e] * m;
    }
    return landing;
  }

  std::vector<double> pack_pairs(const std::vector<double>& pair_measure) const {
    std::vector<double> mu(NS, 0.0);
    const std::int64_t base = static_cast<std::int64_t>(initial_phase()) * C * C;
    for (std::int64_t q = 0; q < static_cast<std::int64_t>(pair_measure.size()); ++q)
      mu[base + q] = pair_measure[q];
    return mu;
  }

  JointReturnLaw law(const std::vector<double>& pair_measure, int n_max) {
    const double tot =
        std::accumulate(pair_measure.begin(), pair_measure.end(), 0.0);
    if (!(tot > 0)) throw config_error("joint initial measure must have positive mass");
    auto mu = pack_pairs(pair_measure);
    JointReturnLaw out;
    out.survival.assign(n_max + 1, 1.0);
    out.landing.assign(static_cast<std::size_t>(C) * C, 0.0);
    std::vector<double> nxt(mu.size());
    double remaining = tot;
    for (int n = 1; n <= n_max; ++n) {
      step(mu, nxt, out.landing);
      mu.swap(nxt);
      remaining = std::accumulate(mu.begin(), mu.end(), 0.0);
      out.survival[n] = remaining / tot;
    }
    auto late = drain(mu);
    for (std::size_t q = 0; q < late.size(); ++q) out.landing[q] += late[q];
    for (auto& v : out.landing) v /= tot;
    out.absorbed = std::accumulate(out.landing.begin(), out.landing.end(), 0.0);
    out.residual = 1.0 - out.absorbed;
    return out;
  }
};

std::vector<double> product_pair_measure(const std::vector<double>& w1,
                                         const std::vector<double>& w2) {
  const int C = static_cast<int>(w1.size());
  std::vector<double> mu(static_cast<std::size_t>(C) * C);
  for (int c1 = 0; c1 < C; ++c1)
    for (int c2 = 0; c2 < C; ++c2) mu[static_cast<std::size_t>(c1) * C + c2] = w1[c1] * w2[c2];
  return mu;
}

// pair measure with density f1 x f2 against the product reference mass
std::vector<double> density_pair_measure(const TowerModel& t, const std::vector<double>& f1,
                                         const std::vector<double>& f2) {
  const int C = t.n_cells();
  std::vector<double> mu(static_cast<std::size_t>(C) * C);
  for (int c1 = 0; c1 < C; ++c1) {
    const double a = f1[c1] * t.cell_mass(c1);
    for (int c2 = 0; c2 < C; ++c2)
      mu[static_cast<std::size_t>(c1) * C + c2] = a * f2[c2] * t.cell_mass(c2);
  }
  return mu;
}

// per-cell start probabilities of the law with density phi
std::vector<double> density_start_law(const TowerModel& t, const std::vector<double>& phi) {
  std::vector<double> law(t.n_cells());
  double tot = 0;
  for (int c = 0; c < t.n_cells(); ++c) {
    law[c] = phi[c] * t.cell_mass(c);
    tot += law[c];
  }
  for (auto& v : law) v /= tot;
  return law;
}

std::vector<double> reference_law(const TowerModel& t) {
  std::vector<double> law(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) law[c] = t.cell_mass(c) / t.total_mass;
  return law;
}

// weighted least squares of y against x; returns slope/intercept/rms
struct LineFit {
  double slope = 0, intercept = 0, rms = 0;
  int used = 0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w) {
  LineFit f;
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(w[i] > 0)) continue;
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
    ++f.used;
  }
  if (f.used < 2) return f;
  const double det = sw * sxx - sx * sx;
  if (!(std::abs(det) > 0)) return f;
  f.slope = (sw * sxy - sx * sy) / det;
  f.intercept = (sy - f.slope * sx) / sw;
  double rss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(w[i] > 0)) continue;
    const double r = y[i] - f.slope * x[i] - f.intercept;
    rss += w[i] * r * r;
  }
  f.rms = std::sqrt(rss / sw);
  return f;
}

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t x) {
  h ^= x + 0x9e3779b97f4a7c15ull;
  return h * 1099511628211ull;
}

}  // namespace

// ---------------------------------------------------------------------------

LagConstants choose_n0(const SymbolicModel& base, int horizon) {
  if (horizon < 1) throw config_error("choose_n0 horizon must be at least 1");
  const auto ap = check_aperiodicity(base, horizon);
  if (!ap.aperiodic)
    throw hypothesis_error("transition matrix has no all-positive power within the horizon");
  const auto cb = check_coprime_block(base);
  if (!cb.found)
    throw hypothesis_error("return times admit no coprime block; base visits are periodic");

  const int S = base.n_symbols;
  int rmax = 1;
  for (int j = 0; j < S; ++j) rmax = std::max(rmax, base.return_time[j]);
  // on-base indicator masses by renewal over the symbol consumed last
  std::vector<std::vector<double>> hist(rmax + 1, std::vector<double>(S, 0.0));
  hist[0].assign(S, 1.0);
  std::vector<double> qmin(horizon + 1, 0.0);
  int last_bad = 0;
  for (int n = 1; n <= horizon; ++n) {
    auto& v = hist[n % (rmax + 1)];
    for (int j = 0; j < S; ++j) {
      const int r = base.return_time[j];
      if (n < r) {
        v[j] = 0;
        continue;
      }
      const auto& prev = hist[(n - r) % (rmax + 1)];
      double acc = 0;
      for (std::size_t k = 0; k < base.images[j].size(); ++k)
        acc += base.edge_weight[j][k] * prev[base.images[j][k]];
      v[j] = acc;
    }
    double q = std::numeric_limits<double>::infinity();
    for (int i = 0; i < S; ++i) {
      double qi = 0;
      for (const auto j : base.images[i]) qi += base.element_mass[j] * v[j];
      q = std::min(q, qi);
    }
    qmin[n] = q;
    if (q < 1e-14) last_bad = n;
  }
  if (last_bad == horizon)
    throw hypothesis_error("no admissible lag: image mass keeps missing the base at the horizon");
  LagConstants lc;
  lc.n0 = last_bad + 1;
  lc.gamma0 = std::numeric_limits<double>::infinity();
  for (int n = lc.n0; n <= horizon; ++n) lc.gamma0 = std::min(lc.gamma0, qmin[n]);
  return lc;
}

ProductModel make_product_model(const TowerModel& t, std::vector<double> phi1,
                                std::vector<double> phi2, int horizon) {
  const int C = t.n_cells();
  if (static_cast<int>(phi1.size()) != C || static_cast<int>(phi2.size()) != C)
    throw config_error("density length does not match the tower cell count");
  for (const auto* phi : {&phi1, &phi2}) {
    double integral = 0;
    for (int c = 0; c < C; ++c) {
      if (!((*phi)[c] > 0))
        throw hypothesis_error("coupling densities must be strictly positive");
      integral += (*phi)[c] * t.cell_mass(c);
    }
    if (std::abs(integral - 1.0) > 1e-8)
      throw config_error("coupling densities must integrate to 1 against the reference mass");
  }
  ProductModel p;
  p.tower = &t;
  const auto lag = choose_n0(t.base, horizon);
  p.n0 = lag.n0;
  p.gamma0 = lag.gamma0;
  p.chain = build_forward_chain(t);
  p.transfer = build_transfer(t);
  const auto inv = invariant_density(t, p.transfer);
  for (auto* phi : {&phi1, &phi2}) {
    const auto prof = variation_v(t, *phi, t.depth);
    auto rep = iplus_membership(t, *phi, prof.v, inv.log_regularity);
    if (!rep.passed)
      throw hypothesis_error("coupling density fails the ratio-regularity membership check");
    if (phi == &phi1)
      p.reg1 = rep;
    else
      p.reg2 = rep;
  }
  p.phi1 = std::move(phi1);
  p.phi2 = std::move(phi2);
  return p;
}

std::vector<double> product_variation(const TowerModel& t, const std::vector<double>& phi1,
                                      const std::vector<double>& phi2, int n_max) {
  const auto p1 = variation_v(t, phi1, n_max);
  const auto p2 = variation_v(t, phi2, n_max);
  double s1 = 0, s2 = 0;
  for (int c = 0; c < t.n_cells(); ++c) {
    s1 = std::max(s1, std::abs(phi1[c]));
    s2 = std::max(s2, std::abs(phi2[c]));
  }
  std::vector<double> out(n_max + 1, 0.0);
  for (int k = 0; k <= n_max; ++k) out[k] = s1 * p2.v[k] + s2 * p1.v[k];
  return out;
}

void extend_pair_orbit(const TowerModel& t, const Csr& chain, PairOrbit& orbit, int len,
                       Rng& rng) {
  if (orbit.a.empty() || orbit.a.size() != orbit.b.size())
    throw config_error("pair orbit must start from one cell per coordinate");
  while (static_cast<int>(orbit.a.size()) < len) {
    orbit.a.push_back(tower_step(t, chain, orbit.a.back(), rng));
    orbit.b.push_back(tower_step(t, chain, orbit.b.back(), rng));
  }
}

StoppingRecord stopping_times(const TowerModel& t, const PairOrbit& orbit, int n0, int k_max) {
  if (n0 < 1) throw config_error("stopping scheme needs a positive lag");
  StoppingRecord r;
  r.tau.assign(1, 0);
  const std::int64_t T = static_cast<std::int64_t>(orbit.a.size());
  int active = 1;
  for (int k = 1; k <= k_max; ++k) {
    std::int64_t s = r.tau.back() + n0;
    for (;; ++s) {
      if (s >= T) return r;
      const auto c = active == 1 ? orbit.a[s] : orbit.b[s];
      if (t.level_of(c) == 0) break;
    }
    r.tau.push_back(s);
    r.complete = k;
    active = 3 - active;
  }
  return r;
}

ReturnPairSample simultaneous_return(const TowerModel& t, const PairOrbit& orbit, int n0,
                                     int i_cap) {
  const auto st = stopping_times(t, orbit, n0, i_cap);
  for (int i = 2; i <= st.complete; ++i) {
    const auto s = st.tau[i];
    if (t.level_of(orbit.a[s]) == 0 && t.level_of(orbit.b[s]) == 0) return {s, i, false};
  }
  return {st.tau[st.complete], st.complete, true};
}

ReturnPairSample sample_simultaneous_return(const TowerModel& t, const Csr& chain,
                                            const std::vector<double>& start_law1,
                                            const std::vector<double>& start_law2, int n0,
                                            int i_cap, Rng& rng) {
  PairOrbit orbit;
  orbit.a.push_back(sample_categorical(start_law1, rng));
  orbit.b.push_back(sample_categorical(start_law2, rng));
  int len = 4 * n0 + 16;
  for (;;) {
    extend_pair_orbit(t, chain, orbit, len, rng);
    const auto s = simultaneous_return(t, orbit, n0, i_cap);
    if (!s.censored || s.tau_index >= i_cap) return s;
    if (len > (1 << 26))
      throw numerical_error("joint return undecided within the orbit length cap");
    len *= 2;
  }
}

JointReturnLaw exact_joint_return_law(const TowerModel& t, const Csr& chain, int n0,
                                      const std::vector<double>& joint_init, int n_max) {
  PairEngine eng(t, chain, n0);
  if (static_cast<std::int64_t>(joint_init.size()) !=
      static_cast<std::int64_t>(t.n_cells()) * t.n_cells())
    throw config_error("joint initial measure has the wrong pair count");
  return eng.law(joint_init, n_max);
}

JointReturnLaw exact_joint_return_law(const TowerModel& t, const Csr& chain, int n0,
                                      const std::vector<double>& w1,
                                      const std::vector<double>& w2, int n_max) {
  return exact_joint_return_law(t, chain, n0, product_pair_measure(w1, w2), n_max);
}

// ---------------------------------------------------------------------------

double TailModel::survival(double x, bool product_reference) const {
  if (x < 0) return 1.0;
  switch (kind) {
    case Kind::exact: {
      const auto& c = product_reference ? survival_mm : survival_p;
      if (c.empty()) throw config_error("exact tail model has no survival curve");
      auto i = static_cast<std::int64_t>(std::floor(x));
      if (i >= static_cast<std::int64_t>(c.size())) i = static_cast<std::int64_t>(c.size()) - 1;
      return c[i];
    }
    case Kind::poly:
      return x < 1 ? 1.0 : std::pow(x, -exponent);
    case Kind::exponential:
      return std::exp(-rate * x);
  }
  return 1.0;
}

TailModel poly_tail(double exponent) {
  TailModel m;
  m.kind = TailModel::Kind::poly;
  m.exponent = exponent;
  return m;
}

TailModel exponential_tail(double rate) {
  TailModel m;
  m.kind = TailModel::Kind::exponential;
  m.rate = rate;
  return m;
}

STailEstimate estimate_s_tail(const ProductModel& p, std::int64_t samples,
                              const std::vector<std::int64_t>& grid, int i_cap,
                              std::uint64_t seed, TailModel::Kind expect) {
  if (samples < 1 || grid.empty()) throw config_error("tail estimate needs samples and a grid");
  const auto& t = *p.tower;
  const auto law1 = density_start_law(t, p.phi1);
  const auto law2 = density_start_law(t, p.phi2);

  std::vector<std::int64_t> all_s, cens_s;
  all_s.reserve(samples);
  for_each_chunk(samples, seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      const auto s = sample_simultaneous_return(t, p.chain, law1, law2, p.n0, i_cap, rng);
      all_s.push_back(s.s);
      if (s.censored) cens_s.push_back(s.s);
    }
  });
  std::sort(all_s.begin(), all_s.end());
  std::sort(cens_s.begin(), cens_s.end());

  STailEstimate est;
  est.grid = grid;
  est.censored_fraction = static_cast<double>(cens_s.size()) / static_cast<double>(samples);
  est.widened = est.censored_fraction > 0.01;
  const std::int64_t n_pts = static_cast<std::int64_t>(grid.size());
  est.survival.resize(n_pts);
  est.lo.resize(n_pts);
  est.hi.resize(n_pts);
  est.at_risk.resize(n_pts);
  est.hits.resize(n_pts);
  for (std::int64_t i = 0; i < n_pts; ++i) {
    const auto n = grid[i];
    // reduced-sample counts: a censored observation leaves the risk set at
    // its censor time, everything else stays classifiable
    const auto below = std::upper_bound(all_s.begin(), all_s.end(), n) - all_s.begin();
    const auto cens_below = std::upper_bound(cens_s.begin(), cens_s.end(), n) - cens_s.begin();
    const std::int64_t trials = samples - cens_below;
    const std::int64_t hits = samples - below;
    est.at_risk[i] = trials;
    est.hits[i] = hits;
    est.survival[i] = trials > 0 ? static_cast<double>(hits) / trials : 0.0;
    double lo = 0, hi = 1;
    if (trials > 0) wilson_band(hits, trials, 2.0, lo, hi);
    if (est.widened) {
      const double c = est.survival[i];
      lo = std::max(0.0, c - 2 * (c - lo));
      hi = std::min(1.0, c + 2 * (hi - c));
    }
    est.lo[i] = lo;
    est.hi[i] = hi;
  }

  std::vector<double> gx(n_pts), counts(n_pts);
  for (std::int64_t i = 0; i < n_pts; ++i) {
    gx[i] = static_cast<double>(grid[i]);
    counts[i] = static_cast<double>(est.hits[i]);
  }
  est.poly_fit = fit_power_tail(gx, est.survival, counts);
  std::vector<double> ly(n_pts), lw(n_pts, 0.0);
  for (std::int64_t i = 0; i < n_pts; ++i)
    if (est.survival[i] > 0) {
      ly[i] = std::log(est.survival[i]);
      lw[i] = counts[i];
    }
  const auto ef = fit_line(gx, ly, lw);
  est.exp_rate = -ef.slope;
  est.exp_rate_rms = ef.rms;
  if (expect == TailModel::Kind::poly)
    est.model = poly_tail(-est.poly_fit.slope);
  else if (expect == TailModel::Kind::exponential)
    est.model = exponential_tail(est.exp_rate);
  else
    est.model.kind = TailModel::Kind::exact;
  return est;
}

// ---------------------------------------------------------------------------

EpsilonSequence epsilon_sequence(const std::vector<double>& v_profile, double beta,
                                 double delta_bar, int i_max, double d_bar) {
  if (i_max < 1) throw config_error("splitting sequence needs at least one step");
  if (!(beta > 0 && beta < 1)) throw config_error("contraction rate must lie in (0,1)");
  if (!(delta_bar > 0 && delta_bar <= 1)) throw config_error("delta_bar must lie in (0,1]");
  if (!(d_bar > 1)) throw config_error("decay-fit constant must exceed 1");
  if (static_cast<int>(v_profile.size()) <= i_max)
    throw config_error("variation profile shorter than the requested step count");
  for (int i = 0; i + 1 < static_cast<int>(v_profile.size()); ++i)
    if (v_profile[i + 1] > v_profile[i] + 1e-12)
      throw config_error("variation profile must be non-increasing");

  EpsilonSequence E;
  E.delta_bar = delta_bar;
  E.d4 = d_bar;
  E.eps_prime.resize(i_max);
  E.eps.resize(i_max);
  std::vector<char> beta_arm(i_max, 0);

  // target growth: reach min(1/v_i, beta^{-i/2}) monotonically, with a
  // decaying positive floor so every step removes something
  const double lb = -std::log(beta);
  double log_target_prev = 0;
  double grow_prod = 1;   // realized prod (1 + eps')
  double backlog = 0;     // geometric backlog sum
  double d3 = 0;
  for (int i = 1; i <= i_max; ++i) {
    const double vi = v_profile[i];
    const double log_v_arm = vi > 0 ? -std::log(vi) : std::numeric_limits<double>::infinity();
    const double log_b_arm = 0.5 * i * lb;
    const double log_raw = std::min(log_v_arm, log_b_arm);
    beta_arm[i - 1] = log_b_arm <= log_v_arm ? 1 : 0;
    const double log_target = std::max(log_target_prev, log_raw);
    const double growth = std::expm1(log_target - log_target_prev);
    log_target_prev = log_target;
    const double floor_i = std::min(0.5, 1.0 / (static_cast<double>(i) * i));
    const double ep = std::min(0.5, std::max(growth, floor_i));
    E.eps_prime[i - 1] = ep;
    E.eps[i - 1] = delta_bar * ep;

    grow_prod *= 1.0 + ep;
    const double growth_bound = vi * grow_prod;
    backlog = (1.0 + ep) * beta * (1.0 + backlog);
    d3 = std::max(d3, std::max(growth_bound, backlog));
    if (!(d3 < 1e6))
      throw numerical_error("splitting-fraction construction diverged at step " +
                            std::to_string(i));
  }
  E.d3 = d3;
  E.zeta = delta_bar / E.d4;

  // decay fit of prod (1 - eps_j / d_bar) along the two construction arms
  std::vector<double> li, lp_poly, wi, xi, lp_geo, wg;
  double logprod = 0;
  int split = i_max + 1;
  for (int i = 1; i <= i_max; ++i) {
    logprod += std::log1p(-E.eps[i - 1] / d_bar);
    if (beta_arm[i - 1]) {
      if (split > i_max) split = i;
      xi.push_back(i);
      lp_geo.push_back(logprod);
      wg.push_back(1);
    } else if (v_profile[i] > 0) {
      li.push_back(std::log(static_cast<double>(i)));
      lp_poly.push_back(logprod);
      wi.push_back(1);
    }
  }
  E.fit.arm_split = split;
  if (li.size() >= 3) {
    const auto f = fit_line(li, lp_poly, wi);
    E.fit.poly_slope = f.slope;
    E.fit.poly_rms = f.rms;
  }
  if (xi.size() >= 3) {
    const auto f = fit_line(xi, lp_geo, wg);
    E.fit.theta = std::exp(f.slope);
    E.fit.c_tilde = std::exp(f.intercept);
    E.fit.geo_rms = f.rms;
  }
  return E;
}

// ---------------------------------------------------------------------------
// Density-splitting recursion internals. A strand is the transported density
// of one branch class: after each joint return it lives on one base
// rectangle (leading symbol pair) with a per-word-pair slope. Branch classes
// that have consumed the whole word depth are constant on their rectangle
// and merge additively; only branches still carrying unconsumed word symbols
// ("short" branches) need explicit itineraries.
namespace {

struct WordIndex {
  int S = 0, W = 0, depth = 0;
  std::vector<std::vector<int>> by_sym;  // word ids per leading symbol
  std::vector<int> pos;                  // word id -> index within its symbol list
  std::map<Word, int> id;
  std::vector<std::int32_t> cell0;  // level-0 cell per word

  explicit WordIndex(const TowerModel& t) {
    S = t.base.n_symbols;
    W = t.n_words();
    depth = t.depth;
    by_sym.resize(S);
    pos.resize(W);
    cell0.resize(W);
    for (int w = 0; w < W; ++w) {
      id[t.words[w]] = w;
      pos[w] = static_cast<int>(by_sym[t.words[w][0]].size());
      by_sym[t.words[w][0]].push_back(w);
      cell0[w] = t.cell_index(0, w);
    }
  }
};

struct Strand {
  int a = 0, b = 0;
  std::vector<double> sv;  // slope per (word in a, word in b) pair
  int dep1 = 0, dep2 = 0;  // deepest word index the slope depends on
};

struct ShortBranch {
  int a = 0, b = 0;
  int k1 = 0, k2 = 0;  // symbols consumed per coordinate along the branch
  std::vector<double> psi;
  double mn = 0, mx = 0;
};

struct WalkCoord {
  int sym, lvl, K;
  double jac;
  Word fix;  // consumed symbol stream, fix[0..K]
};

// Explicit itineraries for branches whose landing-word tail is still
// constrained by the start word. Each coordinate renews within max_return
// steps, so the tree is cut once both coordinates have consumed past their
// slope dependence; surviving leaves are the short branches.
template <class Profile, class Emit>
void walk_short_branches(const TowerModel& t, const WordIndex& wi, int n0, int dep1, int dep2,
                         const WalkCoord& c1, const WalkCoord& c2, const Phase& ph,
                         const Profile& profile, const Emit& emit, long long& budget) {
  if (c1.K >= dep1 && c2.K >= dep2) return;  // subtree resolves to constants
  if (--budget < 0) throw numerical_error("short-branch itinerary tree exceeded its budget");
  const auto& base = t.base;
  const auto moves = [&](const WalkCoord& c, std::vector<WalkCoord>& out) {
    out.clear();
    if (c.lvl + 1 < base.return_time[c.sym]) {
      WalkCoord n = c;
      n.lvl += 1;
      out.push_back(std::move(n));
      return;
    }
    for (const auto j : base.images[c.sym]) {
      WalkCoord n;
      n.sym = j;
      n.lvl = 0;
      n.K = c.K + 1;
      n.fix = c.fix;
      n.fix.push_back(j);
      n.jac = c.jac * base.branch_jacobian({c.sym, j});
      out.push_back(std::move(n));
    }
  };
  std::vector<WalkCoord> m1, m2;
  moves(c1, m1);
  moves(c2, m2);
  for (const auto& n1 : m1)
    for (const auto& n2 : m2) {
      const auto r = resolve_step(ph, n0, n1.lvl, n2.lvl);
      if (r.absorbed) {
        if (n1.K >= dep1 && n2.K >= dep2) continue;  // constant on this branch
        ShortBranch sb;
        sb.a = n1.sym;
        sb.b = n2.sym;
        sb.k1 = n1.K;
        sb.k2 = n2.K;
        const auto& ua = wi.by_sym[sb.a];
        const auto& ub = wi.by_sym[sb.b];
        sb.psi.resize(ua.size() * ub.size());
        sb.mn = std::numeric_limits<double>::infinity();
        sb.mx = 0;
        const double jac = n1.jac * n2.jac;
        Word v1(wi.depth), v2(wi.depth);
        for (std::size_t x = 0; x < ua.size(); ++x) {
          const Word& u = t.words[ua[x]];
          for (int i = 0; i < wi.depth; ++i) v1[i] = i <= n1.K ? n1.fix[i] : u[i - n1.K];
          const auto it1 = wi.id.find(v1);
          if (it1 == wi.id.end())
            throw numerical_error("short branch produced an unindexed word");
          for (std::size_t y = 0; y < ub.size(); ++y) {
            const Word& w = t.words[ub[y]];
            for (int i = 0; i < wi.depth; ++i) v2[i] = i <= n2.K ? n2.fix[i] : w[i - n2.K];
            const auto it2 = wi.id.find(v2);
            if (it2 == wi.id.end())
              throw numerical_error("short branch produced an unindexed word");
            const double val = profile(it1->second, it2->second) / jac;
            sb.psi[x * ub.size() + y] = val;
            sb.mn = std::min(sb.mn, val);
            sb.mx = std::max(sb.mx, val);
          }
        }
        emit(std::move(sb));
      } else {
        walk_short_branches(t, wi, n0, dep1, dep2, n1, n2, r.next, profile, emit, budget);
      }
    }
}

// Accumulates one splitting step: matched mass leaks out, constants merge
// per rectangle, short branches spawn child strands.
struct StepAccum {
  const TowerModel* t;
  const WordIndex* wi;
  double eps = 0;
  std::vector<double> next_const;  // per rect a*S+b
  std::vector<Strand> next_irreg;
  std::vector<std::vector<double>> h_short;  // per rect, per pair
  double leak = 0;
  double d4 = 1;

  StepAccum(const TowerModel& tm, const WordIndex& w, double e)
      : t(&tm), wi(&w), eps(e), next_const(static_cast<std::size_t>(w.S) * w.S, 0.0),
        h_short(static_cast<std::size_t>(w.S) * w.S) {}

  double rect_mass(int a, int b) const {
    return t->base.element_mass[a] * t->base.element_mass[b];
  }

  // parent dependence depths; the child keeps what the branch left unconsumed
  void add_short(ShortBranch&& sb, int dep1, int dep2) {
    if (!(sb.mn > 0))
      throw numerical_error(
          "splitting recursion produced a non-positive branch slope; retry with a smaller "
          "delta_bar");
    d4 = std::max(d4, sb.mx / sb.mn);
    leak += eps * sb.mn * rect_mass(sb.a, sb.b);
    auto& acc = h_short[static_cast<std::size_t>(sb.a) * wi->S + sb.b];
    if (acc.empty()) acc.assign(sb.psi.size(), 0.0);
    for (std::size_t q = 0; q < sb.psi.size(); ++q) acc[q] += sb.psi[q];
    // child slope after removing the matched layer
    std::vector<double> child(sb.psi);
    for (auto& v : child) v -= eps * sb.mn;
    if (sb.mx - sb.mn <= 1e-12 * sb.mx) {
      next_const[static_cast<std::size_t>(sb.a) * wi->S + sb.b] +=
          weighted_mean(sb.a, sb.b, child);
    } else {
      next_irreg.push_back({sb.a, sb.b, std::move(child), std::max(0, dep1 - sb.k1),
                            std::max(0, dep2 - sb.k2)});
    }
  }

  double weighted_mean(int a, int b, const std::vector<double>& vals) const {
    const auto& ua = wi->by_sym[a];
    const auto& ub = wi->by_sym[b];
    double acc = 0;
    for (std::size_t x = 0; x < ua.size(); ++x)
      for (std::size_t y = 0; y < ub.size(); ++y)
        acc += vals[x * ub.size() + y] * t->word_mass[ua[x]] * t->word_mass[ub[y]];
    return acc / rect_mass(a, b);
  }

  // fold landing densities minus the short part into per-rect constants
  void fold_long(const std::vector<double>& landing) {
    const int C = t->n_cells();
    double hmax = 0;
    for (int a = 0; a < wi->S; ++a)
      for (int b = 0; b < wi->S; ++b) {
        const auto& ua = wi->by_sym[a];
        const auto& ub = wi->by_sym[b];
        const auto& hs = h_short[static_cast<std::size_t>(a) * wi->S + b];
        for (std::size_t x = 0; x < ua.size(); ++x)
          for (std::size_t y = 0; y < ub.size(); ++y) {
            double h = landing[static_cast<std::size_t>(wi->cell0[ua[x]]) * C +
                               wi->cell0[ub[y]]] /
                       (t->word_mass[ua[x]] * t->word_mass[ub[y]]);
            if (!hs.empty()) h -= hs[x * ub.size() + y];
            hmax = std::max(hmax, std::abs(h));
          }
      }
    const double tol = 1e-8 * std::max(1.0, hmax);
    for (int a = 0; a < wi->S; ++a)
      for (int b = 0; b < wi->S; ++b) {
        const auto& ua = wi->by_sym[a];
        const auto& ub = wi->by_sym[b];
        const auto& hs = h_short[static_cast<std::size_t>(a) * wi->S + b];
        double mn = std::numeric_limits<double>::infinity(), mx = 0, mean = 0;
        for (std::size_t x = 0; x < ua.size(); ++x)
          for (std::size_t y = 0; y < ub.size(); ++y) {
            double h = landing[static_cast<std::size_t>(wi->cell0[ua[x]]) * C +
                               wi->cell0[ub[y]]] /
                       (t->word_mass[ua[x]] * t->word_mass[ub[y]]);
            if (!hs.empty()) h -= hs[x * ub.size() + y];
            mn = std::min(mn, h);
            mx = std::max(mx, h);
            mean += h * t->word_mass[ua[x]] * t->word_mass[ub[y]];
          }
        if (mx <= tol && mn >= -tol) continue;  // unreached rectangle
        if (mx - mn > tol)
          throw numerical_error("branch aggregation lost cell constancy on a rectangle");
        if (mn < -tol)
          throw numerical_error(
              "splitting recursion produced a negative aggregate density; retry with a "
              "smaller delta_bar");
        const double c = mean / rect_mass(a, b);
        leak += eps * c * rect_mass(a, b);
        next_const[static_cast<std::size_t>(a) * wi->S + b] += (1.0 - eps) * c;
      }
  }
};

}  // namespace

DensityRecursion density_recursion(const ProductModel& p, const EpsilonSequence& eps,
                                   int i_max) {
  const auto& t = *p.tower;
  if (i_max < 1) throw config_error("splitting recursion needs at least one step");
  if (static_cast<int>(eps.eps.size()) < i_max)
    throw config_error("splitting sequence shorter than the requested step count");
  if (t.truncated_mass > 0)
    throw hypothesis_error("splitting recursion requires an untruncated tower");
  for (const auto& kv : t.base.jacobian_override)
    if (kv.first.size() > 2)
      throw hypothesis_error(
          "splitting recursion requires branch volumes determined by symbol pairs");

  const WordIndex wi(t);
  PairEngine eng(t, p.chain, p.n0);
  const int C = t.n_cells();
  const int S = wi.S;

  // landed density per target rect for a unit density on a source rect;
  // built on demand, one absorption solve per source rect
  std::vector<std::vector<double>> unit_table(static_cast<std::size_t>(S) * S);
  const auto unit_row = [&](int a, int b) -> const std::vector<double>& {
    auto& row = unit_table[static_cast<std::size_t>(a) * S + b];
    if (!row.empty()) return row;
    std::vector<double> pairs(static_cast<std::size_t>(C) * C, 0.0);
    for (const auto va : wi.by_sym[a])
      for (const auto vb : wi.by_sym[b])
        pairs[static_cast<std::size_t>(wi.cell0[va]) * C + wi.cell0[vb]] =
            t.word_mass[va] * t.word_mass[vb];
    const auto landing = eng.drain(eng.pack_pairs(pairs));
    row.assign(static_cast<std::size_t>(S) * S, 0.0);
    double in_mass = t.base.element_mass[a] * t.base.element_mass[b], out_mass = 0;
    for (int a2 = 0; a2 < S; ++a2)
      for (int b2 = 0; b2 < S; ++b2) {
        double mn = std::numeric_limits<double>::infinity(), mx = 0, mean = 0;
        for (const auto ua : wi.by_sym[a2])
          for (const auto ub : wi.by_sym[b2]) {
            const double h = landing[static_cast<std::size_t>(wi.cell0[ua]) * C +
                                     wi.cell0[ub]] /
                             (t.word_mass[ua] * t.word_mass[ub]);
            mn = std::min(mn, h);
            mx = std::max(mx, h);
            mean += h * t.word_mass[ua] * t.word_mass[ub];
          }
        if (mx - mn > 1e-8 * std::max(1.0, mx))
          throw numerical_error("branch aggregation lost cell constancy on a rectangle");
        const double m2 = t.base.element_mass[a2] * t.base.element_mass[b2];
        row[static_cast<std::size_t>(a2) * S + b2] = mean / m2;
        out_mass += mean;
      }
    if (std::abs(out_mass - in_mass) > 1e-9 * in_mass)
      throw numerical_error("unit landing table lost mass");
    return row;
  };

  DensityRecursion rec;
  rec.steps = i_max;
  rec.leak.assign(i_max, 0.0);
  rec.strand_count.assign(i_max, 0);

  // state after step i: merged constants per rect plus explicit strands
  std::vector<double> consts(static_cast<std::size_t>(S) * S, 0.0);
  std::vector<Strand> irreg;

  double mass = 0;
  for (int c1 = 0; c1 < C; ++c1)
    for (int c2 = 0; c2 < C; ++c2)
      mass += p.phi1[c1] * p.phi2[c2] * t.cell_mass(c1) * t.cell_mass(c2);
  rec.mass.assign(i_max + 1, 0.0);
  rec.mass[0] = mass;

  for (int i = 1; i <= i_max; ++i) {
    StepAccum acc(t, wi, eps.eps[i - 1]);
    long long budget = 4'000'000;

    if (i == 1) {
      // first joint return: the pair starts anywhere on the product
      const auto landing =
          eng.drain(eng.pack_pairs(density_pair_measure(t, p.phi1, p.phi2)));
      const int dep = wi.depth - 1;
      if (dep > 0) {
        for (int s1 = 0; s1 < S; ++s1)
          for (int l1 = 0; l1 < t.base.return_time[s1]; ++l1)
            for (int s2 = 0; s2 < S; ++s2)
              for (int l2 = 0; l2 < t.base.return_time[s2]; ++l2) {
                const auto profile = [&](int w1, int w2) {
                  return p.phi1[t.cell_index(l1, w1)] * p.phi2[t.cell_index(l2, w2)];
                };
                WalkCoord c1{s1, l1, 0, 1.0, Word{static_cast<std::int32_t>(s1)}};
                WalkCoord c2{s2, l2, 0, 1.0, Word{static_cast<std::int32_t>(s2)}};
                walk_short_branches(
                    t, wi, p.n0, dep, dep, c1, c2, Phase{p.n0, 1, false}, profile,
                    [&](ShortBranch&& sb) { acc.add_short(std::move(sb), dep, dep); },
                    budget);
              }
      }
      acc.fold_long(landing);
    } else {
      for (int r = 0; r < S * S; ++r) {
        const double c = consts[r];
        if (!(c > 0)) continue;
        const int a = r / S, b = r % S;
        const auto& row = unit_row(a, b);
        acc.leak += acc.eps * c * acc.rect_mass(a, b);
        for (int r2 = 0; r2 < S * S; ++r2)
          acc.next_const[r2] += (1.0 - acc.eps) * c * row[r2];
      }
      for (const auto& st : irreg) {
        std::vector<double> pairs(static_cast<std::size_t>(C) * C, 0.0);
        const auto& ua = wi.by_sym[st.a];
        const auto& ub = wi.by_sym[st.b];
        for (std::size_t x = 0; x < ua.size(); ++x)
          for (std::size_t y = 0; y < ub.size(); ++y)
            pairs[static_cast<std::size_t>(wi.cell0[ua[x]]) * C + wi.cell0[ub[y]]] =
                st.sv[x * ub.size() + y] * t.word_mass[ua[x]] * t.word_mass[ub[y]];
        const auto landing = eng.drain(eng.pack_pairs(pairs));
        const auto profile = [&](int w1, int w2) {
          return st.sv[static_cast<std::size_t>(wi.pos[w1]) * ub.size() + wi.pos[w2]];
        };
        WalkCoord c1{st.a, 0, 0, 1.0, Word{static_cast<std::int32_t>(st.a)}};
        WalkCoord c2{st.b, 0, 0, 1.0, Word{static_cast<std::int32_t>(st.b)}};
        walk_short_branches(
            t, wi, p.n0, st.dep1, st.dep2, c1, c2, Phase{p.n0, 1, false}, profile,
            [&](ShortBranch&& sb) { acc.add_short(std::move(sb), st.dep1, st.dep2); },
            budget);
        acc.fold_long(landing);
        acc.h_short.assign(static_cast<std::size_t>(S) * S, {});
      }
    }

    rec.leak[i - 1] = acc.leak;
    rec.d4 = std::max(rec.d4, acc.d4);
    consts.swap(acc.next_const);
    irreg.swap(acc.next_irreg);
    rec.strand_count[i - 1] = static_cast<int>(irreg.size());

    double m = 0;
    for (int r = 0; r < S * S; ++r)
      m += consts[r] * t.base.element_mass[r / S] * t.base.element_mass[r % S];
    for (const auto& st : irreg) {
      const auto& ua = wi.by_sym[st.a];
      const auto& ub = wi.by_sym[st.b];
      for (std::size_t x = 0; x < ua.size(); ++x)
        for (std::size_t y = 0; y < ub.size(); ++y)
          m += st.sv[x * ub.size() + y] * t.word_mass[ua[x]] * t.word_mass[ub[y]];
    }
    rec.mass[i] = m;
    const double defect = std::abs(m - (rec.mass[i - 1] - rec.leak[i - 1]));
    rec.mass_error = std::max(rec.mass_error, defect / std::max(rec.mass[0], 1e-300));
    if (defect > 1e-6 * std::max(rec.mass[0], 1e-300))
      throw numerical_error("splitting recursion lost mass beyond tolerance");
  }
  return rec;
}

// ---------------------------------------------------------------------------

double matching_prefactor(double d2, double delta_bar, double d4) {
  if (!(d4 > 0) || !(2 * d4 > delta_bar))
    throw config_error("matching prefactor needs 2 d4 > delta_bar > 0");
  return 2.0 * d2 * (1.0 + delta_bar * d4 / (2.0 * d4 - delta_bar));
}

double matching_bound(std::int64_t n, const TailModel& tail, const EpsilonSequence& eps,
                      double d5) {
  if (n < 0) throw config_error("matching bound needs n >= 0");
  if (n == 0) return 2.0;
  if (static_cast<std::int64_t>(eps.eps.size()) < n)
    throw config_error("splitting sequence shorter than the bound horizon");
  double prod = 1, sum = 0;
  for (std::int64_t i = 1; i <= n; ++i) {
    prod *= 1.0 - eps.eps[i - 1] / eps.d4;
    sum += prod * static_cast<double>(i + 1) *
           tail.survival(static_cast<double>(n) / static_cast<double>(i + 1), true);
  }
  return 2.0 * tail.survival(static_cast<double>(n), false) + d5 * sum;
}

std::vector<double> exact_tv_curve(const ProductModel& p, int n_max) {
  const auto& t = *p.tower;
  std::vector<double> g1 = p.phi1, g2 = p.phi2, n1(g1.size()), n2(g2.size());
  std::vector<double> out(n_max + 1);
  for (int n = 0; n <= n_max; ++n) {
    double tv = 0;
    for (int c = 0; c < t.n_cells(); ++c) tv += std::abs(g1[c] - g2[c]) * t.cell_mass(c);
    out[n] = tv;
    if (n == n_max) break;
    p.transfer.apply(g1, n1);
    p.transfer.apply(g2, n2);
    g1.swap(n1);
    g2.swap(n2);
  }
  return out;
}

double RateEnvelope::eval(double n) const {
  const double x = std::max(n, 1.0);
  switch (kind) {
    case Kind::poly:
      return std::pow(x, -exponent);
    case Kind::poly_log:
      return std::pow(x, -exponent) * std::max(1.0, std::log(x));
    case Kind::exp_linear:
      return std::exp(-rate * x);
    case Kind::exp_stretched:
      return std::exp(-std::pow(x, tau_prime));
    case Kind::exp_log_power:
      return std::exp(-std::pow(std::log(std::max(x, 1.0)), tau_prime));
  }
  return 1.0;
}

const char* RateEnvelope::label() const {
  switch (kind) {
    case Kind::poly:
      return "n^-a";
    case Kind::poly_log:
      return "n^-a log n";
    case Kind::exp_linear:
      return "exp(-c n)";
    case Kind::exp_stretched:
      return "exp(-n^t)";
    case Kind::exp_log_power:
      return "exp(-(log n)^t)";
  }
  return "";
}

RateEnvelope rate_envelope(TailModel::Kind tail, double a, ObsClass cls, double tau,
                           double zeta) {
  if (!is_v_class(cls)) throw config_error("rate envelope is defined for variation classes");
  if (!(zeta > 0)) throw config_error("rate envelope needs zeta > 0");
  RateEnvelope e{};
  if (tail == TailModel::Kind::poly) {
    if (!(a > 1)) throw config_error("polynomial return tail needs exponent a > 1");
    if (cls != ObsClass::V4) {
      // faster-than-polynomial variation: the return tail limits the rate
      e.kind = RateEnvelope::Kind::poly;
      e.exponent = a - 1;
      return e;
    }
    if (!(tau > 2.0 / zeta))
      throw config_error("polynomial variation needs tau > 2/zeta for any decay");
    const double crit = (a + 1.0) / zeta;
    if (std::abs(tau - crit) <= 1e-9 * crit) {
      e.kind = RateEnvelope::Kind::poly_log;
      e.exponent = a - 1;
    } else if (tau > crit) {
      e.kind = RateEnvelope::Kind::poly;
      e.exponent = a - 1;
    } else {
      e.kind = RateEnvelope::Kind::poly;
      e.exponent = zeta * tau - 2.0;
    }
    return e;
  }
  if (tail != TailModel::Kind::exponential)
    throw config_error("rate envelope needs a polynomial or exponential return tail");
  switch (cls) {
    case ObsClass::V1:
      e.kind = RateEnvelope::Kind::exp_linear;
      e.rate = 1.0;  // shape only; the linear rate is model-dependent
      return e;
    case ObsClass::V2:
      e.kind = RateEnvelope::Kind::exp_stretched;
      e.tau_prime = 0.95 * tau;
      return e;
    case ObsClass::V3:
      e.kind = RateEnvelope::Kind::exp_log_power;
      e.tau_prime = 0.95 * tau;
      return e;
    default:
      if (!(tau > 1.0 / zeta))
        throw config_error("polynomial variation needs tau > 1/zeta for any decay");
      e.kind = RateEnvelope::Kind::poly;
      e.exponent = zeta * tau - 1.0;
      return e;
  }
}

// ---------------------------------------------------------------------------
// Scheme-cell Monte Carlo. A stage-k cell is the pair of coordinate
// itineraries recorded far enough to decide tau_1..tau_k; cells are keyed by
// hash (collisions are vanishingly rare at the tracked cell counts). Only
// cells holding at least min_cell_samples samples enter the reports, and a
// first counting pass over hashed buckets bounds the tracked key set without
// excluding any qualifying cell.
namespace {

struct SchemeTrace {
  std::vector<std::int64_t> tau;
  int s_index = -1;
  std::vector<std::int32_t> lv1, sy1, lv2, sy2;
};

void simulate_scheme(const TowerModel& t, const Csr& chain, const std::vector<double>& law1,
                     const std::vector<double>& law2, int n0, int k_max, Rng& rng,
                     SchemeTrace& tr) {
  tr.tau.assign(1, 0);
  tr.s_index = -1;
  tr.lv1.clear();
  tr.sy1.clear();
  tr.lv2.clear();
  tr.sy2.clear();
  auto c1 = sample_categorical(law1, rng);
  auto c2 = sample_categorical(law2, rng);
  const auto push = [&](std::int32_t a, std::int32_t b) {
    tr.lv1.push_back(t.level_of(a));
    tr.sy1.push_back(t.word_of(a)[0]);
    tr.lv2.push_back(t.level_of(b));
    tr.sy2.push_back(t.word_of(b)[0]);
  };
  push(c1, c2);
  Phase ph{n0, 1, false};
  std::int64_t now = 0;
  while (static_cast<int>(tr.tau.size()) <= k_max) {
    c1 = tower_step(t, chain, c1, rng);
    c2 = tower_step(t, chain, c2, rng);
    ++now;
    push(c1, c2);
    const auto r = resolve_step(ph, n0, t.level_of(c1), t.level_of(c2));
    if (r.fired) {
      tr.tau.push_back(now);
      if (r.absorbed && tr.s_index < 0) tr.s_index = static_cast<int>(tr.tau.size()) - 1;
    }
    ph = r.next;
  }
}

// stage-k cell key: both itineraries through the stage's decided lengths
std::uint64_t stage_key(const SchemeTrace& tr, int k) {
  std::int64_t l1 = 1, l2 = 1;
  if (k >= 1) {
    const std::int64_t la = tr.tau[k], lp = std::max<std::int64_t>(tr.tau[k - 1], 1);
    if (k % 2 == 1) {
      l1 = la;
      l2 = lp;
    } else {
      l2 = la;
      l1 = lp;
    }
  }
  std::uint64_t h = 1469598103934665603ull;
  h = fnv_mix(h, static_cast<std::uint64_t>(k));
  h = fnv_mix(h, static_cast<std::uint64_t>(l1));
  for (std::int64_t i = 0; i < l1; ++i)
    h = fnv_mix(h, (static_cast<std::uint64_t>(tr.lv1[i]) << 16) |
                       static_cast<std::uint64_t>(tr.sy1[i]));
  h = fnv_mix(h, 0xabcdef0123456789ull);
  h = fnv_mix(h, static_cast<std::uint64_t>(l2));
  for (std::int64_t i = 0; i < l2; ++i)
    h = fnv_mix(h, (static_cast<std::uint64_t>(tr.lv2[i]) << 16) |
                       static_cast<std::uint64_t>(tr.sy2[i]));
  return h;
}

constexpr int kBucketBits = 22;

}  // namespace

ConditionalFloorReport conditional_return_floor(const ProductModel& p, int k_max,
                                                std::int64_t samples, std::uint64_t seed,
                                                std::int64_t min_cell_samples) {
  if (k_max < 2 || samples < 1)
    throw config_error("conditional floor needs at least two stages and samples");
  const auto& t = *p.tower;
  const auto law1 = density_start_law(t, p.phi1);
  const auto law2 = density_start_law(t, p.phi2);

  std::vector<std::uint32_t> bucket(std::size_t{1} << kBucketBits, 0);
  SchemeTrace tr;
  for_each_chunk(samples, seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      simulate_scheme(t, p.chain, law1, law2, p.n0, k_max, rng, tr);
      for (int k = 2; k <= k_max; ++k) {
        if (tr.s_index >= 0 && tr.s_index < k) break;  // already matched before stage k
        ++bucket[stage_key(tr, k) >> (64 - kBucketBits)];
      }
    }
  });
  const std::uint32_t thresh = static_cast<std::uint32_t>(
      std::max<std::int64_t>(64, min_cell_samples / 2));

  struct Stat {
    std::int64_t n = 0, hit = 0;
    int k = 0;
  };
  std::unordered_map<std::uint64_t, Stat> cells;
  for_each_chunk(samples, seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      simulate_scheme(t, p.chain, law1, law2, p.n0, k_max, rng, tr);
      for (int k = 2; k <= k_max; ++k) {
        if (tr.s_index >= 0 && tr.s_index < k) break;
        const auto key = stage_key(tr, k);
        if (bucket[key >> (64 - kBucketBits)] < thresh) continue;
        auto& st = cells[key];
        st.k = k;
        ++st.n;
        if (tr.s_index == k) ++st.hit;
      }
    }
  });

  ConditionalFloorReport rep;
  rep.samples = samples;
  rep.per_k_min.assign(k_max - 1, -1.0);
  rep.cells_tested.assign(k_max - 1, 0);
  for (const auto& kv : cells) {
    const auto& st = kv.second;
    if (st.n < min_cell_samples) continue;
    const double r = static_cast<double>(st.hit) / static_cast<double>(st.n);
    auto& mn = rep.per_k_min[st.k - 2];
    mn = mn < 0 ? r : std::min(mn, r);
    ++rep.cells_tested[st.k - 2];
  }
  rep.eps0_min = -1;
  double prev = -1;
  int with_data = 0;
  for (int k = 2; k <= k_max; ++k) {
    const double m = rep.per_k_min[k - 2];
    if (m < 0) continue;
    rep.eps0_min = rep.eps0_min < 0 ? m : std::min(rep.eps0_min, m);
    if (with_data > 0 && prev > 0)
      rep.stabilized = std::abs(m - prev) <= 0.2 * std::max(m, prev);
    prev = m;
    ++with_data;
  }
  return rep;
}

GapTailReport gap_tail_domination(const ProductModel& p, int k_max, std::int64_t samples,
                                  std::uint64_t seed, std::int64_t min_cell_samples) {
  if (k_max < 1 || samples < 1) throw config_error("gap domination needs stages and samples");
  const auto& t = *p.tower;
  const auto law1 = density_start_law(t, p.phi1);
  const auto law2 = density_start_law(t, p.phi2);
  const int rmax = t.max_return;

  GapTailReport rep;
  rep.samples = samples;
  rep.hat_tail = hat_return_tail(t, rmax);

  std::vector<std::uint32_t> bucket(std::size_t{1} << kBucketBits, 0);
  SchemeTrace tr;
  for_each_chunk(samples, seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      simulate_scheme(t, p.chain, law1, law2, p.n0, k_max, rng, tr);
      for (int k = 0; k < k_max; ++k) ++bucket[stage_key(tr, k) >> (64 - kBucketBits)];
    }
  });
  const std::uint32_t thresh = static_cast<std::uint32_t>(
      std::max<std::int64_t>(64, min_cell_samples / 2));

  struct Stat {
    std::int64_t n = 0;
    std::vector<std::int64_t> gap_count;  // completion part of the next gap
  };
  std::unordered_map<std::uint64_t, Stat> cells;
  for_each_chunk(samples, seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      simulate_scheme(t, p.chain, law1, law2, p.n0, k_max, rng, tr);
      for (int k = 0; k < k_max; ++k) {
        const auto key = stage_key(tr, k);
        if (bucket[key >> (64 - kBucketBits)] < thresh) continue;
        auto& st = cells[key];
        if (st.gap_count.empty()) st.gap_count.assign(rmax + 1, 0);
        const auto gap = tr.tau[k + 1] - tr.tau[k] - p.n0;
        ++st.n;
        ++st.gap_count[std::min<std::int64_t>(gap, rmax)];
      }
    }
  });

  rep.d1 = 0;
  for (const auto& kv : cells) {
    const auto& st = kv.second;
    if (st.n < min_cell_samples) continue;
    ++rep.cells_tested;
    std::int64_t above = st.n;
    for (int n = 0; n <= rmax; ++n) {
      above -= st.gap_count[n];  // samples with gap > n
      if (n >= static_cast<int>(rep.hat_tail.size())) break;
      if (rep.hat_tail[n] <= 1e-12) continue;
      const double ratio =
          (static_cast<double>(above) / static_cast<double>(st.n)) / rep.hat_tail[n];
      rep.d1 = std::max(rep.d1, ratio);
    }
  }
  return rep;
}

BlockGapReport block_gap_domination(const ProductModel& p, int k_max, int n_max) {
  if (k_max < 1) throw config_error("block domination needs at least one block");
  const auto& t = *p.tower;
  PairEngine eng(t, p.chain, p.n0);
  const auto law_mm = eng.law(
      product_pair_measure(reference_law(t), reference_law(t)), n_max);
  BlockGapReport rep;
  rep.mm_survival = law_mm.survival;

  auto current = product_pair_measure(density_start_law(t, p.phi1),
                                      density_start_law(t, p.phi2));
  for (int k = 0; k < k_max; ++k) {
    const auto law = eng.law(current, n_max);
    rep.gap_survival.push_back(law.survival);
    current = law.landing;
  }
  rep.d2 = 0;
  for (const auto& curve : rep.gap_survival)
    for (int n = 0; n <= n_max; ++n) {
      if (rep.mm_survival[n] <= 1e-12) continue;
      rep.d2 = std::max(rep.d2, curve[n] / rep.mm_survival[n]);
    }
  return rep;
}

// ---------------------------------------------------------------------------

CouplingReport run_coupling(const ProductModel& p, const CouplingOptions& opt) {
  const auto& t = *p.tower;
  CouplingReport rep;
  rep.n0 = p.n0;
  rep.gamma0 = p.gamma0;

  PairEngine eng(t, p.chain, p.n0);
  const auto law_p = eng.law(
      product_pair_measure(density_start_law(t, p.phi1), density_start_law(t, p.phi2)),
      opt.n_max);
  const auto law_mm = eng.law(
      product_pair_measure(reference_law(t), reference_law(t)), opt.n_max);
  TailModel tail;
  tail.kind = TailModel::Kind::exact;
  tail.survival_p = law_p.survival;
  tail.survival_mm = law_mm.survival;

  std::vector<std::int64_t> grid;
  for (double g = 2.0 * p.n0; g <= opt.n_max; g *= 1.3) {
    const auto n = static_cast<std::int64_t>(std::ceil(g));
    if (grid.empty() || n > grid.back()) grid.push_back(n);
  }
  // finite towers couple at an exponential rate
  rep.s_tail = estimate_s_tail(p, opt.samples, grid, opt.i_cap, opt.seed,
                               TailModel::Kind::exponential);

  const int len = std::max(opt.n_max, opt.i_max);
  const auto v_prof = product_variation(t, p.phi1, p.phi2, len);
  double delta = opt.delta_bar > 0 ? opt.delta_bar : 1.0;
  for (;;) {
    rep.eps = epsilon_sequence(v_prof, t.base.beta, delta, len);
    try {
      rep.recursion = density_recursion(p, rep.eps, opt.i_max);
      break;
    } catch (const numerical_error&) {
      if (opt.delta_bar > 0 || delta <= 1.0 / 64) throw;
      delta *= 0.5;  // auto mode: retry with a smaller splitting scale
    }
  }
  rep.delta_bar = delta;
  rep.eps.d4 = rep.recursion.d4;
  rep.eps.zeta = delta / rep.recursion.d4;
  rep.d3 = rep.eps.d3;
  rep.d4 = rep.recursion.d4;
  rep.zeta = rep.eps.zeta;

  rep.blocks = block_gap_domination(p, opt.k_max_blocks, opt.n_max);
  rep.d2 = rep.blocks.d2;
  rep.d5 = matching_prefactor(rep.d2, rep.delta_bar, rep.d4);

  rep.floor = conditional_return_floor(p, opt.k_max_floor, opt.samples, opt.seed + 1);
  rep.eps0_min = rep.floor.eps0_min;
  rep.gap = gap_tail_domination(p, std::max(1, opt.k_max_floor - 1), opt.samples, opt.seed + 2);
  rep.d1 = rep.gap.d1;

  rep.bound_curve.resize(opt.n_max + 1);
  for (int n = 0; n <= opt.n_max; ++n)
    rep.bound_curve[n] = matching_bound(n, tail, rep.eps, rep.d5);
  rep.tv_curve = exact_tv_curve(p, opt.n_max);
  rep.tv_dominated = true;
  for (int n = 0; n <= opt.n_max; ++n)
    if (rep.tv_curve[n] > rep.bound_curve[n] * (1 + 1e-9) + 1e-12) rep.tv_dominated = false;
  return rep;
}

}  // namespace wgm
