#include "wgm/observables.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "wgm/errors.hpp"

namespace wgm {

const char* class_name(ObsClass c) {
  switch (c) {
    case ObsClass::R1: return "R1";
    case ObsClass::R2: return "R2";
    case ObsClass::R3: return "R3";
    case ObsClass::R4: return "R4";
    case ObsClass::V1: return "V1";
    case ObsClass::V2: return "V2";
    case ObsClass::V3: return "V3";
    case ObsClass::V4: return "V4";
  }
  return "?";
}

bool is_v_class(ObsClass c) {
  return c == ObsClass::V1 || c == ObsClass::V2 || c == ObsClass::V3 || c == ObsClass::V4;
}

void check_class_range(const ClassSpec& spec) {
  const bool small_tau = spec.cls == ObsClass::R1 || spec.cls == ObsClass::R2 ||
                         spec.cls == ObsClass::V1 || spec.cls == ObsClass::V2;
  if (small_tau && !(spec.tau > 0 && spec.tau < 1))
    throw config_error(std::string(class_name(spec.cls)) + " needs tau in (0,1), got " +
                       std::to_string(spec.tau));
  if (!small_tau && !(spec.tau > 1))
    throw config_error(std::string(class_name(spec.cls)) + " needs tau > 1, got " +
                       std::to_string(spec.tau));
}

double class_template(const ClassSpec& spec, int k) {
  switch (spec.cls) {
    case ObsClass::V1: return std::pow(spec.tau, k);
    case ObsClass::V2: return std::exp(-std::pow(k, spec.tau));
    case ObsClass::V3: return std::exp(-std::pow(std::log(std::max(k, 1)), spec.tau));
    case ObsClass::V4: return std::pow(std::max(k, 1), -spec.tau);
    default: throw config_error("class_template is for V-classes");
  }
}

double radial_template(const ClassSpec& spec, double dist) {
  if (dist <= 0) return 0;
  if (dist >= 1) return 1;
  const double ld = -std::log(dist);
  switch (spec.cls) {
    case ObsClass::R1: return std::pow(dist, spec.tau);
    case ObsClass::R2: return std::exp(-std::pow(ld, spec.tau));
    case ObsClass::R3: return std::exp(-std::pow(std::log1p(ld), spec.tau));
    case ObsClass::R4: return std::pow(1.0 + ld, -spec.tau);
    default: throw config_error("radial_template is for R-classes");
  }
}

VariationProfile variation_v(const TowerModel& t, const std::vector<double>& values, int n_max) {
  if (static_cast<int>(values.size()) != t.n_cells())
    throw config_error("variation_v: value count does not match the tower");
  VariationProfile out;
  out.depth = t.depth;
  out.exact = true;
  out.v.assign(n_max + 1, 0.0);
  const double global_max = *std::max_element(values.begin(), values.end());
  const double global_min = *std::min_element(values.begin(), values.end());
  out.v[0] = global_max - global_min;
  for (int n = 1; n <= std::min(n_max, t.depth - 1); ++n) {
    // group cells by level and n-symbol prefix; cells are level-major and
    // word-minor with lexicographic words, so groups are contiguous
    double vn = 0;
    int lo = 0;
    while (lo < t.n_cells()) {
      int hi = lo + 1;
      auto same_group = [&](int a, int b) {
        if (t.level_of(a) != t.level_of(b)) return false;
        const auto &wa = t.word_of(a), &wb = t.word_of(b);
        return std::equal(wa.begin(), wa.begin() + n, wb.begin());
      };
      double mx = values[lo], mn = values[lo];
      while (hi < t.n_cells() && same_group(lo, hi)) {
        mx = std::max(mx, values[hi]);
        mn = std::min(mn, values[hi]);
        ++hi;
      }
      vn = std::max(vn, mx - mn);
      lo = hi;
    }
    out.v[n] = vn;
  }
  // cellwise observables cannot separate past their depth
  for (size_t n = 1; n < out.v.size(); ++n) out.v[n] = std::min(out.v[n], out.v[n - 1]);
  return out;
}

namespace {

struct Fit {
  double tau = 0;
  double intercept = 0;
  double rms = std::numeric_limits<double>::infinity();
};

// model log v = intercept + slope * x, slope free
Fit fit_linear(const std::vector<double>& x, const std::vector<double>& logv) {
  const size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += logv[i];
    sxx += x[i] * x[i];
    sxy += x[i] * logv[i];
  }
  const double det = n * sxx - sx * sx;
  Fit f;
  if (std::abs(det) < 1e-30) return f;
  const double slope = (n * sxy - sx * sy) / det;
  f.intercept = (sy - slope * sx) / n;
  f.tau = slope;  // caller reinterprets
  double sse = 0;
  for (size_t i = 0; i < n; ++i) {
    const double r = logv[i] - (f.intercept + slope * x[i]);
    sse += r * r;
  }
  f.rms = std::sqrt(sse / n);
  return f;
}

// model log v = intercept - u(tau, k) with the inner coefficient pinned to 1
Fit fit_pinned(const std::vector<int>& k, const std::vector<double>& logv, double tau_lo,
               double tau_hi, double step, const std::function<double(double, int)>& u) {
  Fit best;
  for (double tau = tau_lo; tau <= tau_hi + 1e-12; tau += step) {
    double c = 0;
    for (size_t i = 0; i < k.size(); ++i) c += logv[i] + u(tau, k[i]);
    c /= k.size();
    double sse = 0;
    for (size_t i = 0; i < k.size(); ++i) {
      const double r = logv[i] - (c - u(tau, k[i]));
      sse += r * r;
    }
    const double rms = std::sqrt(sse / k.size());
    if (rms < best.rms) best = {tau, c, rms};
  }
  return best;
}

}  // namespace

ClassifyResult classify_profile(const std::vector<double>& v) {
  if (v.size() < 8) throw config_error("classify_profile needs at least 8 profile points");
  ClassifyResult out;
  std::vector<int> ks;
  std::vector<double> logv;
  for (size_t n = 0; n < v.size(); ++n) {
    if (v[n] < 0) throw config_error("variation profile must be nonnegative");
    if (v[n] > 0) {
      ks.push_back(static_cast<int>(n));
      logv.push_back(std::log(v[n]));
    }
  }
  if (ks.empty() || (ks.size() == 1 && ks[0] == 0)) {
    out.locally_constant = true;
    return out;
  }
  if (ks.size() < 4) throw config_error("classify_profile: fewer than 4 positive points");

  struct Candidate {
    ObsClass cls;
    double tau;
    double intercept;
    double rms;
  };
  std::vector<Candidate> cand;

  {  // V1: log v = c + k log tau
    std::vector<double> x(ks.begin(), ks.end());
    Fit f = fit_linear(x, logv);
    if (f.tau < 0)  // slope must be a genuine decay
      cand.push_back({ObsClass::V1, std::exp(f.tau), f.intercept, f.rms});
  }
  {  // V2: log v = c - k^tau
    Fit f = fit_pinned(ks, logv, 0.02, 0.98, 0.005,
                       [](double tau, int k) { return std::pow(k, tau); });
    cand.push_back({ObsClass::V2, f.tau, f.intercept, f.rms});
  }
  {  // V3: log v = c - (log max(k,1))^tau
    Fit f = fit_pinned(ks, logv, 1.02, 8.0, 0.01, [](double tau, int k) {
      return std::pow(std::log(std::max(k, 1)), tau);
    });
    cand.push_back({ObsClass::V3, f.tau, f.intercept, f.rms});
  }
  {  // V4: log v = c - tau log max(k,1)
    std::vector<double> x;
    for (int k : ks) x.push_back(std::log(std::max(k, 1)));
    Fit f = fit_linear(x, logv);
    if (f.tau < 0) cand.push_back({ObsClass::V4, -f.tau, f.intercept, f.rms});
  }

  std::stable_sort(cand.begin(), cand.end(),
                   [](const Candidate& a, const Candidate& b) { return a.rms < b.rms; });
  if (cand.empty()) {
    out.locally_constant = true;
    return out;
  }
  out.cls = cand[0].cls;
  out.tau = cand[0].tau;
  out.constant = std::exp(cand[0].intercept);
  out.rms = cand[0].rms;
  out.second_rms = cand.size() > 1 ? cand[1].rms : std::numeric_limits<double>::infinity();
  out.ambiguous = cand.size() > 1 && out.second_rms <= 1.05 * out.rms + 1e-15;
  return out;
}

double class_constant(const std::vector<double>& v, const ClassSpec& spec) {
  double c = 0;
  for (size_t n = 0; n < v.size(); ++n)
    c = std::max(c, v[n] / class_template(spec, static_cast<int>(n)));
  return c;
}

namespace {

// +-1 coloring of the alphabet such that every branch image contains both
// colors; searched in a seeded random order so fixtures differ by seed
std::vector<int> both_color_assignment(const SymbolicModel& m, Rng& rng) {
  const int a = m.n_symbols;
  if (a > 20) throw config_error("fixture colorings support at most 20 symbols");
  for (const auto& img : m.images)
    if (img.size() < 2)
      throw hypothesis_error("fixture needs every branch image to have at least 2 elements");
  auto valid = [&](std::uint32_t mask) {
    for (const auto& img : m.images) {
      bool plus = false, minus = false;
      for (auto j : img) ((mask >> j) & 1u) ? plus = true : minus = true;
      if (!plus || !minus) return false;
    }
    return true;
  };
  const std::uint32_t space = 1u << a;
  std::uint32_t start = static_cast<std::uint32_t>(rng.uniform_below(space));
  for (std::uint32_t off = 0; off < space; ++off) {
    const std::uint32_t mask = (start + off) % space;
    if (valid(mask)) {
      std::vector<int> sigma(a);
      for (int s = 0; s < a; ++s) sigma[s] = ((mask >> s) & 1u) ? 1 : -1;
      return sigma;
    }
  }
  throw hypothesis_error("no two-color assignment covers every branch image");
}

}  // namespace

std::vector<double> make_observable(const TowerModel& t, const ClassSpec& spec,
                                    std::uint64_t seed) {
  if (!is_v_class(spec.cls))
    throw config_error("make_observable builds tower fixtures; radial classes live on the base");
  check_class_range(spec);
  const int d = t.depth;
  std::vector<double> coeff(d);
  for (int k = 0; k < d; ++k) {
    const double ak = class_template(spec, k);
    const double next = k + 1 < d ? class_template(spec, k + 1) : 0.0;
    coeff[k] = 0.5 * (ak - next);
    if (coeff[k] < 0) throw config_error("class template must be non-increasing");
  }
  std::vector<std::vector<int>> sigma;
  for (int k = 0; k < d; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    sigma.push_back(both_color_assignment(t.base, rng));
  }
  std::vector<double> values(t.n_cells());
  for (int c = 0; c < t.n_cells(); ++c) {
    const auto& w = t.word_of(c);
    double acc = 0;
    for (int k = 0; k < d; ++k) acc += coeff[k] * sigma[k][w[k]];
    values[c] = acc;
  }
  return values;
}

StarObservable normalize_star(const TowerModel& t, const InvariantDensity& inv,
                              const std::vector<double>& phi) {
  double sup = 0;
  for (double x : phi) sup = std::max(sup, std::abs(x));
  if (sup == 0) throw config_error("normalize_star: phi vanishes identically");
  const double shift = 2 * sup + 1;
  double denom = 0;
  for (int c = 0; c < t.n_cells(); ++c) denom += (phi[c] + shift) * inv.rho[c] * t.cell_mass(c);
  StarObservable out;
  out.values.resize(t.n_cells());
  out.min_value = std::numeric_limits<double>::infinity();
  out.max_value = -out.min_value;
  for (int c = 0; c < t.n_cells(); ++c) {
    out.values[c] = (phi[c] + shift) / denom;
    out.min_value = std::min(out.min_value, out.values[c]);
    out.max_value = std::max(out.max_value, out.values[c]);
  }
  out.integral = 0;
  for (int c = 0; c < t.n_cells(); ++c) out.integral += out.values[c] * inv.rho[c] * t.cell_mass(c);
  return out;
}

IplusReport iplus_membership(const TowerModel& t, const std::vector<double>& psi,
                             const std::vector<double>& v_phi, double c_density,
                             double cap_variation, double cap_geometric) {
  IplusReport rep;
  rep.min_value = *std::min_element(psi.begin(), psi.end());
  if (rep.min_value <= 0) throw config_error("iplus_membership needs a strictly positive psi");
  const double beta = t.base.beta;
  struct Pair {
    double ratio;  // |psi(x)/psi(y) - 1|, larger orientation
    double logr;   // |log psi(x) - log psi(y)|
    int s;
  };
  std::vector<Pair> pairs;
  int lo = 0;
  while (lo < t.n_cells()) {  // same level, same leading symbol
    int hi = lo;
    while (hi < t.n_cells() && t.level_of(hi) == t.level_of(lo) &&
           t.word_of(hi)[0] == t.word_of(lo)[0])
      ++hi;
    for (int a = lo; a < hi; ++a)
      for (int b = a + 1; b < hi; ++b) {
        const double big = std::max(psi[a], psi[b]), small = std::min(psi[a], psi[b]);
        pairs.push_back({big / small - 1.0, std::log(big / small),
                         separation_time(t.word_of(a), t.word_of(b))});
      }
    lo = hi;
  }
  rep.pairs = static_cast<std::int64_t>(pairs.size());
  auto vs = [&](int s) {
    return s < static_cast<int>(v_phi.size()) ? v_phi[s] : 0.0;
  };
  for (const auto& p : pairs)
    if (vs(p.s) == 0) rep.c_geometric = std::max(rep.c_geometric, p.ratio / std::pow(beta, p.s));
  for (const auto& p : pairs)
    if (vs(p.s) > 0)
      rep.c_variation = std::max(
          rep.c_variation,
          std::max(0.0, p.ratio - rep.c_geometric * std::pow(beta, p.s)) / vs(p.s));
  // log form against the supplied density constant
  rep.worst_excess = -std::numeric_limits<double>::infinity();
  for (const auto& p : pairs) {
    const double geo = c_density * std::pow(beta, p.s);
    if (vs(p.s) > 0)
      rep.log_c_variation = std::max(rep.log_c_variation, std::max(0.0, p.logr - geo) / vs(p.s));
    else
      rep.worst_excess = std::max(rep.worst_excess, p.logr - geo);
  }
  if (pairs.empty()) rep.worst_excess = 0;
  rep.k2_prime = c_density > 0 ? rep.log_c_variation / c_density : 0.0;
  rep.passed = rep.c_variation <= cap_variation && rep.c_geometric <= cap_geometric;
  return rep;
}

std::vector<ModulusPoint> modulus_R(const std::function<double(double)>& f, double lo, double hi,
                                    const std::vector<double>& eps_grid, int samples, Rng& rng,
                                    const std::vector<double>& hints) {
  if (!(hi > lo)) throw config_error("modulus_R: empty domain");
  std::vector<ModulusPoint> out;
  for (double eps : eps_grid) {
    double best = 0;
    auto probe = [&](double x, double y) {
      x = std::clamp(x, lo, hi);
      y = std::clamp(y, lo, hi);
      best = std::max(best, std::abs(f(x) - f(y)));
    };
    const int uniform = hints.empty() ? samples : samples / 2;
    for (int i = 0; i < uniform; ++i) {
      const double x = lo + (hi - lo) * rng.uniform();
      probe(x, x + (2 * rng.uniform() - 1) * eps);
    }
    if (!hints.empty()) {
      const int per_hint = std::max(1, (samples - uniform) / static_cast<int>(hints.size()));
      for (double h : hints)
        for (int i = 0; i < per_hint; ++i) {
          // log-uniform standoff so singular anchors are actually probed
          const double standoff = eps * std::pow(10.0, -12.0 * rng.uniform());
          const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
          probe(h + sgn * standoff, h + sgn * (standoff + eps * rng.uniform()));
          probe(h, h + sgn * eps * rng.uniform());
        }
    }
    out.push_back({eps, best});
  }
  // enforce monotonicity in eps without reordering the caller's grid
  std::vector<size_t> order(out.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return out[a].eps < out[b].eps; });
  double run = 0;
  for (size_t i : order) {
    run = std::max(run, out[i].value);
    out[i].value = run;
  }
  return out;
}

}  // namespace wgm
