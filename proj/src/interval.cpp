#include "wgm/interval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "wgm/errors.hpp"

namespace wgm {

double pm_branch(double alpha, double x) {
  if (x <= 0.5) return x * (1.0 + std::pow(2.0 * x, alpha));
  return 2.0 * x - 1.0;
}

double pm_branch_deriv(double alpha, double x) {
  if (x <= 0.5) return 1.0 + (1.0 + alpha) * std::pow(2.0 * x, alpha);
  return 2.0;
}

double PmConstMap::invert_neutral(double w) const {
  if (w <= 0.0) return 0.0;
  if (w >= 1.0) return 0.5;
  // g is convex increasing, g(y) in [y, 2y]: Newton from the right edge of
  // the bracket converges monotonically.
  double y = std::min(0.5, w);
  for (int it = 0; it < 200; ++it) {
    double g = y * (1.0 + std::pow(2.0 * y, alpha));
    double d = 1.0 + (1.0 + alpha) * std::pow(2.0 * y, alpha);
    double step = (g - w) / d;
    y -= step;
    if (y < 0.0) y = 0.0;
    if (std::abs(step) < 1e-18) break;
  }
  return y;
}

std::vector<double> PmConstMap::breakpoints(int r_max) const {
  if (r_max < 1) throw config_error("breakpoints: r_max must be positive");
  std::vector<double> u(static_cast<size_t>(r_max));
  u[0] = 0.5;
  for (int k = 1; k < r_max; ++k) u[static_cast<size_t>(k)] = invert_neutral(u[static_cast<size_t>(k - 1)]);
  return u;
}

int PmConstMap::return_time(double x, const std::vector<double>& u) const {
  double y = 2.0 * x - 1.0;
  if (y > 0.5) return 1;
  // u is strictly decreasing; find the first k with y > u[k]
  for (size_t k = 1; k < u.size(); ++k)
    if (y > u[k]) return static_cast<int>(k) + 1;
  return 0;
}

double PmConstMap::pullback_branch(double v, int r) const {
  double w = v;
  for (int i = 1; i < r; ++i) w = invert_neutral(w);
  return 0.5 * (w + 1.0);
}

std::vector<ReturnCell> return_partition(const PmConstMap& m, int r_max) {
  auto u = m.breakpoints(r_max);
  std::vector<ReturnCell> cells;
  cells.reserve(static_cast<size_t>(r_max));
  double prev = 1.0;  // u[-1]
  for (int r = 1; r <= r_max; ++r) {
    double uk = u[static_cast<size_t>(r - 1)];
    cells.push_back({r, 0.5 * (uk + 1.0), 0.5 * (prev + 1.0), prev - uk});
    prev = uk;
  }
  return cells;
}

SkewProduct SkewProduct::default_skew() {
  SkewProduct s;
  s.alpha = [](double theta) {
    double si = std::sin(std::numbers::pi * theta);
    return 0.45 + 0.15 * si * si;
  };
  s.alpha_min = 0.45;
  s.alpha_max = 0.60;
  return s;
}

SkewProduct SkewProduct::constant(double a) {
  if (!(a > 0.0 && a < 1.0)) throw config_error("constant exponent must lie in (0,1)");
  SkewProduct s;
  s.alpha = [a](double) { return a; };
  s.alpha_min = a;
  s.alpha_max = a;
  return s;
}

void SkewProduct::step(double& theta, double& x) const {
  double a = alpha(theta);
  x = pm_branch(a, x);
  theta = theta * 4.0;
  theta -= std::floor(theta);
}

ReturnSample induced_return(const SkewProduct& s, double theta, double x, long long cap) {
  for (long long r = 1; r <= cap; ++r) {
    s.step(theta, x);
    if (x > 0.5) return {theta, x, r, false};
    if (x < 1e-14) return {theta, x, r, true};
  }
  return {theta, x, cap, true};
}

ExpansionReport check_expansion(const PmConstMap& m, int samples, Rng& rng) {
  ExpansionReport rep;
  rep.neutral_derivative_origin = pm_branch_deriv(m.alpha, 0.0);
  rep.min_induced_derivative = std::numeric_limits<double>::infinity();

  for (int i = 0; i < samples; ++i) {
    double x = 0.5 + 0.5 * rng.uniform();
    double logd = 0.0;
    bool ok = false;
    for (long long n = 0; n < 1000000; ++n) {
      logd += std::log(pm_branch_deriv(m.alpha, x));
      x = pm_branch(m.alpha, x);
      if (x < 1e-14) break;
      if (x > 0.5) {
        ok = true;
        rep.max_return_seen = std::max(rep.max_return_seen, n + 1);
        break;
      }
    }
    if (ok) rep.min_induced_derivative = std::min(rep.min_induced_derivative, std::exp(logd));
  }

  for (int i = 0; i < samples && rep.monotone; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    double lo = 0.5 * std::min(a, b), hi = 0.5 * std::max(a, b);
    if (hi > lo && pm_branch(m.alpha, lo) >= pm_branch(m.alpha, hi)) rep.monotone = false;
    lo += 0.5;
    hi += 0.5;
    if (hi > lo && pm_branch(m.alpha, lo) >= pm_branch(m.alpha, hi)) rep.monotone = false;
  }

  rep.passed = rep.monotone && rep.min_induced_derivative > 1.0 &&
               std::abs(rep.neutral_derivative_origin - 1.0) <= 1e-9;
  return rep;
}

namespace {

// first n return times of x through the constant-exponent map, empty on a
// censored excursion
std::vector<int> word_of(const PmConstMap& m, double x, int n) {
  std::vector<int> w;
  w.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (;;) {
      x = pm_branch(m.alpha, x);
      ++r;
      if (x > 0.5) break;
      if (x < 1e-14 || r > 2000000) return {};
    }
    w.push_back(r);
  }
  return w;
}

double pull_word(const PmConstMap& m, const std::vector<int>& w, double z) {
  for (size_t i = w.size(); i-- > 0;) z = m.pullback_branch(z, w[i]);
  return z;
}

}  // namespace

std::vector<double> pullback_profile(const PmConstMap& m,
                                     const std::function<double(double)>& phi, int n_max,
                                     int samples, int r_max, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n_max) + 1, 0.0);
  double glob_lo = std::numeric_limits<double>::infinity(), glob_hi = -glob_lo;

  auto visit_pair = [&](const std::vector<int>& w, double pa, double pb) {
    // compare the pair along every level of the first excursion
    double xa = pa, xb = pb;
    double worst = 0.0;
    for (int lev = 0; lev < w[0]; ++lev) {
      double fa = phi(xa), fb = phi(xb);
      glob_lo = std::min(glob_lo, std::min(fa, fb));
      glob_hi = std::max(glob_hi, std::max(fa, fb));
      worst = std::max(worst, std::abs(fa - fb));
      xa = pm_branch(m.alpha, xa);
      xb = pm_branch(m.alpha, xb);
    }
    size_t n = w.size();
    if (n <= static_cast<size_t>(n_max)) v[n] = std::max(v[n], worst);
  };

  // Endpoint pullbacks sweep the whole cylinder, so for forced words the
  // oscillation is measured without sampling noise (exact once the cylinder
  // is small enough for phi to be monotone on it). Forced words cover the
  // corners natural sampling misses: orbits pinned near either fixed point.
  auto visit_word = [&](const std::vector<int>& w) {
    double pa = pull_word(m, w, 0.5 + 1e-9), pb = pull_word(m, w, 1.0);
    visit_pair(w, pa, pb);
    for (int rep = 0; rep < 4; ++rep) {
      double za = 0.5 + 0.5 * rng.uniform(), zb = 0.5 + 0.5 * rng.uniform();
      visit_pair(w, pull_word(m, w, za), pull_word(m, w, zb));
    }
  };

  const int forced[] = {1, 2, 3, 4, 6, 9, 13, 19, 26};
  for (int n = 1; n <= n_max; ++n) {
    for (int r : forced) {
      if (r > r_max) break;
      std::vector<int> w(static_cast<size_t>(n), r);
      visit_word(w);
      if (r > 1) {
        std::fill(w.begin() + 1, w.end(), 1);
        visit_word(w);
        std::fill(w.begin(), w.end() - 1, 1);
        w.back() = r;
        visit_word(w);
      }
    }
  }

  for (int i = 0; i < samples; ++i) {
    double x = 0.5 + 0.5 * rng.uniform();
    int n = 1 + static_cast<int>(rng.uniform_below(static_cast<std::uint32_t>(n_max)));
    auto w = word_of(m, x, n);
    if (w.empty()) continue;
    visit_word(w);
  }

  v[0] = (glob_hi > glob_lo) ? glob_hi - glob_lo : 0.0;
  // a deeper-cylinder pair is also a pair at every shorter depth
  for (size_t n = v.size() - 1; n-- > 0;) v[n] = std::max(v[n], v[n + 1]);
  return v;
}

PullbackReport pullback_check(const PmConstMap& m, const std::function<double(double)>& phi,
                              const ClassSpec& declared, int n_max, int samples, Rng& rng) {
  check_class_range(declared);
  if (is_v_class(declared.cls)) throw config_error("pullback_check wants a radial class");
  PullbackReport rep;
  rep.profile = pullback_profile(m, phi, n_max, samples, 40, rng);
  rep.fit = classify_profile(rep.profile);

  if (rep.fit.locally_constant) {
    rep.passed = true;  // constant observables sit in every class
    return rep;
  }

  std::vector<double> xs, ys;
  for (size_t n = 1; n < rep.profile.size(); ++n)
    if (rep.profile[n] > 0) {
      xs.push_back(static_cast<double>(n));
      ys.push_back(std::log(rep.profile[n]));
    }
  if (xs.size() < 6) return rep;

  // residual of y = c - t with the intercept solved in closed form
  auto pinned_rms = [&](const std::vector<double>& t) {
    double c = 0;
    for (size_t i = 0; i < t.size(); ++i) c += ys[i] + t[i];
    c /= static_cast<double>(t.size());
    double ss = 0;
    for (size_t i = 0; i < t.size(); ++i) {
      double r = ys[i] - (c - t[i]);
      ss += r * r;
    }
    return std::sqrt(ss / static_cast<double>(t.size()));
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> t(xs.size());
  if (declared.cls == ObsClass::R1) {
    // pure geometric: log v = c + n log(theta)
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
      sx += xs[i];
      sy += ys[i];
      sxx += xs[i] * xs[i];
      sxy += xs[i] * ys[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    rep.tau_hat = std::exp(slope);
    rep.inner_scale = rep.tau_hat;
    for (size_t i = 0; i < xs.size(); ++i) t[i] = -slope * xs[i];
    best = pinned_rms(t);
  } else {
    for (int bi = 0; bi <= 80; ++bi) {
      double b = 0.04 * std::pow(100.0, bi / 80.0);  // log grid over [0.04, 4]
      double tau_lo = (declared.cls == ObsClass::R2) ? 0.05 : 1.02;
      double tau_hi = (declared.cls == ObsClass::R2) ? 0.99 : 8.0;
      double step = (declared.cls == ObsClass::R2) ? 0.005 : 0.02;
      for (double tau = tau_lo; tau <= tau_hi + 1e-12; tau += step) {
        for (size_t i = 0; i < xs.size(); ++i) {
          if (declared.cls == ObsClass::R2)
            t[i] = std::pow(b * xs[i], tau);
          else if (declared.cls == ObsClass::R3)
            t[i] = std::pow(std::log1p(b * xs[i]), tau);
          else
            t[i] = tau * std::log1p(b * xs[i]);
        }
        double r = pinned_rms(t);
        if (r < best) {
          best = r;
          rep.tau_hat = tau;
          rep.inner_scale = b;
        }
      }
    }
  }
  rep.shape_rms = best;

  bool tau_ok = true;
  if (declared.cls == ObsClass::R1)
    tau_ok = rep.tau_hat > 0 && rep.tau_hat < 1;
  else if (declared.cls == ObsClass::R4)
    tau_ok = rep.tau_hat >= declared.tau - 0.1;
  else
    tau_ok = rep.tau_hat >= declared.tau - 0.15;
  rep.passed = tau_ok && rep.shape_rms <= 0.75;
  return rep;
}

PullbackReport pullback_check(const PmConstMap& m, const ClassSpec& declared, double anchor,
                              int n_max, int samples, Rng& rng) {
  auto phi = [declared, anchor](double x) {
    return radial_template(declared, std::abs(x - anchor));
  };
  return pullback_check(m, phi, declared, n_max, samples, rng);
}

}  // namespace wgm
