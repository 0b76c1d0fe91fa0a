// wgmlab: experiment runner for the induced-map laboratory. Every subcommand
// is deterministic given (options, seed); CSV outputs are byte-identical
// across reruns and carry the code version and config digest in their
// headers. Exit codes: 0 ok, 1 verdict failure, 2 usage/config,
// 3 hypothesis failure, 4 numerical fault.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wgm/config.hpp"
#include "wgm/coupling.hpp"
#include "wgm/errors.hpp"
#include "wgm/interval.hpp"
#include "wgm/models.hpp"
#include "wgm/observables.hpp"
#include "wgm/parallel.hpp"
#include "wgm/report.hpp"
#include "wgm/rng.hpp"
#include "wgm/stats.hpp"
#include "wgm/symbolic.hpp"
#include "wgm/tower.hpp"

using namespace wgm;
using nlohmann::json;

namespace {

struct ModelRef {
  enum class Kind { symbolic, pm_const, skew_default } kind = Kind::symbolic;
  double alpha = 0;
  SymbolicModel sym;
  std::string name;
};

ModelRef load_model(const std::string& name) {
  ModelRef m;
  m.name = name;
  double a = 0;
  if (parse_pm_const(name, a)) {
    m.kind = ModelRef::Kind::pm_const;
    m.alpha = a;
    return m;
  }
  if (name == "skew-default") {
    m.kind = ModelRef::Kind::skew_default;
    return m;
  }
  m.sym = symbolic_model_by_name(name);
  return m;
}

bool is_interval(const ModelRef& m) { return m.kind != ModelRef::Kind::symbolic; }

SkewProduct to_skew(const ModelRef& m) {
  if (m.kind == ModelRef::Kind::pm_const) return SkewProduct::constant(m.alpha);
  if (m.kind == ModelRef::Kind::skew_default) return SkewProduct::default_skew();
  throw config_error("model '" + m.name + "' is not an interval map");
}

const SymbolicModel& to_symbolic(const ModelRef& m) {
  if (is_interval(m))
    throw config_error("model '" + m.name + "' is an interval map; this subcommand needs a symbolic model");
  return m.sym;
}

struct TowerBundle {
  TowerModel t;
  Csr transfer;
  Csr chain;
  InvariantDensity inv;
  std::vector<double> law;
};

TowerBundle make_bundle(const SymbolicModel& sym, int depth, int height_cap) {
  int max_r = 0;
  for (int r : sym.return_time) max_r = std::max(max_r, r);
  const int cap = height_cap > 0 ? height_cap : max_r;
  TowerBundle b{build_tower(sym, depth, cap, 0.0), {}, {}, {}, {}};
  b.transfer = build_transfer(b.t);
  b.chain = build_forward_chain(b.t);
  b.inv = invariant_density(b.t, b.transfer);
  b.law = stationary_forward(b.t, b.chain);
  return b;
}

// "V4:3" / "R4:8" -> class spec; validates the parameter range
ClassSpec parse_class(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw config_error("observable class '" + text + "' wants the form NAME:TAU");
  const std::string head = text.substr(0, colon);
  ClassSpec spec{};
  if (head == "V1") spec.cls = ObsClass::V1;
  else if (head == "V2") spec.cls = ObsClass::V2;
  else if (head == "V3") spec.cls = ObsClass::V3;
  else if (head == "V4") spec.cls = ObsClass::V4;
  else if (head == "R1") spec.cls = ObsClass::R1;
  else if (head == "R2") spec.cls = ObsClass::R2;
  else if (head == "R3") spec.cls = ObsClass::R3;
  else if (head == "R4") spec.cls = ObsClass::R4;
  else throw config_error("unknown observable class '" + head + "'");
  try {
    spec.tau = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw config_error("observable '" + text + "' has a malformed tau");
  }
  check_class_range(spec);
  return spec;
}

// Interval observables: coord | sin2pi | cos2pi | R<k>:<tau>@<anchor>.
// Radial fixtures evaluate the class modulus at the distance from the anchor.
BaseObservable parse_base_observable(const std::string& text) {
  if (text == "coord") return [](double, double x) { return x; };
  if (text == "sin2pi") return [](double, double x) { return std::sin(8.0 * std::atan(1.0) * x); };
  if (text == "cos2pi") return [](double, double x) { return std::cos(8.0 * std::atan(1.0) * x); };
  const auto at = text.find('@');
  if (at == std::string::npos)
    throw config_error("interval observable '" + text +
                       "' wants coord, sin2pi, cos2pi, or CLASS:TAU@ANCHOR");
  const ClassSpec spec = parse_class(text.substr(0, at));
  if (is_v_class(spec.cls))
    throw config_error("variation classes have no pointwise interval realization; use an R class");
  double anchor = 0;
  try {
    anchor = std::stod(text.substr(at + 1));
  } catch (const std::exception&) {
    throw config_error("observable '" + text + "' has a malformed anchor");
  }
  return [spec, anchor](double, double x) { return radial_template(spec, std::abs(x - anchor)); };
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == ':' || c == '@') out += '-';
    else if (c == '.') out += 'p';
    else out += c;
  }
  return out;
}

void write_csv(const std::string& dir, const std::string& name, const Config& cfg,
               const std::vector<std::string>& cols, const std::vector<std::vector<double>>& rows) {
  const std::string path = dir + "/" + name + ".csv";
  write_text_file(path, csv_table(cfg, cols, rows));
  std::cout << "wrote " << path << "\n";
}

void write_json(const std::string& dir, const std::string& name, const Config& cfg, json j) {
  j["version"] = kVersion;
  j["config_digest"] = cfg.digest_hex();
  const std::string path = dir + "/" + name + ".json";
  write_text_file(path, j.dump(2) + "\n");
  std::cout << "wrote " << path << "\n";
}

std::vector<long long> log_grid(long long lo, long long hi, double ratio) {
  std::vector<long long> g;
  double x = static_cast<double>(lo);
  long long last = 0;
  while (x <= static_cast<double>(hi) + 0.5) {
    const long long n = std::llround(x);
    if (n != last && n <= hi) {
      g.push_back(n);
      last = n;
    }
    x = std::max(x * ratio, x + 1.0);
  }
  return g;
}

json fit_to_json(const RateFit& f) {
  return json{{"law", f.law},           {"exponent", f.exponent},
              {"rate", f.rate},         {"tau", f.tau},
              {"constant", f.constant}, {"held_out_rms", f.held_out_rms},
              {"usable", f.usable},     {"window", {f.window_lo, f.window_hi}}};
}

// Decay-speed rank of a fitted law / an envelope kind; the envelope is an
// upper bound, so any strictly faster family passes outright and slopes are
// only compared inside the polynomial family (envelope constants are
// representative, not calibrated).
int law_rank(const std::string& law) {
  if (law == "polynomial" || law == "poly-log") return 0;
  if (law == "log-power") return 1;
  if (law == "stretched-exp") return 2;
  return 3;  // exponential
}
int envelope_rank(RateEnvelope::Kind k) {
  switch (k) {
    case RateEnvelope::Kind::poly:
    case RateEnvelope::Kind::poly_log: return 0;
    case RateEnvelope::Kind::exp_log_power: return 1;
    case RateEnvelope::Kind::exp_stretched: return 2;
    default: return 3;
  }
}

bool envelope_verdict(const RateFit& fit, const RateEnvelope& env, double tol) {
  const int fr = law_rank(fit.law);
  const int er = envelope_rank(env.kind);
  if (fr > er) return true;
  if (fr < er) return false;
  if (fr == 0) return std::abs(fit.exponent - env.exponent) <= tol;
  return true;
}

// ---------------------------------------------------------------- check-wgm

struct CheckOptions {
  std::string model, out = ".";
  int depth = 4, horizon = 64;
};

int run_check(const CheckOptions& o) {
  const auto m = load_model(o.model);
  const auto& sym = to_symbolic(m);
  sym.validate();
  const auto gibbs = check_gibbs(sym, o.depth);
  const double nonsing = check_nonsingularity(sym, o.depth);
  const auto aper = check_aperiodicity(sym, o.horizon);
  const auto block = check_coprime_block(sym);
  std::cout << "model " << sym.name << ": " << sym.n_symbols << " symbols, kac mean "
            << format_double(sym.kac_mean()) << "\n";
  std::cout << "gibbs (depth " << o.depth << "): " << (gibbs.passed ? "PASS" : "FAIL")
            << " tight constant " << format_double(gibbs.tight_constant) << " over "
            << gibbs.pairs_checked << " pairs\n";
  std::cout << "nonsingularity: worst relative error " << format_double(nonsing) << "\n";
  std::cout << "aperiodicity: " << (aper.aperiodic ? "PASS" : "FAIL") << " k0 " << aper.k0
            << "\n";
  std::cout << "coprime block: " << (block.found ? "PASS" : "FAIL");
  if (block.found) {
    std::cout << " {";
    for (std::size_t i = 0; i < block.symbols.size(); ++i)
      std::cout << (i ? "," : "") << block.symbols[i];
    std::cout << "}";
  }
  std::cout << "\n";
  std::cout << "min image mass " << format_double(sym.min_image_mass()) << ", declared floor "
            << format_double(sym.delta0) << "\n";

  Config cfg;
  cfg.set("command", "check-wgm");
  cfg.set("model", o.model);
  cfg.set("depth", std::to_string(o.depth));
  cfg.set("horizon", std::to_string(o.horizon));
  json j{{"model", sym.name},
         {"symbols", sym.n_symbols},
         {"kac_mean", sym.kac_mean()},
         {"gibbs_passed", gibbs.passed},
         {"gibbs_tight_constant", gibbs.tight_constant},
         {"nonsingularity_error", nonsing},
         {"aperiodic", aper.aperiodic},
         {"k0", aper.k0},
         {"coprime_block_found", block.found},
         {"min_image_mass", sym.min_image_mass()},
         {"delta0", sym.delta0}};
  write_json(o.out, "check-" + sanitize(o.model), cfg, j);
  if (!gibbs.passed) throw hypothesis_error("Gibbs distortion bound violated at depth " +
                                            std::to_string(o.depth));
  if (nonsing > 1e-8) throw hypothesis_error("branch Jacobians are inconsistent with the masses");
  if (!aper.aperiodic) throw hypothesis_error("transition matrix is not aperiodic");
  if (!block.found) throw hypothesis_error("no coprime full block exists");
  return 0;
}

// --------------------------------------------------------------- build-tower

struct TowerOptions {
  std::string model, out = ".";
  int depth = 1, height_cap = 0;
  double tail_tol = 0;
};

int run_tower(const TowerOptions& o) {
  const auto m = load_model(o.model);
  const auto& sym = to_symbolic(m);
  int max_r = 0;
  for (int r : sym.return_time) max_r = std::max(max_r, r);
  const int cap = o.height_cap > 0 ? o.height_cap : max_r;
  const auto t = build_tower(sym, o.depth, cap, o.tail_tol);
  int levels = 0;
  for (std::int32_t c = 0; c < t.n_cells(); ++c) levels = std::max(levels, t.level_of(c) + 1);
  std::vector<std::vector<double>> rows;
  for (int l = 0; l < levels; ++l) {
    double cells = 0, mass = 0;
    for (std::int32_t c = 0; c < t.n_cells(); ++c)
      if (t.level_of(c) == l) {
        cells += 1;
        mass += t.cell_mass(c);
      }
    rows.push_back({static_cast<double>(l), cells, mass});
  }
  std::cout << "tower on " << sym.name << ": depth " << o.depth << ", " << t.n_cells()
            << " cells, " << levels << " levels, kac mean " << format_double(sym.kac_mean())
            << "\n";
  Config cfg;
  cfg.set("command", "build-tower");
  cfg.set("model", o.model);
  cfg.set("depth", std::to_string(o.depth));
  cfg.set("height_cap", std::to_string(cap));
  cfg.set("tail_tol", format_double(o.tail_tol));
  write_csv(o.out, "tower-" + sanitize(o.model), cfg, {"level", "cells", "mass"}, rows);
  return 0;
}

// --------------------------------------------------------------------- tails

struct TailsOptions {
  std::string model, out = ".";
  long long n_max = 64;
  long long samples = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  long long fit_lo = 100, fit_hi = 10000;
};

int run_tails(const TailsOptions& o) {
  const auto m = load_model(o.model);
  Config cfg;
  cfg.set("command", "tails");
  cfg.set("model", o.model);
  cfg.set("n_max", std::to_string(o.n_max));

  if (m.kind == ModelRef::Kind::symbolic) {
    int max_r = 0;
    for (int r : m.sym.return_time) max_r = std::max(max_r, r);
    const auto t = build_tower(m.sym, 1, max_r, 0.0);
    const auto tail = hat_return_tail(t, static_cast<int>(o.n_max));
    std::vector<std::vector<double>> rows;
    for (std::size_t n = 0; n < tail.size(); ++n)
      rows.push_back({static_cast<double>(n), tail[n]});
    std::cout << "exact return tail on " << m.sym.name << ", " << rows.size() << " rows\n";
    write_csv(o.out, "tails-" + sanitize(o.model), cfg, {"n", "survival"}, rows);
    return 0;
  }

  if (m.kind == ModelRef::Kind::pm_const) {
    const PmConstMap pm{m.alpha};
    const auto cells = return_partition(pm, static_cast<int>(o.n_max) + 1);
    std::vector<double> surv(static_cast<std::size_t>(o.n_max) + 1, 0.0);
    double tail = 1.0;
    std::size_t idx = 0;
    for (long long n = 0; n <= o.n_max; ++n) {
      while (idx < cells.size() && cells[idx].r <= n) tail -= cells[idx++].mass;
      surv[static_cast<std::size_t>(n)] = std::max(tail, 0.0);
    }
    std::vector<std::vector<double>> rows;
    for (long long n : log_grid(1, o.n_max, 1.1))
      rows.push_back({static_cast<double>(n), surv[static_cast<std::size_t>(n)]});
    std::vector<double> ns, ss, cw;
    for (const auto& r : rows)
      if (r[0] >= static_cast<double>(o.fit_lo) && r[0] <= static_cast<double>(o.fit_hi) &&
          r[1] > 0) {
        ns.push_back(r[0]);
        ss.push_back(r[1]);
        cw.push_back(1e9 * r[1]);
      }
    std::cout << "exact return tail, alpha " << format_double(m.alpha);
    if (ns.size() >= 3) {
      const auto f = fit_power_tail(ns, ss, cw);
      std::cout << ", fitted slope " << format_double(f.slope) << " over [" << o.fit_lo << ", "
                << o.fit_hi << "]";
    }
    std::cout << "\n";
    write_csv(o.out, "tails-" + sanitize(o.model), cfg, {"n", "survival"}, rows);
    return 0;
  }

  // skew product: Monte Carlo over the reference measure on the base
  if (o.samples <= 0) throw config_error("interval tails sample orbits; pass --samples");
  if (!o.seed_given) throw config_error("interval tails sample orbits; pass --seed");
  cfg.set("samples", std::to_string(o.samples));
  cfg.set("seed", std::to_string(o.seed));
  const auto s = to_skew(m);
  const auto grid = log_grid(1, o.n_max, 1.1);
  std::vector<long long> beyond(grid.size(), 0);
  long long censored = 0;
  const long long cap = 8 * o.n_max;
  for_each_chunk(o.samples, o.seed, [&](long long b, long long e, Rng& rng) {
    for (long long i = b; i < e; ++i) {
      const double theta = rng.uniform();
      const double x = 0.5 + 0.5 * rng.uniform();
      const auto ret = induced_return(s, theta, x, cap);
      const long long r = ret.censored ? cap : ret.r;
      censored += ret.censored ? 1 : 0;
      for (std::size_t g = 0; g < grid.size(); ++g)
        if (r > grid[g]) ++beyond[g];
    }
  });
  std::vector<std::vector<double>> rows;
  std::vector<double> ns, ss, cw;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double p = static_cast<double>(beyond[g]) / static_cast<double>(o.samples);
    double lo = 0, hi = 1;
    wilson_band(beyond[g], o.samples, 2.0, lo, hi);
    rows.push_back({static_cast<double>(grid[g]), p, lo, hi});
    if (grid[g] >= o.fit_lo && grid[g] <= o.fit_hi && beyond[g] > 0) {
      ns.push_back(static_cast<double>(grid[g]));
      ss.push_back(p);
      cw.push_back(static_cast<double>(beyond[g]));
    }
  }
  std::cout << "sampled return tail, " << o.samples << " samples, censored fraction "
            << format_double(static_cast<double>(censored) / static_cast<double>(o.samples));
  json j{{"samples", o.samples},
         {"censored", censored}};
  if (ns.size() >= 3) {
    const auto f = fit_power_tail(ns, ss, cw);
    std::cout << ", fitted slope " << format_double(f.slope) << " over [" << o.fit_lo << ", "
              << o.fit_hi << "]";
    j["slope"] = f.slope;
    j["slope_rms"] = f.rms;
    j["fit_window"] = {o.fit_lo, o.fit_hi};
  }
  std::cout << "\n";
  write_csv(o.out, "tails-" + sanitize(o.model), cfg, {"n", "survival", "lo", "hi"}, rows);
  write_json(o.out, "tails-" + sanitize(o.model) + "-fit", cfg, j);
  return 0;
}

// ------------------------------------------------------------- correlations

struct CorrOptions {
  std::string model, observable, psi, out = ".";
  int n_max = 20, depth = 2, height_cap = 0;
  long long ensemble = 100000, burn_in = 1000;
  std::uint64_t seed = 0;
  bool exact = false;
};

CorrelationSeries correlation_series(const CorrOptions& o, const ModelRef& m) {
  if (is_interval(m)) {
    if (o.exact) throw config_error("interval maps have no exact correlation route");
    const auto s = to_skew(m);
    const auto phi = parse_base_observable(o.observable);
    const auto psi = parse_base_observable(o.psi.empty() ? o.observable : o.psi);
    CorrelationOptions copt;
    copt.n_max = o.n_max;
    copt.ensemble = o.ensemble;
    copt.burn_in = o.burn_in;
    copt.seed = o.seed;
    return correlation_mc(s, phi, psi, copt);
  }
  const auto b = make_bundle(m.sym, o.depth, o.height_cap);
  const auto spec = parse_class(o.observable);
  const auto phi = make_observable(b.t, spec, o.seed);
  const auto psi = o.psi.empty() ? phi : make_observable(b.t, parse_class(o.psi), o.seed + 1);
  if (o.exact) return exact_correlation(b.t, b.transfer, b.inv, phi, psi, o.n_max);
  CorrelationOptions copt;
  copt.n_max = o.n_max;
  copt.ensemble = o.ensemble;
  copt.seed = o.seed;
  return correlation_mc(b.t, b.chain, b.law, phi, psi, copt);
}

Config corr_config(const char* command, const CorrOptions& o) {
  Config cfg;
  cfg.set("command", command);
  cfg.set("model", o.model);
  cfg.set("observable", o.observable);
  if (!o.psi.empty()) cfg.set("psi", o.psi);
  cfg.set("n_max", std::to_string(o.n_max));
  cfg.set("seed", std::to_string(o.seed));
  if (o.exact) {
    cfg.set("route", "exact");
    cfg.set("depth", std::to_string(o.depth));
  } else {
    cfg.set("ensemble", std::to_string(o.ensemble));
  }
  return cfg;
}

int run_correlations(const CorrOptions& o) {
  const auto m = load_model(o.model);
  const auto s = correlation_series(o, m);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < s.n.size(); ++i)
    rows.push_back({static_cast<double>(s.n[i]), s.corr[i], s.err[i]});
  std::cout << (s.exact ? "exact" : "sampled") << " correlations, n <= " << o.n_max << "\n";
  write_csv(o.out,
            "correlations-" + sanitize(o.model) + "-" + sanitize(o.observable) +
                (o.exact ? "-exact" : ""),
            corr_config("correlations", o), {"n", "estimate", "stderr"}, rows);
  return 0;
}

// ------------------------------------------------------------------ fit-rate

struct FitOptions {
  CorrOptions corr;
  std::string tail;  // "", "poly:A", "exp:RATE"
  double zeta = 1.0, tol = 0.35;
};

int run_fit(const FitOptions& o) {
  const auto m = load_model(o.corr.model);
  const auto s = correlation_series(o.corr, m);
  const auto fit = fit_rate(s);
  std::cout << "fitted law " << fit.law << ", exponent " << format_double(fit.exponent)
            << ", rate " << format_double(fit.rate) << ", tau " << format_double(fit.tau)
            << ", usable " << fit.usable << " points on [" << fit.window_lo << ", "
            << fit.window_hi << "]\n";
  auto cfg = corr_config("fit-rate", o.corr);
  json j = fit_to_json(fit);
  int status = 0;
  if (!o.tail.empty()) {
    const auto colon = o.tail.find(':');
    if (colon == std::string::npos)
      throw config_error("--tail wants poly:EXPONENT or exp:RATE");
    const std::string kind = o.tail.substr(0, colon);
    double a = 0;
    try {
      a = std::stod(o.tail.substr(colon + 1));
    } catch (const std::exception&) {
      throw config_error("--tail has a malformed parameter");
    }
    TailModel::Kind tk;
    if (kind == "poly") tk = TailModel::Kind::poly;
    else if (kind == "exp") tk = TailModel::Kind::exponential;
    else throw config_error("--tail wants poly:EXPONENT or exp:RATE");
    const auto spec = parse_class(o.corr.observable.substr(0, o.corr.observable.find('@')));
    const auto env = rate_envelope(tk, a, spec.cls, spec.tau, o.zeta);
    const bool pass = envelope_verdict(fit, env, o.tol);
    std::cout << "envelope " << env.label() << ": " << (pass ? "PASS" : "FAIL") << "\n";
    cfg.set("tail", o.tail);
    cfg.set("zeta", format_double(o.zeta));
    j["envelope"] = {{"kind", env.label()},
                     {"exponent", env.exponent},
                     {"rate", env.rate},
                     {"tau_prime", env.tau_prime}};
    j["verdict"] = pass ? "PASS" : "FAIL";
    if (!pass) status = 1;
  }
  write_json(o.corr.out, "fit-" + sanitize(o.corr.model) + "-" + sanitize(o.corr.observable),
             cfg, j);
  return status;
}

// ----------------------------------------------------------------------- clt

struct CltOptions {
  std::string model, observable, out = ".";
  long long n = 10000, ensemble = 10000, burn_in = 1000;
  int depth = 2, height_cap = 0;
  std::uint64_t seed = 0;
};

int run_clt(const CltOptions& o) {
  const auto m = load_model(o.model);
  CltReport rep;
  if (is_interval(m)) {
    rep = clt_experiment(to_skew(m), parse_base_observable(o.observable), o.n, o.ensemble,
                         o.seed, o.burn_in);
  } else {
    const auto b = make_bundle(m.sym, o.depth, o.height_cap);
    const auto phi = make_observable(b.t, parse_class(o.observable), o.seed);
    rep = clt_experiment(b.t, b.chain, b.law, phi, o.n, o.ensemble, o.seed);
  }
  std::cout << "sigma2 " << format_double(rep.sigma2) << " (cutoff " << rep.cutoff << "), ks "
            << format_double(rep.ks) << (rep.degenerate ? ", degenerate variance" : "") << "\n";
  Config cfg;
  cfg.set("command", "clt");
  cfg.set("model", o.model);
  cfg.set("observable", o.observable);
  cfg.set("n", std::to_string(o.n));
  cfg.set("ensemble", std::to_string(o.ensemble));
  cfg.set("seed", std::to_string(o.seed));
  write_json(o.out, "clt-" + sanitize(o.model) + "-" + sanitize(o.observable), cfg,
             json{{"sigma2", rep.sigma2},
                  {"sigma2_err", rep.sigma2_err},
                  {"cutoff", rep.cutoff},
                  {"cutoff_saturated", rep.cutoff_saturated},
                  {"ks", rep.ks},
                  {"mean", rep.mean},
                  {"degenerate", rep.degenerate},
                  {"n", rep.n},
                  {"ensemble", rep.ensemble}});
  return 0;
}

// ------------------------------------------------------------------------ ld

struct LdCliOptions {
  std::string model, observable, out = ".";
  double eps = 0.1;
  long long ensemble = 20000, burn_in = 1000, n_max = 512;
  int depth = 2, height_cap = 0;
  std::uint64_t seed = 0;
};

int run_ld(const LdCliOptions& o) {
  const auto m = load_model(o.model);
  LdOptions lo;
  lo.eps = o.eps;
  for (long long n = 2; n <= o.n_max; n *= 2) lo.n_grid.push_back(n);
  lo.ensemble = o.ensemble;
  lo.burn_in = o.burn_in;
  lo.seed = o.seed;
  LdReport rep;
  if (is_interval(m)) {
    rep = ld_experiment(to_skew(m), parse_base_observable(o.observable), lo);
  } else {
    const auto b = make_bundle(m.sym, o.depth, o.height_cap);
    const auto phi = make_observable(b.t, parse_class(o.observable), o.seed);
    rep = ld_experiment(b.t, b.chain, b.law, phi, lo);
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.n_grid.size(); ++i)
    rows.push_back({static_cast<double>(rep.n_grid[i]), rep.ld[i], rep.lo[i], rep.hi[i],
                    static_cast<double>(rep.hits[i])});
  std::cout << "ld at eps " << format_double(o.eps) << (rep.one_sided ? ", one-sided points" : "");
  if (rep.fitted)
    std::cout << ", fitted " << rep.fit.law << " exponent " << format_double(rep.fit.exponent);
  std::cout << "\n";
  Config cfg;
  cfg.set("command", "ld");
  cfg.set("model", o.model);
  cfg.set("observable", o.observable);
  cfg.set("eps", format_double(o.eps));
  cfg.set("ensemble", std::to_string(o.ensemble));
  cfg.set("n_max", std::to_string(o.n_max));
  cfg.set("seed", std::to_string(o.seed));
  write_csv(o.out, "ld-" + sanitize(o.model) + "-" + sanitize(o.observable), cfg,
            {"n", "ld", "lo", "hi", "hits"}, rows);
  json j{{"mean", rep.mean}, {"one_sided", rep.one_sided}, {"fitted", rep.fitted}};
  if (rep.fitted) j["fit"] = fit_to_json(rep.fit);
  write_json(o.out, "ld-" + sanitize(o.model) + "-" + sanitize(o.observable) + "-fit", cfg, j);
  return 0;
}

// --------------------------------------------------------------- coupling-sim

struct CouplingCliOptions {
  std::string model, observable = "V1:0.5", delta_bar = "auto", out = ".";
  int depth = 2, height_cap = 0, n_max = 200, i_max = 50, horizon = 64;
  long long samples = 200000;
  std::uint64_t seed = 0;
};

int run_coupling_sim(const CouplingCliOptions& o) {
  const auto m = load_model(o.model);
  const auto b = make_bundle(to_symbolic(m), o.depth, o.height_cap);
  const auto spec = parse_class(o.observable);
  const auto star = normalize_star(b.t, b.inv, make_observable(b.t, spec, o.seed));
  std::vector<double> phi1(b.inv.rho.size());
  for (std::size_t i = 0; i < phi1.size(); ++i) phi1[i] = star.values[i] * b.inv.rho[i];
  const auto p = make_product_model(b.t, phi1, b.inv.rho, o.horizon);
  CouplingOptions copt;
  copt.horizon = o.horizon;
  copt.n_max = o.n_max;
  copt.i_max = o.i_max;
  copt.samples = o.samples;
  copt.seed = o.seed;
  if (o.delta_bar != "auto") {
    try {
      copt.delta_bar = std::stod(o.delta_bar);
    } catch (const std::exception&) {
      throw config_error("--delta-bar wants a number or 'auto'");
    }
  }
  const auto rep = run_coupling(p, copt);
  std::cout << "coupling on " << b.t.base.name << ": n0 " << rep.n0 << ", gamma0 "
            << format_double(rep.gamma0) << ", zeta " << format_double(rep.zeta)
            << ", tv dominated " << (rep.tv_dominated ? "yes" : "no") << "\n";
  Config cfg;
  cfg.set("command", "coupling-sim");
  cfg.set("model", o.model);
  cfg.set("observable", o.observable);
  cfg.set("samples", std::to_string(o.samples));
  cfg.set("delta_bar", o.delta_bar);
  cfg.set("seed", std::to_string(o.seed));
  json s_tail{{"kind", rep.s_tail.model.kind == TailModel::Kind::poly
                           ? "poly"
                           : (rep.s_tail.model.kind == TailModel::Kind::exponential ? "exponential"
                                                                                    : "exact")},
              {"exponent", rep.s_tail.model.exponent},
              {"rate", rep.s_tail.model.rate},
              {"poly_rms", rep.s_tail.poly_fit.rms},
              {"exp_rms", rep.s_tail.exp_rate_rms},
              {"censored_fraction", rep.s_tail.censored_fraction},
              {"widened", rep.s_tail.widened}};
  write_json(o.out, "coupling-" + sanitize(o.model), cfg,
             json{{"n0", rep.n0},
                  {"gamma0", rep.gamma0},
                  {"eps0_min", rep.eps0_min},
                  {"D1", rep.d1},
                  {"D2", rep.d2},
                  {"D3", rep.d3},
                  {"D4", rep.d4},
                  {"D5", rep.d5},
                  {"zeta", rep.zeta},
                  {"delta_bar", rep.delta_bar},
                  {"S_tail_fit", s_tail},
                  {"bound_curve", rep.bound_curve},
                  {"tv_curve", rep.tv_curve},
                  {"tv_dominated", rep.tv_dominated}});
  return 0;
}

// ----------------------------------------------------------- verify-theorem-a

struct VerifyOptions {
  std::string model = "oracle-o1", classes = "V1:0.5,V2:0.5,V3:2,V4:3", out = ".";
  int n_max = 40, depth = 2, height_cap = 0;
  double zeta = 1.0, tol = 0.35;
  std::uint64_t seed = 0;
};

int run_verify(const VerifyOptions& o) {
  const auto m = load_model(o.model);
  const auto b = make_bundle(to_symbolic(m), o.depth, o.height_cap);

  // exact hat-return tail has bounded support on the oracles; its log-linear
  // decay rate parameterizes the exponential-tail envelopes
  const auto tail = hat_return_tail(b.t, b.t.max_return + 1);
  double rate = 1.0;
  {
    std::vector<double> xs, ys;
    for (std::size_t n = 0; n < tail.size(); ++n)
      if (tail[n] > 0) {
        xs.push_back(static_cast<double>(n));
        ys.push_back(std::log(tail[n]));
      }
    if (xs.size() >= 2) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
      }
      const double nn = static_cast<double>(xs.size());
      rate = -(nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    }
  }

  Config cfg;
  cfg.set("command", "verify-theorem-a");
  cfg.set("model", o.model);
  cfg.set("classes", o.classes);
  cfg.set("n_max", std::to_string(o.n_max));
  cfg.set("depth", std::to_string(o.depth));
  cfg.set("zeta", format_double(o.zeta));
  cfg.set("seed", std::to_string(o.seed));

  std::vector<std::string> names;
  {
    std::stringstream ss(o.classes);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) names.push_back(item);
    }
  }
  if (names.empty()) throw config_error("verify-theorem-a wants at least one observable class");

  bool all_pass = true;
  std::vector<std::vector<double>> verdict_rows;
  std::cout << "class      law             value      envelope        verdict\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto spec = parse_class(names[k]);
    if (!is_v_class(spec.cls))
      throw config_error("verify-theorem-a compares tower classes; '" + names[k] +
                         "' is a radial class");
    const auto phi = make_observable(b.t, spec, o.seed + k);
    const auto series = exact_correlation(b.t, b.transfer, b.inv, phi, phi, o.n_max);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < series.n.size(); ++i)
      rows.push_back({static_cast<double>(series.n[i]), series.corr[i], series.err[i]});
    write_csv(o.out, "verify-" + sanitize(o.model) + "-" + sanitize(names[k]), cfg,
              {"n", "estimate", "stderr"}, rows);
    const auto fit = fit_rate(series);
    const auto env = rate_envelope(TailModel::Kind::exponential, rate, spec.cls, spec.tau, o.zeta);
    const bool pass = envelope_verdict(fit, env, o.tol);
    all_pass = all_pass && pass;
    const double value = law_rank(fit.law) == 0 ? fit.exponent : fit.rate;
    std::printf("%-10s %-15s %-10.4g %-15s %s\n", names[k].c_str(), fit.law.c_str(), value,
                env.label(), pass ? "PASS" : "FAIL");
    verdict_rows.push_back({static_cast<double>(static_cast<int>(spec.cls)), spec.tau,
                            static_cast<double>(law_rank(fit.law)), value,
                            static_cast<double>(envelope_rank(env.kind)), pass ? 1.0 : 0.0});
  }
  write_csv(o.out, "verify-" + sanitize(o.model) + "-verdicts", cfg,
            {"class_id", "tau", "law_rank", "value", "envelope_rank", "pass"}, verdict_rows);
  std::cout << (all_pass ? "all rows PASS" : "some rows FAIL") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"laboratory for induced weak Gibbs Markov maps"};
  app.require_subcommand(1);

  CheckOptions check;
  auto* c1 = app.add_subcommand("check-wgm", "verify the structural axioms of a symbolic model");
  c1->add_option("--model", check.model, "catalog id or config file")->required();
  c1->add_option("--depth", check.depth, "refinement depth for the distortion check");
  c1->add_option("--horizon", check.horizon, "aperiodicity horizon");
  c1->add_option("--out", check.out, "output directory");

  TowerOptions tower;
  auto* c2 = app.add_subcommand("build-tower", "build the tower refinement and report its shape");
  c2->add_option("--model", tower.model, "catalog id or config file")->required();
  c2->add_option("--depth", tower.depth, "word depth");
  c2->add_option("--height-cap", tower.height_cap, "level cap (0 = highest return)");
  c2->add_option("--tail-tol", tower.tail_tol, "allowed truncated mass");
  c2->add_option("--out", tower.out, "output directory");

  TailsOptions tails;
  auto* c3 = app.add_subcommand("tails", "return-time survival curve (exact or sampled)");
  c3->add_option("--model", tails.model, "catalog id, pm-const-A, or skew-default")->required();
  c3->add_option("--n-max", tails.n_max, "largest n");
  c3->add_option("--samples", tails.samples, "Monte Carlo samples (interval models)");
  auto* tseed = c3->add_option("--seed", tails.seed, "root seed (interval models)");
  c3->add_option("--fit-lo", tails.fit_lo, "slope fit window start");
  c3->add_option("--fit-hi", tails.fit_hi, "slope fit window end");
  c3->add_option("--out", tails.out, "output directory");

  CorrOptions corr;
  auto* c4 = app.add_subcommand("correlations", "correlation decay series");
  c4->add_option("--model", corr.model, "model name")->required();
  c4->add_option("--observable", corr.observable, "V-class (towers) or interval observable")
      ->required();
  c4->add_option("--psi", corr.psi, "second factor (defaults to the first)");
  c4->add_option("--n-max", corr.n_max, "largest lag");
  c4->add_option("--ensemble", corr.ensemble, "Monte Carlo orbits");
  c4->add_option("--burn-in", corr.burn_in, "burn-in steps (interval models)");
  c4->add_option("--depth", corr.depth, "tower depth (symbolic models)");
  c4->add_option("--height-cap", corr.height_cap, "tower level cap (0 = auto)");
  c4->add_flag("--exact", corr.exact, "transfer-matrix route instead of Monte Carlo");
  c4->add_option("--seed", corr.seed, "root seed")->required();
  c4->add_option("--out", corr.out, "output directory");

  FitOptions fit;
  auto* c5 = app.add_subcommand("fit-rate", "fit a decay law to the correlation series");
  c5->add_option("--model", fit.corr.model, "model name")->required();
  c5->add_option("--observable", fit.corr.observable, "observable spec")->required();
  c5->add_option("--psi", fit.corr.psi, "second factor");
  c5->add_option("--n-max", fit.corr.n_max, "largest lag");
  c5->add_option("--ensemble", fit.corr.ensemble, "Monte Carlo orbits");
  c5->add_option("--burn-in", fit.corr.burn_in, "burn-in steps (interval models)");
  c5->add_option("--depth", fit.corr.depth, "tower depth");
  c5->add_option("--height-cap", fit.corr.height_cap, "tower level cap");
  c5->add_flag("--exact", fit.corr.exact, "transfer-matrix route");
  c5->add_option("--seed", fit.corr.seed, "root seed")->required();
  c5->add_option("--tail", fit.tail, "envelope tail: poly:A or exp:RATE");
  c5->add_option("--zeta", fit.zeta, "envelope zeta");
  c5->add_option("--tol", fit.tol, "polynomial slope tolerance");
  c5->add_option("--out", fit.corr.out, "output directory");

  CltOptions clt;
  auto* c6 = app.add_subcommand("clt", "normalized Birkhoff sums against the fitted Gaussian");
  c6->add_option("--model", clt.model, "model name")->required();
  c6->add_option("--observable", clt.observable, "observable spec")->required();
  c6->add_option("--n", clt.n, "Birkhoff sum length");
  c6->add_option("--ensemble", clt.ensemble, "independent orbits");
  c6->add_option("--burn-in", clt.burn_in, "burn-in steps (interval models)");
  c6->add_option("--depth", clt.depth, "tower depth");
  c6->add_option("--height-cap", clt.height_cap, "tower level cap");
  c6->add_option("--seed", clt.seed, "root seed")->required();
  c6->add_option("--out", clt.out, "output directory");

  LdCliOptions ld;
  auto* c7 = app.add_subcommand("ld", "large-deviation exceedance curve");
  c7->add_option("--model", ld.model, "model name")->required();
  c7->add_option("--observable", ld.observable, "observable spec")->required();
  c7->add_option("--eps", ld.eps, "deviation threshold");
  c7->add_option("--ensemble", ld.ensemble, "orbits per grid point");
  c7->add_option("--burn-in", ld.burn_in, "burn-in steps (interval models)");
  c7->add_option("--n-max", ld.n_max, "largest n (doubling grid from 2)");
  c7->add_option("--depth", ld.depth, "tower depth");
  c7->add_option("--height-cap", ld.height_cap, "tower level cap");
  c7->add_option("--seed", ld.seed, "root seed")->required();
  c7->add_option("--out", ld.out, "output directory");

  CouplingCliOptions coup;
  auto* c8 = app.add_subcommand("coupling-sim", "full coupling pipeline on a product model");
  c8->add_option("--model", coup.model, "symbolic model name")->required();
  c8->add_option("--observable", coup.observable, "V-class seeding the perturbed density");
  c8->add_option("--samples", coup.samples, "Monte Carlo samples");
  c8->add_option("--delta-bar", coup.delta_bar, "splitting share in (0,1/2], or 'auto'");
  c8->add_option("--depth", coup.depth, "tower depth");
  c8->add_option("--height-cap", coup.height_cap, "tower level cap");
  c8->add_option("--n-max", coup.n_max, "bound curve length");
  c8->add_option("--i-max", coup.i_max, "recursion steps");
  c8->add_option("--horizon", coup.horizon, "law horizon");
  c8->add_option("--seed", coup.seed, "root seed")->required();
  c8->add_option("--out", coup.out, "output directory");

  VerifyOptions verify;
  auto* c9 = app.add_subcommand(
      "verify-theorem-a", "exact correlations + rate fit + envelope verdict per class");
  c9->add_option("--model", verify.model, "symbolic model name");
  c9->add_option("--classes", verify.classes, "comma list of V-class specs");
  c9->add_option("--n-max", verify.n_max, "largest lag");
  c9->add_option("--depth", verify.depth, "tower depth");
  c9->add_option("--height-cap", verify.height_cap, "tower level cap");
  c9->add_option("--zeta", verify.zeta, "envelope zeta");
  c9->add_option("--tol", verify.tol, "polynomial slope tolerance");
  c9->add_option("--seed", verify.seed, "fixture seed")->required();
  c9->add_option("--out", verify.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c1->parsed()) return run_check(check);
    if (c2->parsed()) return run_tower(tower);
    if (c3->parsed()) {
      tails.seed_given = tseed->count() > 0;
      return run_tails(tails);
    }
    if (c4->parsed()) return run_correlations(corr);
    if (c5->parsed()) return run_fit(fit);
    if (c6->parsed()) return run_clt(clt);
    if (c7->parsed()) return run_ld(ld);
    if (c8->parsed()) return run_coupling_sim(coup);
    if (c9->parsed()) return run_verify(verify);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hypothesis_error& e) {
    std::cerr << "hypothesis failure: " << e.what() << "\n";
    return 3;
  } catch (const numerical_error& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
