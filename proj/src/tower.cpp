#include "wgm/tower.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "wgm/errors.hpp"

namespace wgm {

void Csr::apply(const std::vector<double>& x, std::vector<double>& out) const {
  out.assign(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = 0;
    for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) acc += val[k] * x[col[k]];
    out[r] = acc;
  }
}

void Csr::apply_transpose(const std::vector<double>& x, std::vector<double>& out) const {
  out.assign(cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) out[col[k]] += val[k] * x[r];
}

std::int32_t TowerModel::cell_index(std::int32_t level, std::int32_t word_id) const {
  if (level < 0 || level > height_cap) return -1;
  return lookup_[static_cast<size_t>(level) * words.size() + word_id];
}

TowerModel build_tower(const SymbolicModel& base, int depth, int height_cap, double tail_tol) {
  if (depth < 1) throw config_error("tower depth must be >= 1");
  if (height_cap < 0) throw config_error("tower height cap must be >= 0");
  base.validate();
  TowerModel t;
  t.base = base;
  t.depth = depth;
  t.height_cap = height_cap;
  t.words = base.enumerate_words(depth);
  t.word_mass.reserve(t.words.size());
  for (const auto& w : t.words) t.word_mass.push_back(base.word_mass(w));
  t.max_return = *std::max_element(base.return_time.begin(), base.return_time.end());

  const int top_level = std::min(height_cap, t.max_return - 1);
  for (int l = 0; l <= top_level; ++l) {
    double lm = 0;
    for (std::int32_t s = 0; s < base.n_symbols; ++s)
      if (base.return_time[s] > l) lm += base.element_mass[s];
    t.level_mass.push_back(lm);
    t.total_mass += lm;
  }
  for (int l = height_cap + 1; l < t.max_return; ++l) {
    for (std::int32_t s = 0; s < base.n_symbols; ++s)
      if (base.return_time[s] > l) t.truncated_mass += base.element_mass[s];
  }
  if (t.truncated_mass > tail_tol)
    throw numerical_error("tower truncation drops mass " + std::to_string(t.truncated_mass) +
                          " > tolerance " + std::to_string(tail_tol) +
                          "; raise the height cap");

  t.lookup_.assign(static_cast<size_t>(top_level + 1) * t.words.size(), -1);
  for (std::int32_t l = 0; l <= top_level; ++l)
    for (std::int32_t w = 0; w < t.n_words(); ++w)
      if (base.return_time[t.words[w][0]] > l) {
        t.lookup_[static_cast<size_t>(l) * t.words.size() + w] = t.n_cells();
        t.cells.push_back({l, w});
      }
  return t;
}

namespace {

std::int32_t word_index(const TowerModel& t, const Word& w) {
  auto it = std::lower_bound(t.words.begin(), t.words.end(), w);
  if (it == t.words.end() || *it != w)
    throw numerical_error("tower: inadmissible word produced by a drop");
  return static_cast<std::int32_t>(it - t.words.begin());
}

Csr from_buckets(std::vector<std::vector<std::pair<std::int32_t, double>>>& rows, int n_cols) {
  Csr m;
  m.rows = static_cast<int>(rows.size());
  m.cols = n_cols;
  m.row_ptr.assign(m.rows + 1, 0);
  for (int r = 0; r < m.rows; ++r) m.row_ptr[r + 1] = m.row_ptr[r] + rows[r].size();
  m.col.reserve(m.row_ptr[m.rows]);
  m.val.reserve(m.row_ptr[m.rows]);
  for (auto& row : rows)
    for (auto& [c, v] : row) {
      m.col.push_back(c);
      m.val.push_back(v);
    }
  return m;
}

}  // namespace

Csr build_transfer(const TowerModel& t) {
  std::vector<std::vector<std::pair<std::int32_t, double>>> rows(t.n_cells());
  for (std::int32_t c = 0; c < t.n_cells(); ++c) {
    const auto& w = t.word_of(c);
    if (t.is_top(c)) {
      Word u(w.begin() + 1, w.end());
      u.push_back(0);
      Word extended = w;
      extended.push_back(0);
      for (auto j : t.base.images[w.back()]) {
        u.back() = j;
        extended.back() = j;
        std::int32_t target = t.cell_index(0, word_index(t, u));
        rows[target].push_back({c, 1.0 / t.base.branch_jacobian(extended)});
      }
    } else {
      std::int32_t up = t.cell_index(t.level_of(c) + 1, t.cells[c].word_id);
      if (up >= 0) rows[up].push_back({c, 1.0});
      // a missing target means the climb leaves the truncated tower
    }
  }
  return from_buckets(rows, t.n_cells());
}

Csr build_forward_chain(const TowerModel& t) {
  std::vector<std::vector<std::pair<std::int32_t, double>>> rows(t.n_cells());
  for (std::int32_t c = 0; c < t.n_cells(); ++c) {
    const auto& w = t.word_of(c);
    if (t.is_top(c)) {
      Word u(w.begin() + 1, w.end());
      u.push_back(0);
      const auto& img = t.base.images[w.back()];
      const auto& wt = t.base.edge_weight[w.back()];
      for (size_t k = 0; k < img.size(); ++k) {
        u.back() = img[k];
        rows[c].push_back({t.cell_index(0, word_index(t, u)), wt[k]});
      }
    } else {
      std::int32_t up = t.cell_index(t.level_of(c) + 1, t.cells[c].word_id);
      if (up >= 0) rows[c].push_back({up, 1.0});
    }
  }
  return from_buckets(rows, t.n_cells());
}

namespace {

void normalize_mass(const TowerModel& t, std::vector<double>& g) {
  double s = 0;
  for (int c = 0; c < t.n_cells(); ++c) s += g[c] * t.cell_mass(c);
  if (s <= 0) throw numerical_error("invariant density iteration lost positivity");
  for (auto& x : g) x /= s;
}

double fit_log_regularity(const TowerModel& t, const std::vector<double>& rho) {
  double c = 0;
  // cells are level-major, so same-level runs are contiguous
  int lo = 0;
  while (lo < t.n_cells()) {
    int hi = lo;
    while (hi < t.n_cells() && t.level_of(hi) == t.level_of(lo)) ++hi;
    for (int a = lo; a < hi; ++a)
      for (int b = a + 1; b < hi; ++b) {
        int s = separation_time(t.word_of(a), t.word_of(b));
        double r = std::abs(std::log(rho[a] / rho[b]));
        c = std::max(c, r / std::pow(t.base.beta, s));
      }
    lo = hi;
  }
  return c;
}

}  // namespace

InvariantDensity invariant_density(const TowerModel& t, const Csr& transfer, int max_iter,
                                   double tol) {
  InvariantDensity out;
  std::vector<double> g(t.n_cells(), 1.0), h;
  normalize_mass(t, g);
  int it = 0;
  for (; it < max_iter; ++it) {
    transfer.apply(g, h);
    for (int c = 0; c < t.n_cells(); ++c) h[c] = 0.5 * (h[c] + g[c]);
    normalize_mass(t, h);
    double diff = 0;
    for (int c = 0; c < t.n_cells(); ++c) diff += std::abs(h[c] - g[c]) * t.cell_mass(c);
    g.swap(h);
    if (diff < tol) break;
  }
  transfer.apply(g, h);
  double res = 0;
  for (int c = 0; c < t.n_cells(); ++c) res += std::abs(h[c] - g[c]) * t.cell_mass(c);
  out.rho = std::move(g);
  out.residual = res;
  out.iterations = it + 1;
  double mx = 0, mn = std::numeric_limits<double>::infinity();
  for (int c = 0; c < t.n_cells(); ++c) {
    double bar = out.rho[c] * t.total_mass;
    mx = std::max(mx, bar);
    mn = std::min(mn, bar);
  }
  if (mn <= 0) throw numerical_error("invariant density not strictly positive");
  out.c0 = std::max(mx, 1.0 / mn);
  out.log_regularity = fit_log_regularity(t, out.rho);
  return out;
}

DenseSpectrum invariant_density_dense(const TowerModel& t, const Csr& transfer) {
  const int n = t.n_cells();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < n; ++r)
    for (auto k = transfer.row_ptr[r]; k < transfer.row_ptr[r + 1]; ++k)
      m(r, transfer.col[k]) += transfer.val[k];
  Eigen::EigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw numerical_error("dense eigensolve failed");
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (std::abs(es.eigenvalues()[i]) > std::abs(es.eigenvalues()[best])) best = i;
  DenseSpectrum out;
  out.leading_eigenvalue = es.eigenvalues()[best].real();
  out.density.resize(n);
  for (int i = 0; i < n; ++i) out.density[i] = es.eigenvectors().col(best)[i].real();
  double s = 0;
  for (int c = 0; c < n; ++c) s += out.density[c] * t.cell_mass(c);
  if (s < 0)
    for (auto& x : out.density) x = -x;
  normalize_mass(t, out.density);
  return out;
}

std::vector<double> stationary_forward(const TowerModel& t, const Csr& chain, int max_iter,
                                       double tol) {
  std::vector<double> pi(t.n_cells(), 1.0 / t.n_cells()), next;
  for (int it = 0; it < max_iter; ++it) {
    chain.apply_transpose(pi, next);
    double s = 0;
    for (int c = 0; c < t.n_cells(); ++c) {
      next[c] = 0.5 * (next[c] + pi[c]);
      s += next[c];
    }
    for (auto& x : next) x /= s;
    double diff = 0;
    for (int c = 0; c < t.n_cells(); ++c) diff += std::abs(next[c] - pi[c]);
    pi.swap(next);
    if (diff < tol) break;
  }
  return pi;
}

std::vector<double> exact_correlations(const TowerModel& t, const Csr& transfer,
                                       const std::vector<double>& rho,
                                       const std::vector<double>& phi,
                                       const std::vector<double>& psi, int n_max) {
  std::vector<double> g(t.n_cells()), h;
  double iphi = 0, ipsi = 0;
  for (int c = 0; c < t.n_cells(); ++c) {
    g[c] = phi[c] * rho[c];
    iphi += phi[c] * rho[c] * t.cell_mass(c);
    ipsi += psi[c] * rho[c] * t.cell_mass(c);
  }
  std::vector<double> out;
  out.reserve(n_max + 1);
  for (int n = 0; n <= n_max; ++n) {
    double v = 0;
    for (int c = 0; c < t.n_cells(); ++c) v += psi[c] * g[c] * t.cell_mass(c);
    out.push_back(v - iphi * ipsi);
    if (n < n_max) {
      transfer.apply(g, h);
      g.swap(h);
    }
  }
  return out;
}

std::vector<double> exact_correlations_chain(const TowerModel& t, const Csr& chain,
                                             const std::vector<double>& pi,
                                             const std::vector<double>& phi,
                                             const std::vector<double>& psi, int n_max) {
  std::vector<double> h = psi, next;
  double iphi = 0, ipsi = 0;
  for (int c = 0; c < t.n_cells(); ++c) {
    iphi += phi[c] * pi[c];
    ipsi += psi[c] * pi[c];
  }
  std::vector<double> out;
  out.reserve(n_max + 1);
  for (int n = 0; n <= n_max; ++n) {
    double v = 0;
    for (int c = 0; c < t.n_cells(); ++c) v += pi[c] * phi[c] * h[c];
    out.push_back(v - iphi * ipsi);
    if (n < n_max) {
      chain.apply(h, next);
      h.swap(next);
    }
  }
  return out;
}

std::vector<double> hat_return_tail(const TowerModel& t, int n_max) {
  std::vector<double> tail(n_max + 1, 0.0);
  for (int n = 0; n <= n_max; ++n) {
    double s = 0;
    for (size_t l = n + 1; l < t.level_mass.size(); ++l) s += t.level_mass[l];
    tail[n] = s / t.total_mass;
  }
  return tail;
}

std::int32_t sample_categorical(const std::vector<double>& p, Rng& rng) {
  double u = rng.uniform();
  double acc = 0;
  for (size_t k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return static_cast<std::int32_t>(k);
  }
  return static_cast<std::int32_t>(p.size()) - 1;
}

std::int32_t tower_step(const TowerModel& t, const Csr& chain, std::int32_t cell, Rng& rng) {
  auto lo = chain.row_ptr[cell], hi = chain.row_ptr[cell + 1];
  if (lo == hi)
    throw numerical_error("orbit left the truncated tower at level " +
                          std::to_string(t.level_of(cell)));
  if (hi - lo == 1) return chain.col[lo];
  double u = rng.uniform();
  double acc = 0;
  for (auto k = lo; k < hi; ++k) {
    acc += chain.val[k];
    if (u < acc) return chain.col[k];
  }
  return chain.col[hi - 1];
}

}  // namespace wgm
