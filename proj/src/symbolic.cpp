#include "wgm/symbolic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wgm/errors.hpp"

namespace wgm {

void SymbolicModel::validate() const {
  if (n_symbols <= 0) throw hypothesis_error(name + ": empty alphabet");
  auto sz = static_cast<size_t>(n_symbols);
  if (images.size() != sz || return_time.size() != sz || element_mass.size() != sz ||
      edge_weight.size() != sz)
    throw hypothesis_error(name + ": field lengths disagree with alphabet size");
  double total = 0;
  for (std::int32_t i = 0; i < n_symbols; ++i) {
    if (element_mass[i] <= 0) throw hypothesis_error(name + ": element mass must be positive");
    total += element_mass[i];
    if (return_time[i] < 1) throw hypothesis_error(name + ": return time must be >= 1");
    if (images[i].empty())
      throw hypothesis_error(name + ": branch image of symbol " + std::to_string(i) + " is empty");
    if (!std::is_sorted(images[i].begin(), images[i].end()) ||
        std::adjacent_find(images[i].begin(), images[i].end()) != images[i].end())
      throw hypothesis_error(name + ": images must be sorted and duplicate-free");
    for (auto j : images[i])
      if (j < 0 || j >= n_symbols)
        throw hypothesis_error(name + ": image symbol out of range");
    if (edge_weight[i].size() != images[i].size())
      throw hypothesis_error(name + ": edge weight row length mismatch");
    double row = 0;
    for (double w : edge_weight[i]) {
      if (w <= 0) throw hypothesis_error(name + ": edge weights must be positive");
      row += w;
    }
    if (std::abs(row - 1.0) > 1e-12)
      throw hypothesis_error(name + ": edge weight row of symbol " + std::to_string(i) +
                             " sums to " + std::to_string(row) + ", expected 1");
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw hypothesis_error(name + ": element masses sum to " + std::to_string(total) +
                           ", expected 1");
  if (!(beta > 0 && beta < 1)) throw hypothesis_error(name + ": beta must lie in (0,1)");
  if (delta0 < 0) throw hypothesis_error(name + ": delta0 must be >= 0");
  if (delta0 > 0 && min_image_mass() < delta0 - 1e-15)
    throw hypothesis_error(name + ": long-branch bound violated: min image mass " +
                           std::to_string(min_image_mass()) + " < delta0 " +
                           std::to_string(delta0));
}

double SymbolicModel::image_mass(std::int32_t i) const {
  double s = 0;
  for (auto j : images[i]) s += element_mass[j];
  return s;
}

double SymbolicModel::min_image_mass() const {
  double mn = image_mass(0);
  for (std::int32_t i = 1; i < n_symbols; ++i) mn = std::min(mn, image_mass(i));
  return mn;
}

bool SymbolicModel::edge(std::int32_t i, std::int32_t j) const {
  return std::binary_search(images[i].begin(), images[i].end(), j);
}

double SymbolicModel::edge_weight_to(std::int32_t i, std::int32_t j) const {
  auto it = std::lower_bound(images[i].begin(), images[i].end(), j);
  if (it == images[i].end() || *it != j)
    throw hypothesis_error(name + ": no branch " + std::to_string(i) + " -> " + std::to_string(j));
  return edge_weight[i][static_cast<size_t>(it - images[i].begin())];
}

double SymbolicModel::kac_mean() const {
  double s = 0;
  for (std::int32_t i = 0; i < n_symbols; ++i) s += element_mass[i] * return_time[i];
  return s;
}

double SymbolicModel::branch_jacobian(const Word& w) const {
  if (w.size() < 2) throw hypothesis_error(name + ": branch_jacobian needs a word of length >= 2");
  if (!jacobian_override.empty()) {
    // longest override whose key is a prefix of w
    const Word* best = nullptr;
    double val = 0;
    for (const auto& [key, v] : jacobian_override) {
      if (key.size() > w.size()) continue;
      if (std::equal(key.begin(), key.end(), w.begin())) {
        if (!best || key.size() > best->size()) {
          best = &key;
          val = v;
        }
      }
    }
    if (best) return val;
  }
  return element_mass[w[1]] / (edge_weight_to(w[0], w[1]) * element_mass[w[0]]);
}

double SymbolicModel::word_mass(const Word& w) const {
  if (w.empty()) throw hypothesis_error(name + ": word_mass of empty word");
  double mass = element_mass[w[0]];
  for (size_t k = 0; k + 1 < w.size(); ++k) mass *= edge_weight_to(w[k], w[k + 1]);
  return mass;
}

std::vector<Word> SymbolicModel::enumerate_words(int depth) const {
  if (depth < 1) throw hypothesis_error(name + ": word depth must be >= 1");
  std::vector<Word> cur;
  for (std::int32_t i = 0; i < n_symbols; ++i) cur.push_back({i});
  for (int d = 1; d < depth; ++d) {
    std::vector<Word> next;
    next.reserve(cur.size() * 2);
    for (const auto& w : cur)
      for (auto j : images[w.back()]) {
        Word x = w;
        x.push_back(j);
        next.push_back(std::move(x));
      }
    cur = std::move(next);
  }
  return cur;  // lexicographic by construction
}

std::vector<std::vector<double>> SymbolicModel::proportional_weights(
    const std::vector<std::vector<std::int32_t>>& images, const std::vector<double>& element_mass) {
  std::vector<std::vector<double>> w(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    double tot = 0;
    for (auto j : images[i]) tot += element_mass[j];
    for (auto j : images[i]) w[i].push_back(element_mass[j] / tot);
  }
  return w;
}

SymbolicModel SymbolicModel::from_config(const Config& cfg) {
  SymbolicModel m;
  m.n_symbols = static_cast<std::int32_t>(cfg.get_int("symbols"));
  if (m.n_symbols <= 0) throw config_error("model config: 'symbols' must be positive");
  auto rt = cfg.get_int_array("return_times");
  auto mass = cfg.get_double_array("masses");
  m.return_time.assign(rt.begin(), rt.end());
  m.element_mass = mass;
  for (std::int32_t i = 0; i < m.n_symbols; ++i) {
    auto key = "images." + std::to_string(i);
    auto img = cfg.get_int_array(key);
    m.images.emplace_back(img.begin(), img.end());
    std::sort(m.images.back().begin(), m.images.back().end());
  }
  for (std::int32_t i = 0; i < m.n_symbols; ++i) {
    auto key = "weights." + std::to_string(i);
    if (cfg.has(key)) {
      m.edge_weight.push_back(cfg.get_double_array(key));
    } else {
      m.edge_weight.push_back({});
    }
  }
  bool any_explicit = false;
  for (const auto& r : m.edge_weight) any_explicit |= !r.empty();
  if (!any_explicit) {
    m.edge_weight = proportional_weights(m.images, m.element_mass);
  } else {
    for (std::int32_t i = 0; i < m.n_symbols; ++i)
      if (m.edge_weight[i].empty())
        throw config_error("model config: weights given for some symbols but not 'weights." +
                           std::to_string(i) + "'");
  }
  m.beta = cfg.get_double_or("beta", 0.5);
  m.gibbs_constant = cfg.get_double_or("gibbs_constant", 1.0);
  m.delta0 = cfg.get_double_or("delta0", 0.0);
  m.name = cfg.get_string_or("name", "symbolic");
  m.validate();
  return m;
}

int separation_time(const Word& a, const Word& b) {
  const size_t n = std::min(a.size(), b.size());
  for (size_t k = 0; k < n; ++k)
    if (a[k] != b[k]) return static_cast<int>(k);
  return static_cast<int>(n);
}

GibbsReport check_gibbs(const SymbolicModel& m, int depth) {
  if (depth < 2) throw hypothesis_error("check_gibbs: depth must be >= 2");
  GibbsReport rep;
  rep.depth = depth;
  auto words = m.enumerate_words(depth);
  // group by leading symbol; words are lexicographic so groups are contiguous
  size_t lo = 0;
  while (lo < words.size()) {
    size_t hi = lo;
    while (hi < words.size() && words[hi][0] == words[lo][0]) ++hi;
    for (size_t p = lo; p < hi; ++p) {
      const double jp = m.branch_jacobian(words[p]);
      for (size_t q = p + 1; q < hi; ++q) {
        const double jq = m.branch_jacobian(words[q]);
        const double ratio = std::abs(std::log(jp / jq));
        Word sp(words[p].begin() + 1, words[p].end());
        Word sq(words[q].begin() + 1, words[q].end());
        const int s = separation_time(sp, sq);
        const double scale = std::pow(m.beta, s);
        ++rep.pairs_checked;
        if (scale > 0) rep.tight_constant = std::max(rep.tight_constant, ratio / scale);
        const double allowed = m.gibbs_constant * scale;
        if (ratio > allowed + 1e-12) {
          if (rep.violations.size() < 64)
            rep.violations.push_back({words[p], words[q], ratio, allowed});
          rep.passed = false;
        }
      }
    }
    lo = hi;
  }
  return rep;
}

double check_nonsingularity(const SymbolicModel& m, int depth) {
  // image mass must equal the Jacobian-weighted source mass, word by word:
  // mass(w) = sum_j mass(shift(w) ++ j) / J(w ++ j)
  double worst = 0;
  for (const auto& w : m.enumerate_words(depth)) {
    Word u(w.begin() + 1, w.end());
    u.push_back(0);
    Word extended = w;
    extended.push_back(0);
    double pulled = 0;
    for (auto j : m.images[w.back()]) {
      u.back() = j;
      extended.back() = j;
      pulled += m.word_mass(u) / m.branch_jacobian(extended);
    }
    worst = std::max(worst, std::abs(pulled - m.word_mass(w)) / m.word_mass(w));
  }
  return worst;
}

AperiodicityReport check_aperiodicity(const SymbolicModel& m, int horizon) {
  AperiodicityReport rep;
  rep.horizon = horizon;
  const int n = m.n_symbols;
  const int nw = (n + 63) / 64;  // 64-bit blocks per adjacency row
  std::vector<std::uint64_t> a(static_cast<std::size_t>(n) * nw, 0), pw;
  for (int i = 0; i < n; ++i)
    for (auto j : m.images[i])
      a[static_cast<std::size_t>(i) * nw + j / 64] |= (1ull << (j % 64));
  std::vector<std::uint64_t> full(nw, ~0ull);
  if (n % 64) full[nw - 1] = (1ull << (n % 64)) - 1;
  pw = a;
  auto all_positive = [&](const std::vector<std::uint64_t>& mat) {
    for (int i = 0; i < n; ++i)
      for (int w = 0; w < nw; ++w)
        if (mat[static_cast<std::size_t>(i) * nw + w] != full[w]) return false;
    return true;
  };
  auto mul = [&](const std::vector<std::uint64_t>& x, const std::vector<std::uint64_t>& y) {
    std::vector<std::uint64_t> z(static_cast<std::size_t>(n) * nw, 0);
    for (int i = 0; i < n; ++i) {
      auto* dst = &z[static_cast<std::size_t>(i) * nw];
      for (int w = 0; w < nw; ++w) {
        std::uint64_t row = x[static_cast<std::size_t>(i) * nw + w];
        while (row) {
          const int k = w * 64 + __builtin_ctzll(row);
          row &= row - 1;
          const auto* src = &y[static_cast<std::size_t>(k) * nw];
          for (int v = 0; v < nw; ++v) dst[v] |= src[v];
        }
      }
    }
    return z;
  };
  int first = -1;
  for (int p = 1; p <= horizon; ++p) {
    if (p > 1) pw = mul(pw, a);
    if (all_positive(pw)) {
      if (first < 0) first = p;
    } else {
      first = -1;  // must stay positive through the horizon
    }
  }
  rep.aperiodic = first > 0;
  rep.k0 = first;
  return rep;
}

CoprimeBlockReport check_coprime_block(const SymbolicModel& m) {
  CoprimeBlockReport rep;
  const int n = m.n_symbols;
  std::vector<std::int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int size = 2; size <= n; ++size) {
    // lexicographic combinations of `size` symbols
    std::vector<int> c(size);
    std::iota(c.begin(), c.end(), 0);
    for (;;) {
      long long g = 0;
      bool covers = true;
      for (int k = 0; k < size && covers; ++k) {
        std::int32_t s = idx[c[k]];
        g = std::gcd(g, static_cast<long long>(m.return_time[s]));
        for (int l = 0; l < size; ++l)
          if (!m.edge(s, idx[c[l]])) {
            covers = false;
            break;
          }
      }
      if (covers && g == 1) {
        rep.found = true;
        for (int k = 0; k < size; ++k) rep.symbols.push_back(idx[c[k]]);
        return rep;
      }
      int k = size - 1;
      while (k >= 0 && c[k] == n - size + k) --k;
      if (k < 0) break;
      ++c[k];
      for (int l = k + 1; l < size; ++l) c[l] = c[l - 1] + 1;
    }
  }
  return rep;
}

void SymbolicPoint::extend(const SymbolicModel& m, Rng& rng, int len) {
  if (word.empty()) throw hypothesis_error("SymbolicPoint: cannot extend an empty word");
  while (static_cast<int>(word.size()) < len) {
    const auto s = word.back();
    const auto& img = m.images[s];
    const auto& wt = m.edge_weight[s];
    double u = rng.uniform();
    size_t pick = img.size() - 1;
    double acc = 0;
    for (size_t k = 0; k < img.size(); ++k) {
      acc += wt[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    word.push_back(img[pick]);
  }
}

}  // namespace wgm
