#pragma once

// Slow, direct reference implementations shared by the unit and acceptance tests.

#include "setcomm/concept.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using namespace setcomm;

// Direct recursion on (i, j) prefixes, memoized only to bound runtime.
template <typename T>
inline std::size_t edit_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = std::min(rec(i - 1, j) + 1, rec(i, j - 1) + 1);
    best = std::min(best, rec(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
    memo[key] = best;
    return best;
  };
  return rec(a.size(), b.size());
}

inline std::vector<int> bits_of(unsigned code, int len) {
  std::vector<int> s;
  for (int i = 0; i < len; ++i) s.push_back((code >> i) & 1);
  return s;
}

// Two-hot vectors differ in two bits per differing attribute.
inline double hausdorff_oracle(const Extension& a, const Extension& b) {
  auto d = [](const ObjectVector& x, const ObjectVector& y) {
    return 2.0 * (x.color != y.color) + 2.0 * (x.shape != y.shape);
  };
  double h = 0;
  for (const auto& x : a.members()) {
    double m = 1e9;
    for (const auto& y : b.members()) m = std::min(m, d(x, y));
    h = std::max(h, m);
  }
  for (const auto& y : b.members()) {
    double m = 1e9;
    for (const auto& x : a.members()) m = std::min(m, d(x, y));
    h = std::max(h, m);
  }
  return h;
}

inline double h_cond_oracle(const std::vector<int>& m, const std::vector<int>& c) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pc;
  const double n = static_cast<double>(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    joint[{m[i], c[i]}] += 1 / n;
    pc[c[i]] += 1 / n;
  }
  double h = 0;
  for (const auto& [k, p] : joint) h -= p * std::log2(p / pc[k.second]);
  return h;
}

inline double mi_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1 / n;
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
  }
  double mi = 0;
  for (const auto& [k, p] : joint) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
  return mi;
}

inline double h_oracle(const std::vector<int>& a) {
  std::map<int, double> p;
  for (int x : a) p[x] += 1.0 / static_cast<double>(a.size());
  double h = 0;
  for (const auto& [k, v] : p) h -= v * std::log(v);
  return h;
}

// Expected MI by averaging over every permutation of b.
inline double emi_oracle(const std::vector<int>& a, std::vector<int> b) {
  std::sort(b.begin(), b.end());
  double total = 0;
  long count = 0;
  std::vector<int> idx(b.size());
  std::iota(idx.begin(), idx.end(), 0);
  do {
    std::vector<int> pb(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) pb[i] = b[static_cast<std::size_t>(idx[i])];
    total += mi_oracle(a, pb);
    ++count;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return total / static_cast<double>(count);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle
