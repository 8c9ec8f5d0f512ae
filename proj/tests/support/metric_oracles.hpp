#pragma once

// Quadratic-time reference implementations of the ranking metrics, threshold choice
// and Benjamini-Hochberg adjustment, written from the definitions.

#include <algorithm>
#include <functional>
#include <vector>

#include "akirisk/rng.hpp"

namespace akirisk::testing {

inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(y[i] == 1 && y[j] == 0)) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return num / den;
}

struct Counts {
  double tp = 0, fp = 0, fn = 0;
};

inline Counts counts_at(const std::vector<double>& s, const std::vector<int>& y, double t) {
  Counts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= t) (y[i] ? c.tp : c.fp) += 1;
    else if (y[i]) c.fn += 1;
  }
  return c;
}

inline std::vector<double> distinct_desc(std::vector<double> s) {
  std::sort(s.begin(), s.end(), std::greater<>());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double n_pos = 0;
  for (int v : y) n_pos += v;
  double ap = 0, prev_recall = 0;
  for (double t : distinct_desc(s)) {
    const Counts c = counts_at(s, y, t);
    const double recall = c.tp / n_pos;
    ap += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
    prev_recall = recall;
  }
  return ap;
}

inline double f1_of(const Counts& c) { return c.tp == 0 ? 0.0 : 2 * c.tp / (2 * c.tp + c.fp + c.fn); }

inline void random_instance(Rng& rng, std::vector<double>& s, std::vector<int>& y) {
  const std::size_t n = 2 + rng() % 199;
  s.resize(n);
  y.resize(n);
  const int levels = 1 + static_cast<int>(rng() % 30);  // coarse levels create ties
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(rng() % static_cast<std::uint64_t>(levels)) / levels;
    y[i] = bernoulli(rng, 0.3);
  }
  y[0] = 1;
  y[1] = 0;
}

inline std::vector<double> bh_bruteforce(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    // rank of p[i] among ties is resolved to the most favourable position
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (p[j] < p[i]) continue;
      std::size_t rank = 0;
      for (std::size_t k = 0; k < m; ++k) rank += p[k] <= p[j];
      best = std::min(best, p[j] * static_cast<double>(m) / static_cast<double>(rank));
    }
    out[i] = best;
  }
  return out;
}

}  // namespace akirisk::testing
