#pragma once

// Brute-force corpus BLEU-4 used as an independent reference. It shares no
// code with the library: n-grams are compared position by position and the
// precisions are combined with pow instead of a log-sum.

#include <cmath>
#include <cstdint>
#include <vector>

namespace natreg_test {

using Words = std::vector<std::int32_t>;

inline bool same_gram(const Words& a, std::size_t i, const Words& b, std::size_t j, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (a[i + k] != b[j + k]) return false;
  }
  return true;
}

inline std::size_t occurrences(const Words& haystack, const Words& gram_src, std::size_t at, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + n <= haystack.size(); ++j) c += same_gram(gram_src, at, haystack, j, n);
  return c;
}

/// smooth: add one to numerator and denominator of n ≥ 2 precisions with no
/// matches.
inline double oracle_bleu(const std::vector<Words>& hyps, const std::vector<Words>& refs, bool smooth = true) {
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const Words& h = hyps[s];
    const Words& ref = refs[s];
    c += static_cast<double>(h.size());
    r += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        totals[n - 1] += 1;
        // Count each distinct n-gram once, at its first position.
        bool first = true;
        for (std::size_t k = 0; k < i; ++k) {
          if (same_gram(h, k, h, i, n)) {
            first = false;
            break;
          }
        }
        if (!first) continue;
        const std::size_t in_h = occurrences(h, h, i, n);
        const std::size_t in_r = occurrences(ref, h, i, n);
        matches[n - 1] += static_cast<double>(in_h < in_r ? in_h : in_r);
      }
    }
  }
  if (c == 0 || matches[0] == 0) return 0;
  double product = 1;
  for (int n = 0; n < 4; ++n) {
    double m = matches[n], t = totals[n];
    if (m == 0) {
      if (!smooth) return 0;
      m += 1;
      t += 1;
    }
    product *= m / t;
  }
  const double bp = c < r ? std::exp(1 - r / c) : 1.0;
  return 100 * bp * std::pow(product, 0.25);
}

/// Five hand-built pairs covering clipping, the brevity penalty, a sentence
/// shorter than four tokens, and a zero higher-order match.
inline void hand_built_pairs(std::vector<Words>& hyps, std::vector<Words>& refs) {
  hyps = {{4, 5, 6, 7, 8, 9}, {4, 4, 4, 4}, {10, 11, 12}, {5, 6, 7, 8, 9, 10, 11}, {13, 4, 14, 5}};
  refs = {{4, 5, 6, 7, 8, 9}, {4, 5, 6, 7}, {10, 11, 12, 13, 14}, {5, 6, 7, 9, 8, 10, 11, 12}, {4, 13, 5, 14}};
}

}  // namespace natreg_test
