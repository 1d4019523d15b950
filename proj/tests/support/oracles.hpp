#pragma once

// Brute-force reference implementations and seeded case generators shared by
// the unit tests and the acceptance binary. Everything here is deliberately
// naive: plain loops over doubles, no autograd.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ftwa/eval.hpp"
#include "ftwa/random.hpp"
#include "ftwa/swa.hpp"

namespace ftwa::testing {

using Vectors = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Mean hinge over every (a, p, n) with a != p, y_a == y_p != y_n (batch-all),
/// or over anchors with their farthest positive and closest negative
/// (batch-hard). 0 when nothing qualifies.
inline double brute_triplet(const Vectors& v, const std::vector<int>& y, double margin,
                            TripletMining mining = TripletMining::kBatchAll) {
  const std::size_t n = v.size();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (mining == TripletMining::kBatchAll) {
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
          if (p == a || y[p] != y[a] || y[q] == y[a]) continue;
          total += std::max(0.0, margin + euclid(v[a], v[p]) - euclid(v[a], v[q]));
          ++count;
        }
      }
    } else {
      double far = -1, near = -1;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        const double d = euclid(v[a], v[j]);
        if (y[j] == y[a]) {
          far = std::max(far, d);
        } else if (near < 0 || d < near) {
          near = d;
        }
      }
      if (far < 0 || near < 0) continue;
      total += std::max(0.0, margin + far - near);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

/// Rank-k accuracies by fully sorting each query's single-shot gallery
/// (stable by gallery index) and locating the true identity.
inline std::vector<double> brute_cmc(const std::vector<double>& dist, const std::vector<int>& ql,
                                     const std::vector<int>& gl, const CmcOptions& options) {
  const std::size_t ng = gl.size();
  std::vector<double> acc(options.ranks.size(), 0.0);
  for (int t = 0; t < options.trials; ++t) {
    const std::vector<std::size_t> kept = single_shot_selection(gl, options.seed, t);
    for (std::size_t i = 0; i < ql.size(); ++i) {
      std::vector<std::size_t> order = kept;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return dist[i * ng + a] < dist[i * ng + b]; });
      std::size_t pos = 0;
      while (gl[order[pos]] != ql[i]) ++pos;
      for (std::size_t r = 0; r < options.ranks.size(); ++r) {
        if (pos < static_cast<std::size_t>(options.ranks[r])) {
          acc[r] += 1.0 / static_cast<double>(ql.size() * options.trials);
        }
      }
    }
  }
  return acc;
}

/// Seeded case generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int integer(int lo, int hi) { return uniform_int(rng_, lo, hi); }
  double real(double lo, double hi) { return uniform(rng_, lo, hi); }
  double normal() { return normal01(rng_); }

  Vectors vectors(int n, int d, double scale = 1.0) {
    Vectors v(n, std::vector<double>(d));
    for (auto& row : v) {
      for (double& x : row) x = scale * normal();
    }
    return v;
  }

  /// Labels drawn from `ids` identities, so some batches lack positives or negatives.
  std::vector<int> labels(int n, int ids) {
    std::vector<int> y(n);
    for (int& l : y) l = integer(0, ids - 1);
    return y;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

}  // namespace ftwa::testing
