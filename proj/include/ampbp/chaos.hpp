#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ampbp/common.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/rng.hpp"
#include "ampbp/schedule.hpp"

namespace ampbp {

// Brute-force evaluation of the alternating path expansion
//
//   x_{i->a}(t) = sum_{l=1..t} (-1)^{l+1} Gamma(t,l)
//                 sum_{B} sum_{J} y_{b_l} A_{b1 j1} prod_{k=1..l-1} A_{bk j_{k+1}} A_{b_{k+1} j_{k+1}}
//
// over row tuples (b1..bl), b1 != a, adjacent entries distinct, and column
// tuples (j1..jl), j1 = i, adjacent entries distinct.  Tuples are generated
// depth-first with the constraints applied online; nothing is materialised.

namespace detail {

// sum over column paths of the product chain, rows fixed
inline double path_sum_j(const Eigen::MatrixXd& A, const std::vector<int>& b,
                         int depth, int prev_j, double partial) {
  const int lambda = int(b.size());
  if (depth == lambda) return partial;
  double acc = 0.0;
  for (int j = 0; j < A.cols(); ++j) {
    if (j == prev_j) continue;
    acc += path_sum_j(A, b, depth + 1, j,
                      partial * A(b[depth - 1], j) * A(b[depth], j));
  }
  return acc;
}

// f(b1..bl) = sum_{J_i} y_{b_l} A_{b1 j1} prod A_{bk j_{k+1}} A_{b_{k+1} j_{k+1}}
inline double f_of_rows(const ProblemInstance& inst, const std::vector<int>& b,
                        int i) {
  const double head = inst.y(b.back()) * inst.a(b.front(), i);
  if (b.size() == 1) return head;
  return head * path_sum_j(inst.a, b, 1, i, 1.0);
}

inline double sum_rows_constrained(const ProblemInstance& inst, int i, int a,
                                   std::vector<int>& b, int depth) {
  const int lambda = int(b.size());
  if (depth == lambda) return f_of_rows(inst, b, i);
  double acc = 0.0;
  const int forbidden = (depth == 0) ? a : b[depth - 1];
  for (int r = 0; r < inst.m(); ++r) {
    if (r == forbidden) continue;
    b[depth] = r;
    acc += sum_rows_constrained(inst, i, a, b, depth + 1);
  }
  return acc;
}

// Row sum with equality pattern `mask`: bit k set forces b_{k+1} = b_k
// (b_0 = a), otherwise the position ranges over all of [m].
inline double sum_rows_mask(const ProblemInstance& inst, int i, int a,
                            unsigned mask, std::vector<int>& b, int depth) {
  const int lambda = int(b.size());
  if (depth == lambda) return f_of_rows(inst, b, i);
  if (mask & (1u << depth)) {
    b[depth] = (depth == 0) ? a : b[depth - 1];
    return sum_rows_mask(inst, i, a, mask, b, depth + 1);
  }
  double acc = 0.0;
  for (int r = 0; r < inst.m(); ++r) {
    b[depth] = r;
    acc += sum_rows_mask(inst, i, a, mask, b, depth + 1);
  }
  return acc;
}

}  // namespace detail

// Number of (row tuple, column tuple) pairs the expansion visits.
inline long long chaos_term_count(int m, int n, int t) {
  long long total = 0;
  double lam_terms = 1.0;
  for (int lambda = 1; lambda <= t; ++lambda) {
    lam_terms = std::pow(double(m - 1), lambda) * std::pow(double(n - 1), lambda - 1);
    total += (lam_terms > 4e18) ? (1ll << 62) : (long long)lam_terms;
  }
  return total;
}

inline double chaos_mean(const ProblemInstance& inst, const VarianceSchedule& sched,
                         int t, int i, int a,
                         long long term_cap = 100000000ll) {
  AMPBP_REQUIRE(t >= 1, "chaos_mean: t >= 1");
  AMPBP_REQUIRE(i >= 0 && i < inst.n() && a >= 0 && a < inst.m(),
                "chaos_mean: anchor out of range");
  AMPBP_REQUIRE(chaos_term_count(inst.m(), inst.n(), t) <= term_cap,
                "chaos_mean: term cap exceeded");
  double acc = 0.0;
  for (int lambda = 1; lambda <= t; ++lambda) {
    std::vector<int> b(lambda);
    const double s = detail::sum_rows_constrained(inst, i, a, b, 0);
    const double sign = (lambda % 2 == 1) ? 1.0 : -1.0;
    acc += sign * sched.gamma_lambda(t, lambda) * s;
  }
  return acc;
}

struct XzDecomposition {
  double x_part;  // anchor-row independent component
  double z_part;  // boundary component, x_part + z_part == chaos_mean
};

// Inclusion-exclusion over the subsets of enforced adjacent equalities
// b_k = b_{k-1} (with b_0 = a): subsets containing position 1 pin b_1 = a and
// form the boundary part, all others the bulk part.
inline XzDecomposition decompose_xz(const ProblemInstance& inst,
                                    const VarianceSchedule& sched, int t, int i,
                                    int a, long long term_cap = 100000000ll) {
  AMPBP_REQUIRE(t >= 1 && t <= 20, "decompose_xz: t in [1,20]");
  AMPBP_REQUIRE(chaos_term_count(inst.m() + 1, inst.n(), t) <= term_cap,
                "decompose_xz: term cap exceeded");
  XzDecomposition out{0.0, 0.0};
  for (int lambda = 1; lambda <= t; ++lambda) {
    double xl = 0.0, zl = 0.0;
    for (unsigned mask = 0; mask < (1u << lambda); ++mask) {
      std::vector<int> b(lambda);
      const double s = detail::sum_rows_mask(inst, i, a, mask, b, 0);
      const double sgn = (__builtin_popcount(mask) % 2 == 0) ? 1.0 : -1.0;
      if (mask & 1u)
        zl += sgn * s;
      else
        xl += sgn * s;
    }
    const double outer = (lambda % 2 == 1) ? 1.0 : -1.0;
    out.x_part += outer * sched.gamma_lambda(t, lambda) * xl;
    out.z_part += outer * sched.gamma_lambda(t, lambda) * zl;
  }
  return out;
}

namespace detail {

inline double wick_rec(const Eigen::MatrixXd& cov, std::vector<int>& nodes) {
  if (nodes.empty()) return 1.0;
  const int first = nodes.front();
  double acc = 0.0;
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    const int partner = nodes[k];
    std::vector<int> rest;
    rest.reserve(nodes.size() - 2);
    for (std::size_t r = 1; r < nodes.size(); ++r)
      if (r != k) rest.push_back(nodes[r]);
    acc += cov(first, partner) * wick_rec(cov, rest);
  }
  return acc;
}

inline long long pairing_rec(int remaining) {
  if (remaining == 0) return 1;
  return (remaining - 1) * pairing_rec(remaining - 2);
}

}  // namespace detail

// E[g_1 ... g_n] for jointly Gaussian centred nodes: sum over perfect
// matchings of products of pairwise covariances.  Odd n gives 0.
inline double wick_expectation(const Eigen::MatrixXd& cov) {
  const int n = int(cov.rows());
  AMPBP_REQUIRE(cov.rows() == cov.cols(), "wick_expectation: square cov");
  AMPBP_REQUIRE(n <= 12, "wick_expectation: at most 12 nodes");
  if (n % 2 == 1) return 0.0;
  std::vector<int> nodes(n);
  for (int k = 0; k < n; ++k) nodes[k] = k;
  return detail::wick_rec(cov, nodes);
}

// Matching count by explicit enumeration (equals (n-1)!! for even n).
inline long long pairing_count(int n_nodes) {
  AMPBP_REQUIRE(n_nodes >= 0 && n_nodes <= 12, "pairing_count: 0..12 nodes");
  if (n_nodes % 2 == 1) return 0;
  return detail::pairing_rec(n_nodes);
}

// chi_r(xi) = m^{-r/2} sum over adjacent-distinct r-tuples of products; the
// tuple sum collapses to a transfer recursion over the last index.
inline double chi_r_sample(const std::vector<double>& xi, int r) {
  const int m = int(xi.size());
  std::vector<double> t(xi), nxt(m);
  for (int k = 2; k <= r; ++k) {
    double s = 0.0;
    for (double v : t) s += v;
    for (int j = 0; j < m; ++j) nxt[j] = xi[j] * (s - t[j]);
    t.swap(nxt);
  }
  double s = 0.0;
  for (double v : t) s += v;
  return s * std::pow(double(m), -0.5 * r);
}

struct ChaosL2Estimate {
  double mean;  // Monte-Carlo estimate of E[chi_r^2]
  double se;    // standard error of the estimate
};

inline ChaosL2Estimate chaos_l2_mc(Family family, int r, int m, long trials,
                                   std::uint64_t seed) {
  AMPBP_REQUIRE(r >= 1 && r <= 4, "chaos_l2_mc: r in [1,4]");
  AMPBP_REQUIRE(m >= 2 && m <= 64, "chaos_l2_mc: m in [2,64]");
  AMPBP_REQUIRE(trials >= 1000, "chaos_l2_mc: trials >= 1000");
  Rng rng(seed);
  std::vector<double> xi(m);
  double s1 = 0.0, s2 = 0.0;
  const double sqrt3 = 1.7320508075688772;
  for (long tr = 0; tr < trials; ++tr) {
    for (int j = 0; j < m; ++j) {
      switch (family) {
        case Family::gaussian: xi[j] = rng.gaussian(); break;
        case Family::rademacher: xi[j] = rng.coin() ? 1.0 : -1.0; break;
        case Family::uniform: xi[j] = rng.uniform_pm1() * sqrt3; break;
      }
    }
    const double c = chi_r_sample(xi, r);
    s1 += c * c;
    s2 += c * c * c * c;
  }
  const double mean = s1 / trials;
  const double var = std::max(0.0, s2 / trials - mean * mean);
  return ChaosL2Estimate{mean, std::sqrt(var / trials)};
}

// Exact E[chi_r(g)^2] for standard Gaussian coordinates by enumerating tuple
// pairs and taking Wick expectations; small r and m only.  Test oracle.
inline double chaos_l2_gaussian_exact(int r, int m) {
  AMPBP_REQUIRE(r >= 1 && r <= 3 && m >= 2 && m <= 6, "chaos_l2_gaussian_exact: size");
  std::vector<std::vector<int>> tuples;
  std::vector<int> cur(r);
  const std::function<void(int)> gen = [&](int d) {
    if (d == r) {
      tuples.push_back(cur);
      return;
    }
    for (int v = 0; v < m; ++v) {
      if (d > 0 && v == cur[d - 1]) continue;
      cur[d] = v;
      gen(d + 1);
    }
  };
  gen(0);
  double acc = 0.0;
  Eigen::MatrixXd cov(2 * r, 2 * r);
  for (const auto& t1 : tuples)
    for (const auto& t2 : tuples) {
      for (int p = 0; p < 2 * r; ++p)
        for (int q = 0; q < 2 * r; ++q) {
          const int lp = p < r ? t1[p] : t2[p - r];
          const int lq = q < r ? t1[q] : t2[q - r];
          cov(p, q) = (lp == lq) ? 1.0 : 0.0;
        }
      acc += wick_expectation(cov);
    }
  return acc * std::pow(double(m), -double(r));
}

}  // namespace ampbp
