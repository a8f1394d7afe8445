#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <vector>

#include "ampbp/common.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/rng.hpp"
#include "ampbp/schedule.hpp"

namespace ampbp {

// Least sup-energy solution of y = A x:  x* = A^T (A A^T)^{-1} y, via a
// Cholesky solve of the m x m Gram system.
inline Eigen::VectorXd least_norm(const ProblemInstance& inst) {
  const Eigen::MatrixXd gram = inst.a * inst.a.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  AMPBP_CHECK(llt.info() == Eigen::Success, "least_norm: Gram factorisation failed");
  const Eigen::VectorXd w = llt.solve(inst.y);
  Eigen::VectorXd xs = inst.a.transpose() * w;
  const double resid = (inst.a * xs - inst.y).norm();
  AMPBP_CHECK(resid <= 1e-8 * (1.0 + inst.y.norm()),
              "least_norm: residual too large (rank deficiency?)");
  return xs;
}

// X' = X + Delta(t) A^T (y - A X).
inline Eigen::VectorXd amp_step(const ProblemInstance& inst,
                                const Eigen::VectorXd& x,
                                const VarianceSchedule& sched, int t) {
  AMPBP_REQUIRE(t >= 0, "amp_step: t >= 0");
  AMPBP_REQUIRE(x.size() == inst.n(), "amp_step: x length");
  return x + sched.delta_t(t) * (inst.a.transpose() * (inst.y - inst.a * x));
}

struct AmpTrace {
  std::vector<double> dist_to_star;  // ||X(t) - x*||, t = 0..steps
  std::vector<double> residual;     // ||y - A X(t)||
  std::vector<double> delta_ts;     // step factor used at t -> t+1
  std::vector<double> rnorm_est;    // certified estimate of ||I - Delta(t) A^T A|| on the row space
  Eigen::VectorXd x_star;
  Eigen::VectorXd x_final;
  bool guarantee = false;  // beta >= (1-delta)/(2 v0)
  bool diverged = false;   // stopped by the 10x growth guard
};

namespace detail {

// max over the power-iteration sequence of ||R w||/||w||, started at `dir`
// so the estimate is at least the contraction ratio realised on `dir`.
inline double rnorm_estimate(const ProblemInstance& inst, double step,
                             const Eigen::VectorXd& dir, int iters = 50,
                             double tol = 1e-8) {
  const auto apply = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
    return w - step * (inst.a.transpose() * (inst.a * w));
  };
  Eigen::VectorXd w = dir;
  double nw = w.norm();
  if (nw == 0.0) return 0.0;
  w /= nw;
  double best = 0.0, prev = -1.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd rw = apply(w);
    const double g = rw.norm();
    best = std::max(best, g);
    if (g == 0.0) break;
    if (prev >= 0.0 && std::abs(g - prev) <= tol * std::max(1.0, g)) break;
    prev = g;
    w = rw / g;
  }
  return best;
}

}  // namespace detail

// Iterate from X(0) = 0, tracking distance to x*, residuals and the step
// operator norm.  Runs below the beta threshold are permitted but flagged.
inline AmpTrace run_amp(const ProblemInstance& inst, const VarianceSchedule& sched,
                        int tmax) {
  AMPBP_REQUIRE(tmax >= 1, "run_amp: tmax >= 1");
  AmpTrace trace;
  trace.x_star = least_norm(inst);
  trace.guarantee = sched.beta >= sched.beta_threshold();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(inst.n());
  const double d0 = trace.x_star.norm();
  trace.dist_to_star.push_back(d0);
  trace.residual.push_back(inst.y.norm());
  for (int t = 0; t < tmax; ++t) {
    const double step = sched.delta_t(t);
    const Eigen::VectorXd err = x - trace.x_star;
    trace.rnorm_est.push_back(detail::rnorm_estimate(inst, step, err.size() > 0 && err.norm() > 0 ? err : trace.x_star));
    trace.delta_ts.push_back(step);
    x = amp_step(inst, x, sched, t);
    trace.dist_to_star.push_back((x - trace.x_star).norm());
    trace.residual.push_back((inst.y - inst.a * x).norm());
    if (trace.dist_to_star.back() > 10.0 * d0) {
      trace.diverged = true;
      break;
    }
  }
  trace.x_final = x;
  return trace;
}

struct SpectralEdges {
  double lambda_min;  // smallest eigenvalue of delta A^T A on the row space
  double lambda_max;
  bool mp_comparison_valid;  // delta < 1, i.e. inside the model range
};

// Extreme nonzero eigenvalues of delta A^T A (= eigenvalues of delta A A^T):
// power iteration for the top, Cholesky-based inverse iteration for the
// bottom.  Throws on non-convergence.
inline SpectralEdges spectral_check(const ProblemInstance& inst,
                                    double tol = 1e-10, int maxit = 100000) {
  const int m = inst.m();
  const double delta = double(m) / inst.n();
  const Eigen::MatrixXd c = delta * (inst.a * inst.a.transpose());

  const auto iterate = [&](bool inverse) -> double {
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (inverse) {
      llt.compute(c);
      AMPBP_CHECK(llt.info() == Eigen::Success, "spectral_check: factorisation failed");
    }
    Rng rng(child_seed(inst.spec.seed, 2));
    Eigen::VectorXd w(m);
    for (int k = 0; k < m; ++k) w(k) = rng.gaussian();
    w.normalize();
    double rq_prev = 0.0;
    for (int it = 0; it < maxit; ++it) {
      Eigen::VectorXd nw = inverse ? llt.solve(w).eval() : (c * w).eval();
      nw.normalize();
      const double rq = nw.dot(c * nw);
      if (it > 0 && std::abs(rq - rq_prev) <= tol * std::max(1.0, std::abs(rq)))
        return rq;
      rq_prev = rq;
      w = nw;
    }
    AMPBP_CHECK(false, "spectral_check: eigensolver did not converge");
    return 0.0;
  };

  SpectralEdges out;
  out.lambda_max = iterate(false);
  out.lambda_min = iterate(true);
  out.mp_comparison_valid = inst.m() < inst.n();
  return out;
}

}  // namespace ampbp
