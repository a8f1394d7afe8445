#pragma once

#include <cmath>
#include <string>

#include "ampbp/common.hpp"

namespace ampbp {

// Deterministic limit schedule of the l2 message iteration:
//
//   v(t)       = v0 (1-delta) / (delta^t (1-delta) + 2 beta v0 (1-delta^t)),
//                the fixed point path of v -> v / (2 beta v + delta)
//   Delta(t)   = delta / (2 beta v(t) + delta)
//   Gamma(t,l) = prod_{tau=1..l} Delta(t-tau)
//   gamma(t)   the factor in the identity Delta(t) = delta - delta^{t+1} gamma(t)
//
// plus the asymptotic contraction rates rho1, rho2 of the mean iteration.
struct VarianceSchedule {
  double v0;
  double beta;
  double delta;

  VarianceSchedule(double v0_, double beta_, double delta_)
      : v0(v0_), beta(beta_), delta(delta_) {
    AMPBP_REQUIRE(v0 > 0.0, "VarianceSchedule: v0 > 0");
    AMPBP_REQUIRE(beta >= 0.0, "VarianceSchedule: beta >= 0");
    AMPBP_REQUIRE(delta > 0.0 && delta < 1.0, "VarianceSchedule: delta in (0,1)");
  }

  // Closed form; once delta^t underflows the t->inf limit (1-delta)/(2 beta)
  // is returned.
  double v(int t) const {
    AMPBP_REQUIRE(t >= 0, "v: t >= 0");
    if (beta == 0.0) return v0 * std::pow(delta, -double(t));
    const double dt = std::pow(delta, double(t));
    if (dt < 1e-300) return (1.0 - delta) / (2.0 * beta);
    return v0 * (1.0 - delta) / (dt * (1.0 - delta) + 2.0 * beta * v0 * (1.0 - dt));
  }

  // Reference path: iterate the one-step map from v0.  Test oracle for v().
  double v_iterated(int t) const {
    AMPBP_REQUIRE(t >= 0, "v_iterated: t >= 0");
    double v = v0;
    for (int s = 0; s < t; ++s) v = v / (2.0 * beta * v + delta);
    return v;
  }

  double delta_t(int t) const { return delta / (2.0 * beta * v(t) + delta); }

  // Gamma(t, lambda) = Delta(t-1) Delta(t-2) ... Delta(t-lambda)
  double gamma_lambda(int t, int lambda) const {
    AMPBP_REQUIRE(lambda >= 1 && lambda <= t, "gamma_lambda: need 1 <= lambda <= t");
    double p = 1.0;
    for (int tau = 1; tau <= lambda; ++tau) p *= delta_t(t - tau);
    return p;
  }

  // gamma(t) = (1-delta)(2 beta v0 - (1-delta))
  //            / (delta^{t+1}(1-delta) + 2 beta v0 (1-delta^{t+1}))
  double gamma_factor(int t) const {
    AMPBP_REQUIRE(t >= 0, "gamma_factor: t >= 0");
    const double dt1 = std::pow(delta, double(t) + 1.0);
    return (1.0 - delta) * (2.0 * beta * v0 - (1.0 - delta)) /
           (dt1 * (1.0 - delta) + 2.0 * beta * v0 * (1.0 - dt1));
  }

  // Smallest beta for which gamma(t) >= 0.
  double beta_threshold() const { return (1.0 - delta) / (2.0 * v0); }

  struct Rates {
    double rho1;
    double rho2;
    double gamma0;
    bool valid;  // beta >= (1-delta)/(2 v0)
  };

  // rho1 = 1 - (1-sqrt(delta))^2 (1-gamma(0)),  rho2 = sqrt(delta)(2-sqrt(delta)).
  // Below the beta threshold the values are still returned, flagged invalid.
  Rates contraction_rates() const {
    const double g0 = gamma_factor(0);
    const double sd = std::sqrt(delta);
    return Rates{1.0 - (1.0 - sd) * (1.0 - sd) * (1.0 - g0), sd * (2.0 - sd), g0,
                 beta >= beta_threshold()};
  }
};

}  // namespace ampbp
