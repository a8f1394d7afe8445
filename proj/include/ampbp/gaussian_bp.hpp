#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "ampbp/common.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/schedule.hpp"

namespace ampbp {

// Edgewise message moments, entry (a,i) holds the variable->factor message
// moment for edge i->a.
struct MessageField {
  Eigen::MatrixXd x;  // means
  Eigen::MatrixXd v;  // variances, all > 0
  int t = 0;
};

// Factor->variable moments, entry (a,i) holds the a->i hat message.
struct HatField {
  Eigen::MatrixXd xhat;
  Eigen::MatrixXd vhat;
};

// Means/variances obtained by pushing arbitrary hat moments through the
// Gaussian product rule.
struct ShadowField {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd var;
};

inline MessageField initial_messages(int m, int n, double v0) {
  AMPBP_REQUIRE(v0 > 0.0, "initial_messages: v0 > 0");
  MessageField f;
  f.x = Eigen::MatrixXd::Zero(m, n);
  f.v = Eigen::MatrixXd::Constant(m, n, v0);
  f.t = 0;
  return f;
}

// xhat_{a->i} = (y_a - sum_{j != i} A_aj x_{j->a}) / A_ai
// vhat_{a->i} = sum_{j != i} A_aj^2 v_{j->a} / A_ai^2
// Leave-one-out sums are full row sums minus the own term, O(mN) total.
inline HatField hat_update(const ProblemInstance& inst, const MessageField& msg) {
  const int m = inst.m(), n = inst.n();
  AMPBP_REQUIRE(msg.x.rows() == m && msg.x.cols() == n, "hat_update: shape");
  HatField hat;
  hat.xhat.resize(m, n);
  hat.vhat.resize(m, n);
  for (int a = 0; a < m; ++a) {
    double sx = 0.0, sv = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = inst.a(a, i);
      sx += w * msg.x(a, i);
      sv += w * w * msg.v(a, i);
    }
    for (int i = 0; i < n; ++i) {
      const double w = inst.a(a, i);
      AMPBP_CHECK(std::abs(w) > 1e-30, "hat_update: vanishing matrix entry");
      hat.xhat(a, i) = (inst.y(a) - (sx - w * msg.x(a, i))) / w;
      hat.vhat(a, i) = (sv - w * w * msg.v(a, i)) / (w * w);
      AMPBP_CHECK(hat.vhat(a, i) > 0.0, "hat_update: nonpositive hat variance");
    }
  }
  return hat;
}

// x_{i->a} = (sum_{b != a} xhat_{b->i}/vhat_{b->i}) / (2 beta + sum_{b != a} 1/vhat_{b->i})
// v_{i->a} = 1 / (2 beta + sum_{b != a} 1/vhat_{b->i})
inline MessageField node_update(const ProblemInstance& inst, const HatField& hat,
                                double beta) {
  const int m = inst.m(), n = inst.n();
  AMPBP_REQUIRE(beta > 0.0, "node_update: beta > 0");
  MessageField out;
  out.x.resize(m, n);
  out.v.resize(m, n);
  for (int i = 0; i < n; ++i) {
    double sp = 0.0, sm = 0.0;
    for (int a = 0; a < m; ++a) {
      const double p = 1.0 / hat.vhat(a, i);
      sp += p;
      sm += hat.xhat(a, i) * p;
    }
    for (int a = 0; a < m; ++a) {
      const double p = 1.0 / hat.vhat(a, i);
      const double prec = 2.0 * beta + sp - p;
      AMPBP_CHECK(prec > 0.0, "node_update: nonpositive precision");
      out.v(a, i) = 1.0 / prec;
      out.x(a, i) = (sm - hat.xhat(a, i) * p) * out.v(a, i);
    }
  }
  return out;
}

// Same algebra as node_update, applied to hat moments from any engine.
inline ShadowField shadow_step(const ProblemInstance& inst, const HatField& hat,
                               double beta) {
  const MessageField f = node_update(inst, hat, beta);
  return ShadowField{f.x, f.v};
}

// One step of the deterministic-coefficient mean recursion:
//   x'_{i->a} = Delta(t) sum_{b != a} y_b A_bi
//             - Delta(t) sum_{b != a} sum_{j != i} A_bi A_bj x_{j->b}
// computed with full row/column partial sums in O(mN).
inline Eigen::MatrixXd mp_step(const ProblemInstance& inst,
                               const Eigen::MatrixXd& x,
                               const VarianceSchedule& sched, int t) {
  const int m = inst.m(), n = inst.n();
  AMPBP_REQUIRE(t >= 0, "mp_step: t >= 0");
  AMPBP_REQUIRE(x.rows() == m && x.cols() == n, "mp_step: shape");
  const double dt = sched.delta_t(t);

  Eigen::VectorXd c = inst.a.transpose() * inst.y;              // c_i
  Eigen::VectorXd r(m);                                         // row inner sums
  for (int a = 0; a < m; ++a) r(a) = inst.a.row(a).dot(x.row(a));
  Eigen::VectorXd full = inst.a.transpose() * r;                // sum_b A_bi r_b
  Eigen::VectorXd diag(n);                                      // sum_b A_bi^2 x_{i->b}
  for (int i = 0; i < n; ++i)
    diag(i) = inst.a.col(i).array().square().matrix().dot(x.col(i));

  Eigen::MatrixXd out(m, n);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < m; ++a) {
      const double w = inst.a(a, i);
      const double lead = c(i) - inst.y(a) * w;
      const double cross = full(i) - w * r(a) - diag(i) + w * w * x(a, i);
      out(a, i) = dt * (lead - cross);
    }
  }
  return out;
}

struct BpStepStats {
  int t = 0;
  double max_var_dev = 0.0;        // max_{i,a} |v_{i->a} - v(t)|
  double mean_spread_over_a = 0.0; // mean_i (max_a x - min_a x)
  double max_spread_over_a = 0.0;
  double mp_bp_gap = 0.0;          // max_{i,a} |x_bp - x_mp|
};

struct BpTrace {
  std::vector<BpStepStats> stats;
  MessageField messages;  // state after the last step
  HatField hats;          // hats used by the last step
  Eigen::MatrixXd x_mp;   // co-iterated deterministic-coefficient means
};

inline BpStepStats bp_step_stats(const ProblemInstance& inst,
                                 const MessageField& msg,
                                 const Eigen::MatrixXd& x_mp,
                                 const VarianceSchedule& sched) {
  BpStepStats s;
  s.t = msg.t;
  const double vt = sched.v(msg.t);
  s.max_var_dev = (msg.v.array() - vt).abs().maxCoeff();
  double acc = 0.0, mx = 0.0;
  for (int i = 0; i < inst.n(); ++i) {
    const double spread = msg.x.col(i).maxCoeff() - msg.x.col(i).minCoeff();
    acc += spread;
    mx = std::max(mx, spread);
  }
  s.mean_spread_over_a = acc / inst.n();
  s.max_spread_over_a = mx;
  s.mp_bp_gap = (msg.x - x_mp).array().abs().maxCoeff();
  return s;
}

// Alternate hat/node updates from the all-zero, uniform-variance start,
// co-iterating the deterministic-coefficient recursion for comparison.
inline BpTrace run_bp(const ProblemInstance& inst, double beta, double v0,
                      int tmax) {
  AMPBP_REQUIRE(tmax >= 1, "run_bp: tmax >= 1");
  const VarianceSchedule sched(v0, beta, inst.delta);
  BpTrace trace;
  trace.messages = initial_messages(inst.m(), inst.n(), v0);
  trace.x_mp = Eigen::MatrixXd::Zero(inst.m(), inst.n());
  for (int t = 0; t < tmax; ++t) {
    trace.hats = hat_update(inst, trace.messages);
    MessageField next = node_update(inst, trace.hats, beta);
    next.t = t + 1;
    trace.x_mp = mp_step(inst, trace.x_mp, sched, t);
    trace.messages = std::move(next);
    trace.stats.push_back(bp_step_stats(inst, trace.messages, trace.x_mp, sched));
  }
  return trace;
}

}  // namespace ampbp
