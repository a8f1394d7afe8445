#include <catch_amalgamated.hpp>

#include "ampbp/gaussian_bp.hpp"
#include "ampbp/harness.hpp"

using namespace ampbp;

namespace {

ProblemInstance tiny_instance() {
  ProblemInstance inst;
  inst.a.resize(2, 3);
  inst.a << 0.6, -0.4, 0.9, -0.7, 0.5, 0.3;
  inst.y.resize(2);
  inst.y << 0.8, -0.5;
  inst.delta = 2.0 / 3.0;
  inst.spec = EnsembleSpec{Family::gaussian, 2, 3, 0};
  return inst;
}

// per-edge reference loops, no partial-sum tricks
HatField naive_hat(const ProblemInstance& inst, const MessageField& msg) {
  HatField hat;
  hat.xhat.resize(inst.m(), inst.n());
  hat.vhat.resize(inst.m(), inst.n());
  for (int a = 0; a < inst.m(); ++a)
    for (int i = 0; i < inst.n(); ++i) {
      double sx = 0, sv = 0;
      for (int j = 0; j < inst.n(); ++j) {
        if (j == i) continue;
        sx += inst.a(a, j) * msg.x(a, j);
        sv += inst.a(a, j) * inst.a(a, j) * msg.v(a, j);
      }
      hat.xhat(a, i) = (inst.y(a) - sx) / inst.a(a, i);
      hat.vhat(a, i) = sv / (inst.a(a, i) * inst.a(a, i));
    }
  return hat;
}

Eigen::MatrixXd naive_mp(const ProblemInstance& inst, const Eigen::MatrixXd& x,
                         double dt) {
  Eigen::MatrixXd out(inst.m(), inst.n());
  for (int a = 0; a < inst.m(); ++a)
    for (int i = 0; i < inst.n(); ++i) {
      double lead = 0, cross = 0;
      for (int b = 0; b < inst.m(); ++b) {
        if (b == a) continue;
        lead += inst.y(b) * inst.a(b, i);
        for (int j = 0; j < inst.n(); ++j) {
          if (j == i) continue;
          cross += inst.a(b, i) * inst.a(b, j) * x(b, j);
        }
      }
      out(a, i) = dt * (lead - cross);
    }
  return out;
}

}  // namespace

TEST_CASE("hat update at the flat start") {
  const ProblemInstance inst = tiny_instance();
  const double v0 = 1.3;
  const MessageField msg = initial_messages(2, 3, v0);
  const HatField hat = hat_update(inst, msg);
  for (int a = 0; a < 2; ++a) {
    double s2 = 0;
    for (int j = 0; j < 3; ++j) s2 += inst.a(a, j) * inst.a(a, j);
    for (int i = 0; i < 3; ++i) {
      CHECK(hat.xhat(a, i) == Catch::Approx(inst.y(a) / inst.a(a, i)).epsilon(1e-14));
      const double expect =
          v0 * (s2 - inst.a(a, i) * inst.a(a, i)) / (inst.a(a, i) * inst.a(a, i));
      CHECK(hat.vhat(a, i) == Catch::Approx(expect).epsilon(1e-13));
    }
  }
}

TEST_CASE("hat update equals the per-edge reference loop") {
  const ProblemInstance inst = tiny_instance();
  MessageField msg = initial_messages(2, 3, 0.9);
  msg.x << 0.1, -0.2, 0.3, 0.05, 0.4, -0.6;
  msg.v << 0.9, 1.1, 0.8, 1.2, 0.7, 1.0;
  const HatField fast = hat_update(inst, msg);
  const HatField slow = naive_hat(inst, msg);
  CHECK((fast.xhat - slow.xhat).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((fast.vhat - slow.vhat).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("node update limits and closed forms") {
  const ProblemInstance inst = tiny_instance();
  const MessageField msg = initial_messages(2, 3, 1.0);
  const HatField hat = hat_update(inst, msg);

  // dominating prior: everything collapses to zero
  const MessageField big = node_update(inst, hat, 1e12);
  CHECK(big.x.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(big.v.maxCoeff() <= 1e-6);

  // m = 2: each node sees a single factor, the two-Gaussian product formula
  const double beta = 0.8;
  const MessageField out = node_update(inst, hat, beta);
  for (int i = 0; i < 3; ++i) {
    for (int a = 0; a < 2; ++a) {
      const int b = 1 - a;
      const double prec = 2.0 * beta + 1.0 / hat.vhat(b, i);
      CHECK(out.v(a, i) == Catch::Approx(1.0 / prec).epsilon(1e-13));
      CHECK(out.x(a, i) ==
            Catch::Approx(hat.xhat(b, i) / hat.vhat(b, i) / prec).epsilon(1e-13));
    }
  }
}

TEST_CASE("first step mean tracks the leading sum") {
  const EnsembleSpec spec{Family::gaussian, 200, 400, 17};
  const ProblemInstance inst = make_instance(spec);
  const VarianceSchedule sched(1.0, 1.0, inst.delta);
  const MessageField msg = initial_messages(inst.m(), inst.n(), 1.0);
  const MessageField x1 = node_update(inst, hat_update(inst, msg), 1.0);
  double dev = 0.0;
  for (int i = 0; i < inst.n(); ++i) {
    double lead = inst.a.col(i).dot(inst.y);
    for (int a = 0; a < inst.m(); ++a) {
      const double approx = sched.delta_t(0) * (lead - inst.y(a) * inst.a(a, i));
      dev = std::max(dev, std::abs(x1.x(a, i) - approx));
    }
  }
  CHECK(dev <= 5.0 / std::sqrt(double(inst.n())));
}

TEST_CASE("mp step against the quadruple loop") {
  const ProblemInstance inst = tiny_instance();
  const VarianceSchedule sched(1.0, 0.7, inst.delta);
  Eigen::MatrixXd x(2, 3);
  x << 0.3, -0.1, 0.2, 0.4, 0.0, -0.5;
  const Eigen::MatrixXd fast = mp_step(inst, x, sched, 1);
  const Eigen::MatrixXd slow = naive_mp(inst, x, sched.delta_t(1));
  CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-14);

  // zero state: only the leading term survives
  const Eigen::MatrixXd z = mp_step(inst, Eigen::MatrixXd::Zero(2, 3), sched, 0);
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 3; ++i) {
      double lead = 0;
      for (int b = 0; b < 2; ++b)
        if (b != a) lead += inst.y(b) * inst.a(b, i);
      CHECK(z(a, i) == Catch::Approx(sched.delta_t(0) * lead).margin(1e-14));
    }

  // beta = 0 degenerates to unit step factor
  const VarianceSchedule flat(1.0, 0.0, inst.delta);
  CHECK(flat.delta_t(3) == Catch::Approx(1.0));
}

TEST_CASE("shadow step reproduces the node update exactly") {
  const ProblemInstance inst = tiny_instance();
  MessageField msg = initial_messages(2, 3, 1.0);
  msg.x << 0.2, -0.3, 0.1, 0.0, 0.5, -0.2;
  const HatField hat = hat_update(inst, msg);
  const MessageField node = node_update(inst, hat, 0.9);
  const ShadowField sh = shadow_step(inst, hat, 0.9);
  CHECK((sh.mean - node.x).cwiseAbs().maxCoeff() <= 1e-13 * node.x.cwiseAbs().maxCoeff());
  CHECK((sh.var - node.v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero outcome with symmetric start stays at zero") {
  ProblemInstance inst = tiny_instance();
  inst.y.setZero();
  const BpTrace tr = run_bp(inst, 1e-9, 1.0, 5);
  CHECK(tr.messages.x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("edge variances concentrate around the schedule") {
  int hits = 0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    const EnsembleSpec spec{Family::gaussian, 100, 200, std::uint64_t(300 + s)};
    const ProblemInstance inst = make_instance(spec);
    const BpTrace tr = run_bp(inst, 1.0, 1.0, 8);
    double dev = 0.0;
    for (const auto& st : tr.stats) dev = std::max(dev, st.max_var_dev);
    if (dev <= 5.0 / std::sqrt(200.0)) ++hits;
  }
  CHECK(hits >= int(0.95 * seeds));
}

TEST_CASE("variance spread across edges stays small") {
  const EnsembleSpec spec{Family::gaussian, 200, 400, 8080};
  const ProblemInstance inst = make_instance(spec);
  const BpTrace tr = run_bp(inst, 1.0, 1.0, 6);
  const double spread =
      tr.messages.v.maxCoeff() - tr.messages.v.minCoeff();
  CHECK(spread <= 10.0 / std::sqrt(400.0));
}

TEST_CASE("mean spread over factor nodes grows at most linearly in t") {
  std::vector<double> ratios;
  for (int s = 0; s < 10; ++s) {
    const EnsembleSpec spec{Family::gaussian, 100, 200, std::uint64_t(70 + s)};
    const ProblemInstance inst = make_instance(spec);
    const BpTrace tr = run_bp(inst, 1.0, 1.0, 8);
    for (const auto& st : tr.stats)
      ratios.push_back(st.max_spread_over_a / (st.t / std::sqrt(200.0)));
  }
  CHECK(median(ratios) <= 8.0);
}

TEST_CASE("deterministic-coefficient recursion tracks the exact one") {
  // median over seeds of max |x_bp - x_mp| at t=3 decays like N^(-1/2)
  const std::vector<int> ns{100, 200, 400, 800};
  std::vector<std::pair<double, double>> pts;
  for (int n : ns) {
    std::vector<double> gaps;
    for (int s = 0; s < 20; ++s) {
      const EnsembleSpec spec{Family::gaussian, n / 2, n, std::uint64_t(40 + s)};
      const ProblemInstance inst = make_instance(spec);
      const BpTrace tr = run_bp(inst, 1.0, 1.0, 3);
      gaps.push_back(tr.stats.back().mp_bp_gap);
    }
    pts.emplace_back(double(n), median(gaps));
  }
  const ScalingFit fit = fit_scaling(pts);
  CHECK(fit.slope >= -0.7);
  CHECK(fit.slope <= -0.3);
}

TEST_CASE("mean-field surrogate variance recursion is exact") {
  // replacing the quadratic row/column sums by their means reproduces the
  // closed form exactly
  const VarianceSchedule sched(1.7, 0.8, 0.35);
  double v = 1.7;
  for (int t = 1; t <= 12; ++t) {
    const double vhat_times_a2 = v / sched.delta;  // A^2 vhat = sum_{j!=i} A^2 v
    v = 1.0 / (2.0 * sched.beta + 1.0 / vhat_times_a2);  // column sum of A^2 -> 1
    CHECK(v == Catch::Approx(sched.v(t)).epsilon(1e-12));
  }
}

TEST_CASE("guards") {
  ProblemInstance inst = tiny_instance();
  inst.a(0, 0) = 0.0;
  const MessageField msg = initial_messages(2, 3, 1.0);
  CHECK_THROWS_AS(hat_update(inst, msg), std::runtime_error);
  CHECK_THROWS_AS(run_bp(tiny_instance(), 1.0, 1.0, 0), std::invalid_argument);
}
