#include <catch_amalgamated.hpp>

#include "ampbp/chaos.hpp"
#include "ampbp/gaussian_bp.hpp"
#include "ampbp/harness.hpp"

using namespace ampbp;

TEST_CASE("depth one reduces to the leading sum") {
  const EnsembleSpec spec{Family::gaussian, 4, 6, 21};
  const ProblemInstance inst = make_instance(spec);
  const VarianceSchedule sched(1.0, 0.9, inst.delta);
  for (int a = 0; a < 4; ++a)
    for (int i = 0; i < 6; ++i) {
      double lead = 0;
      for (int b = 0; b < 4; ++b)
        if (b != a) lead += inst.y(b) * inst.a(b, i);
      CHECK(chaos_mean(inst, sched, 1, i, a) ==
            Catch::Approx(sched.gamma_lambda(1, 1) * lead).margin(1e-14));
    }
}

TEST_CASE("zero outcome kills every term") {
  EnsembleSpec spec{Family::gaussian, 3, 5, 4};
  ProblemInstance inst = make_instance(spec);
  inst.y.setZero();
  const VarianceSchedule sched(1.0, 1.0, inst.delta);
  for (int t = 1; t <= 3; ++t)
    CHECK(chaos_mean(inst, sched, t, 2, 1) == 0.0);
}

TEST_CASE("expansion equals the iterated recursion") {
  for (int s = 0; s < 10; ++s) {
    const EnsembleSpec spec{Family::gaussian, 3, 4, std::uint64_t(100 + s)};
    const ProblemInstance inst = make_instance(spec);
    const VarianceSchedule sched(1.0, 0.8, inst.delta);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 4);
    for (int step = 0; step < 2; ++step) x = mp_step(inst, x, sched, step);
    for (int a = 0; a < 3; ++a)
      for (int i = 0; i < 4; ++i) {
        const double cm = chaos_mean(inst, sched, 2, i, a);
        CHECK(std::abs(cm - x(a, i)) <= 1e-12 * (1.0 + std::abs(x(a, i))));
      }
  }
}

TEST_CASE("bulk/boundary split") {
  const EnsembleSpec spec{Family::gaussian, 4, 6, 77};
  const ProblemInstance inst = make_instance(spec);
  const VarianceSchedule sched(1.0, 1.1, inst.delta);
  for (int t = 1; t <= 3; ++t) {
    double x_ref = 0.0;
    for (int i = 0; i < 6; ++i)
      for (int a = 0; a < 4; ++a) {
        const XzDecomposition dz = decompose_xz(inst, sched, t, i, a);
        const double cm = chaos_mean(inst, sched, t, i, a);
        CHECK(std::abs(dz.x_part + dz.z_part - cm) <= 1e-12);
        if (a == 0)
          x_ref = dz.x_part;
        else
          CHECK(std::abs(dz.x_part - x_ref) <= 1e-12);
      }
  }
}

TEST_CASE("boundary part shrinks with dimension") {
  // RMS over anchors and seeds at fixed aspect ratio, slope about -1/2
  const std::vector<int> ns{6, 8, 10};
  std::vector<std::pair<double, double>> pts;
  for (int n : ns) {
    const int m = n / 2;
    std::vector<double> rms;
    for (int s = 0; s < 100; ++s) {
      const EnsembleSpec spec{Family::gaussian, m, n, std::uint64_t(500 + s)};
      const ProblemInstance inst = make_instance(spec);
      const VarianceSchedule sched(1.0, 1.0, inst.delta);
      double z2 = 0;
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < m; ++a) {
          z2 += std::pow(decompose_xz(inst, sched, 2, i, a).z_part, 2);
          ++cnt;
        }
      rms.push_back(std::sqrt(z2 / cnt));
    }
    pts.emplace_back(double(n), median(rms));
  }
  const ScalingFit fit = fit_scaling(pts);
  CHECK(fit.slope >= -0.85);
  CHECK(fit.slope <= -0.15);
}

TEST_CASE("pairing expectation basics") {
  Eigen::MatrixXd c2(2, 2);
  c2 << 1.0, 0.37, 0.37, 1.0;
  CHECK(wick_expectation(c2) == Catch::Approx(0.37));

  CHECK(wick_expectation(Eigen::MatrixXd::Ones(4, 4)) == Catch::Approx(3.0));
  CHECK(wick_expectation(Eigen::MatrixXd::Ones(6, 6)) == Catch::Approx(15.0));
  CHECK(wick_expectation(Eigen::MatrixXd::Ones(3, 3)) == 0.0);

  // labels (1,1,2,2,3,3): only the label-matched matching survives
  Eigen::MatrixXd c6 = Eigen::MatrixXd::Zero(6, 6);
  const int lab[6] = {1, 1, 2, 2, 3, 3};
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) c6(p, q) = (lab[p] == lab[q]) ? 1.0 : 0.0;
  CHECK(wick_expectation(c6) == Catch::Approx(1.0));
}

TEST_CASE("pairing counts match the double factorial") {
  long long expect = 1;
  for (int k = 1; k <= 6; ++k) {
    expect *= (2 * k - 1);
    CHECK(pairing_count(2 * k) == expect);
  }
  CHECK(pairing_count(5) == 0);
}

TEST_CASE("pairing expectation against sampling") {
  Eigen::MatrixXd cov(4, 4);
  cov << 1.0, 0.5, 0.2, 0.0,
         0.5, 1.0, 0.1, 0.3,
         0.2, 0.1, 1.0, -0.4,
         0.0, 0.3, -0.4, 1.0;
  const double exact = wick_expectation(cov);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  Rng rng(8);
  const long trials = 200000;
  double s1 = 0, s2 = 0;
  for (long tr = 0; tr < trials; ++tr) {
    Eigen::VectorXd g(4);
    for (int k = 0; k < 4; ++k) g(k) = rng.gaussian();
    const Eigen::VectorXd z = l * g;
    const double prod = z(0) * z(1) * z(2) * z(3);
    s1 += prod;
    s2 += prod * prod;
  }
  const double mean = s1 / trials;
  const double se = std::sqrt((s2 / trials - mean * mean) / trials);
  CHECK(std::abs(mean - exact) <= 4.0 * se);
}

TEST_CASE("off-diagonal chaos second moments") {
  const auto g1 = chaos_l2_mc(Family::gaussian, 1, 32, 20000, 5);
  CHECK(std::abs(g1.mean - 1.0) <= 3.0 * g1.se);

  const auto g2 = chaos_l2_mc(Family::gaussian, 2, 4, 200000, 6);
  const double exact = chaos_l2_gaussian_exact(2, 4);
  CHECK(exact == Catch::Approx(2.0 * (1.0 - 0.25)).epsilon(1e-12));
  CHECK(std::abs(g2.mean - exact) <= 3.0 * g2.se);

  CHECK_THROWS_AS(chaos_l2_mc(Family::gaussian, 2, 8, 10, 1), std::invalid_argument);
}

TEST_CASE("rademacher chaos is not above gaussian") {
  for (int r : {2, 3}) {
    const auto rad = chaos_l2_mc(Family::rademacher, r, 64, 40000, 9);
    const auto gau = chaos_l2_mc(Family::gaussian, r, 64, 40000, 10);
    const double se = std::sqrt(rad.se * rad.se + gau.se * gau.se);
    CHECK(rad.mean <= gau.mean + 10.0 / 64.0 + 1.645 * se);
  }
}

TEST_CASE("message moments stay hypercontractive-flat across N") {
  // L4/L2 over seeds of the depth-2 iterate at a fixed anchor
  for (int n : {100, 200, 400}) {
    double s2 = 0, s4 = 0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
      const EnsembleSpec spec{Family::gaussian, n / 2, n, std::uint64_t(7000 + s)};
      const ProblemInstance inst = make_instance(spec);
      const VarianceSchedule sched(1.0, 1.0, inst.delta);
      Eigen::MatrixXd x = Eigen::MatrixXd::Zero(inst.m(), inst.n());
      for (int step = 0; step < 2; ++step) x = mp_step(inst, x, sched, step);
      const double v = x(0, 0);
      s2 += v * v;
      s4 += v * v * v * v;
    }
    const double ratio = std::pow(s4 / seeds, 0.25) / std::sqrt(s2 / seeds);
    CHECK(ratio <= 10.0);
  }
}

TEST_CASE("term cap guard") {
  const EnsembleSpec spec{Family::gaussian, 40, 80, 1};
  const ProblemInstance inst = make_instance(spec);
  const VarianceSchedule sched(1.0, 1.0, inst.delta);
  CHECK_THROWS_AS(chaos_mean(inst, sched, 5, 0, 0, 1000000), std::invalid_argument);
}
