#include <catch_amalgamated.hpp>
#include <sstream>

#include "ampbp/harness.hpp"

using namespace ampbp;

TEST_CASE("scaling fits on exact power laws") {
  std::vector<std::pair<double, double>> pts;
  for (int n : {100, 200, 400, 800}) pts.emplace_back(n, 7.0 / std::sqrt(double(n)));
  ScalingFit f = fit_scaling(pts);
  CHECK(f.slope == Catch::Approx(-0.5).margin(1e-12));
  CHECK(f.r2 == Catch::Approx(1.0).margin(1e-12));

  pts.clear();
  for (int n : {50, 100, 200}) pts.emplace_back(n, 3.0 / n);
  CHECK(fit_scaling(pts).slope == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("scaling fit input handling") {
  std::vector<std::pair<double, double>> pts{{100, 0.1}, {200, 0.0}, {400, 0.05},
                                             {800, 0.02}};
  const ScalingFit f = fit_scaling(pts);
  CHECK(f.dropped == 1);
  CHECK(f.n_points == 3);
  CHECK_THROWS_AS(fit_scaling({{100, 0.1}, {200, 0.2}}), std::invalid_argument);
  CHECK_THROWS_AS(fit_scaling({{100, -1}, {200, -1}, {300, -1}, {400, 0.5}}),
                  std::invalid_argument);
}

TEST_CASE("quantiles") {
  std::vector<double> v{5, 1, 3, 2, 4};
  CHECK(median(v) == Catch::Approx(3.0));
  CHECK(quantile(v, 0.0) == Catch::Approx(1.0));
  CHECK(quantile(v, 1.0) == Catch::Approx(5.0));
}

TEST_CASE("config parsing and overrides") {
  std::stringstream cfgtext;
  cfgtext << "# comment\n"
          << "experiment=bp_variance\n"
          << "n_list=100,200,400\n"
          << "delta=0.5\nbeta=1.5\nseeds=7\nseed=99\ntmax=4\n";
  ExperimentConfig cfg = load_config(cfgtext);
  CHECK(cfg.experiment == Experiment::bp_variance);
  CHECK(cfg.n_list == std::vector<int>{100, 200, 400});
  CHECK(cfg.beta == Catch::Approx(1.5));
  CHECK(cfg.seeds == 7);
  apply_config_entry(cfg, "beta", "2.25");
  CHECK(cfg.beta == Catch::Approx(2.25));
  CHECK_THROWS_AS(apply_config_entry(cfg, "bogus", "1"), std::invalid_argument);

  ExperimentConfig bad;
  bad.n_list.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.n_list = {200, 100};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("experiments are deterministic and thread-count independent") {
  ExperimentConfig cfg;
  cfg.experiment = Experiment::bp_variance;
  cfg.n_list = {60, 90, 120};
  cfg.seeds = 4;
  cfg.seed = 5;
  cfg.tmax = 3;
  cfg.threads = 1;
  const ExperimentReport a = run_experiment(cfg);
  cfg.threads = 4;
  const ExperimentReport b = run_experiment(cfg);
  std::ostringstream sa, sb;
  write_rows_csv(a.rows, sa);
  write_rows_csv(b.rows, sb);
  CHECK(sa.str() == sb.str());
  CHECK(a.fits.at("max_var_dev").slope ==
        Catch::Approx(b.fits.at("max_var_dev").slope).margin(0));
}

TEST_CASE("replicate failures are isolated, mass failure aborts") {
  ExperimentConfig cfg;
  cfg.experiment = Experiment::chaos;
  cfg.n_list = {6, 300};  // the large size exceeds the expansion term cap
  cfg.seeds = 3;
  cfg.tmax = 3;
  const ExperimentReport rep = run_experiment(cfg);
  CHECK(rep.failures == 3);
  int err_rows = 0, good_rows = 0;
  for (const auto& r : rep.rows) {
    if (r.metric == "replicate_error") ++err_rows;
    if (r.metric == "chaos_mp_relgap") ++good_rows;
  }
  CHECK(err_rows == 3);
  CHECK(good_rows == 3);

  cfg.n_list = {300, 400};
  CHECK_THROWS_AS(run_experiment(cfg), std::runtime_error);
}

TEST_CASE("normal-sum survival matches the exact tail") {
  std::vector<double> lam;
  for (int k = 0; k < 12; ++k) lam.push_back(0.25 + 0.25 * k);
  const TailReport tr = tail_check(Family::gaussian, 1,
                                   make_weights(WeightProfile::uniform, 64), lam,
                                   200000, 77, 2);
  CHECK(tr.max_norm_tail_err <= 5.0);
  CHECK(tr.dominated);
}

TEST_CASE("even powers of signs are degenerate") {
  std::vector<double> lam{5.0, 6.5, 7.9, 8.1, 9.5};
  const TailReport tr = tail_check(Family::rademacher, 2,
                                   make_weights(WeightProfile::uniform, 64), lam,
                                   20000, 3, 1);
  CHECK(tr.degenerate);
  // sum x_j X_j^2 = sum x_j = sqrt(64) = 8: survival is a step there
  for (const auto& r : tr.rows)
    CHECK(r.survival == (r.lambda < 8.0 ? 1.0 : 0.0));
}

TEST_CASE("norm concentration sweep") {
  const ConcentrationSweep sw = concentration_check(
      Family::gaussian, {100, 200, 400}, 30, 0.5, 17, 2);
  CHECK_FALSE(sw.degenerate);
  CHECK(sw.fit.slope >= -0.7);
  CHECK(sw.fit.slope <= -0.3);

  const ConcentrationSweep rad = concentration_check(
      Family::rademacher, {100, 200, 400}, 5, 0.5, 17, 1);
  CHECK(rad.degenerate);
  CHECK(rad.med_row_dev[0] <= 1e-12);

  const ConcentrationSweep single =
      concentration_check(Family::gaussian, {128}, 5, 0.5, 17, 1);
  CHECK(single.med_row_dev.size() == 1);
  CHECK(single.fit.n_points == 0);  // no fit on a single size
}

TEST_CASE("consensus experiment reports both index conventions") {
  ExperimentConfig cfg;
  cfg.experiment = Experiment::bp_consensus;
  cfg.n_list = {80, 120, 160};
  cfg.seeds = 3;
  cfg.tmax = 2;
  const ExperimentReport rep = run_experiment(cfg);
  int same = 0, shift = 0;
  for (const auto& r : rep.rows) {
    if (r.metric.rfind("gap_same_", 0) == 0) ++same;
    if (r.metric.rfind("gap_shift_", 0) == 0) ++shift;
  }
  CHECK(same == shift);
  CHECK(same > 0);
}
