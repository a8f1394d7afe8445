#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ampbp/amp.hpp"
#include "ampbp/chaos.hpp"
#include "ampbp/common.hpp"
#include "ampbp/density_bp.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/gaussian_bp.hpp"
#include "ampbp/schedule.hpp"

namespace ampbp {

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

inline double quantile(std::vector<double> v, double p) {
  AMPBP_REQUIRE(!v.empty(), "quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * (v.size() - 1);
  const std::size_t lo = std::size_t(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int n_points = 0;
  int dropped = 0;  // nonpositive values removed before the log fit
};

// OLS of log(err) on log(N); nonpositive errors are dropped with a warning
// count, fewer than 3 survivors is an error.
inline ScalingFit fit_scaling(const std::vector<std::pair<double, double>>& pts) {
  std::vector<double> lx, ly;
  int dropped = 0;
  for (const auto& [n, err] : pts) {
    AMPBP_REQUIRE(n > 0.0, "fit_scaling: N must be positive");
    if (!(err > 0.0)) {
      ++dropped;
      continue;
    }
    lx.push_back(std::log(n));
    ly.push_back(std::log(err));
  }
  AMPBP_REQUIRE(lx.size() >= 3, "fit_scaling: need at least 3 positive points");
  const double n = double(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sx += lx[k];
    sy += ly[k];
    sxx += lx[k] * lx[k];
    sxy += lx[k] * ly[k];
    syy += ly[k] * ly[k];
  }
  ScalingFit f;
  const double vxx = sxx - sx * sx / n;
  const double vxy = sxy - sx * sy / n;
  const double vyy = syy - sy * sy / n;
  AMPBP_CHECK(vxx > 0.0, "fit_scaling: degenerate abscissae");
  f.slope = vxy / vxx;
  f.intercept = (sy - f.slope * sx) / n;
  f.r2 = (vyy > 0.0) ? (vxy * vxy) / (vxx * vyy) : 1.0;
  f.n_points = int(lx.size());
  f.dropped = dropped;
  return f;
}

// Deterministic work distribution: static block assignment, results land in
// caller-indexed slots, so thread count never changes any output.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const int k = next.fetch_add(1);
        if (k >= count) return;
        fn(k);
      }
    });
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Report rows
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string experiment;
  int n = 0;
  double delta = 0, beta = 0, v0 = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0;
};

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_rows_csv(const std::vector<ReportRow>& rows, std::ostream& out) {
  out << "experiment,N,delta,beta,v0,seed,metric,value\n";
  for (const auto& r : rows)
    out << r.experiment << "," << r.n << "," << fmt_g(r.delta) << ","
        << fmt_g(r.beta) << "," << fmt_g(r.v0) << "," << r.seed << "," << r.metric
        << "," << fmt_g(r.value) << "\n";
}

// ---------------------------------------------------------------------------
// Tail bound verification
// ---------------------------------------------------------------------------

enum class WeightProfile { uniform, spiked };

// Unit-norm weights.  The spiked profile places 0.298 of the norm on the
// first coordinate so that the heavy regime of sum x_j X_j^p is reachable at
// feasible trial counts.
inline Eigen::VectorXd make_weights(WeightProfile p, int n) {
  Eigen::VectorXd x(n);
  if (p == WeightProfile::uniform) {
    x.setConstant(1.0 / std::sqrt(double(n)));
  } else {
    const double head = 0.298;
    x.setConstant(std::sqrt((1.0 - head * head) / double(n - 1)));
    x(0) = head;
  }
  return x;
}

struct TailRow {
  double lambda = 0;
  double survival = 0;
  double se = 0;
  double bound = 0;  // front-fitted two-regime bound
};

struct TailReport {
  std::vector<TailRow> rows;
  double front_c = 0;      // fitted front constant
  bool dominated = true;   // bound >= empirical at all lambdas past the fit point
  bool degenerate = false; // zero-variance statistic (rademacher, even p)
  double exp_bottom = 0;   // local log-log exponent of -log survival, low window
  double exp_top = 0;      // same, high window
  double max_norm_tail_err = 0;  // gaussian p=1 only: max |emp - 2*Phi_bar| / se
};

namespace detail {

inline double draw_unit(Rng& rng, Family f) {
  switch (f) {
    case Family::gaussian: return rng.gaussian();
    case Family::rademacher: return rng.coin() ? 1.0 : -1.0;
    case Family::uniform: return rng.uniform_pm1() * 1.7320508075688772;
  }
  return 0.0;
}

// sub-exponential scale constant K with E exp(|X^p|^{2/p}/K) <= 2
inline double tail_K(Family f) {
  switch (f) {
    case Family::gaussian: return 8.0 / 3.0;
    case Family::rademacher: return 1.0 / std::log(2.0);
    case Family::uniform: return 3.0 / std::log(2.0);
  }
  return 3.0;
}

}  // namespace detail

// Empirical survival of |sum_j x_j X_j^p| on a lambda grid, against the
// two-regime sub-Weibull bound with the front constant fitted at the smallest
// lambda.  p = 1 uses the sub-Gaussian branch only.
inline TailReport tail_check(Family family, int p, const Eigen::VectorXd& x,
                             const std::vector<double>& lambdas, long trials,
                             std::uint64_t seed, int threads = 1) {
  AMPBP_REQUIRE(p >= 1, "tail_check: p >= 1");
  AMPBP_REQUIRE(trials >= 10000, "tail_check: trials >= 1e4");
  AMPBP_REQUIRE(lambdas.size() >= 4, "tail_check: need a lambda grid");
  const int n = int(x.size());
  std::vector<double> lam(lambdas);
  std::sort(lam.begin(), lam.end());

  const int blocks = int(std::max<long>(1, std::min<long>(64, trials / 10000)));
  const long per_block = trials / blocks;
  std::vector<std::vector<long>> counts(blocks, std::vector<long>(lam.size(), 0));
  std::vector<double> block_var(blocks, 0.0);
  parallel_for(blocks, threads, [&](int blk) {
    Rng rng(child_seed(seed, std::uint64_t(blk)));
    double s1 = 0, s2 = 0;
    const long reps = (blk == blocks - 1) ? trials - per_block * (blocks - 1) : per_block;
    for (long tr = 0; tr < reps; ++tr) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        const double xi = detail::draw_unit(rng, family);
        s += x(j) * std::pow(xi, p);
      }
      const double as = std::abs(s);
      s1 += s;
      s2 += s * s;
      for (std::size_t k = 0; k < lam.size() && as >= lam[k]; ++k)
        ++counts[blk][k];
    }
    block_var[blk] = s2 / reps - (s1 / reps) * (s1 / reps);
  });

  TailReport rep;
  const double K = detail::tail_K(family);
  const double norm2 = x.squaredNorm();
  const double scale = 8.0 * std::pow(2.0 * K, p) * norm2;
  const double crossover =
      4.0 * std::pow(2.0 * K, p) * norm2 *
      std::pow(double(n), (p == 1) ? 0.0 : (2.0 - p) / (2.0 * (p - 1.0)));
  const auto raw_bound = [&](double l) {
    if (p >= 2 && l > crossover)
      return 2.0 * std::exp(-0.125 * std::pow(l * n / (4.0 * std::pow(2.0 * K, p) * norm2),
                                              2.0 / p));
    return 2.0 * std::exp(-l * l / scale);
  };

  double meanvar = 0.0;
  for (double bv : block_var) meanvar += bv / blocks;
  rep.degenerate = meanvar < 1e-24;

  rep.rows.resize(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    long c = 0;
    for (int blk = 0; blk < blocks; ++blk) c += counts[blk][k];
    const double s = double(c) / trials;
    rep.rows[k] = TailRow{lam[k], s, std::sqrt(std::max(s * (1.0 - s), 0.0) / trials),
                          raw_bound(lam[k])};
  }

  // front constant from the smallest lambda with a nontrivial estimate
  std::size_t k0 = 0;
  while (k0 + 1 < lam.size() && rep.rows[k0].survival >= 1.0) ++k0;
  rep.front_c = rep.rows[k0].survival > 0.0
                    ? rep.rows[k0].survival / rep.rows[k0].bound
                    : 1.0;
  rep.dominated = true;
  for (std::size_t k = k0; k < lam.size(); ++k) {
    rep.rows[k].bound *= rep.front_c;
    if (rep.rows[k].survival > rep.rows[k].bound + 5.0 * rep.rows[k].se)
      rep.dominated = false;
  }

  if (!rep.degenerate) {
    // local exponents of L = -log survival over empirical-L windows
    const auto window_fit = [&](double l_lo, double l_hi) -> double {
      std::vector<std::pair<double, double>> pts;
      for (const auto& r : rep.rows) {
        if (r.survival <= 0.0) continue;
        const double L = -std::log(r.survival);
        if (L < l_lo || L > l_hi) continue;
        if (r.survival * trials < 30) continue;  // too noisy
        pts.emplace_back(r.lambda, L);
      }
      if (pts.size() < 3) return std::numeric_limits<double>::quiet_NaN();
      return fit_scaling(pts).slope;
    };
    rep.exp_bottom = window_fit(1.2, 5.0);
    rep.exp_top = window_fit(7.0, 10.8);
  }

  if (family == Family::gaussian && p == 1 && std::abs(norm2 - 1.0) < 1e-9) {
    for (const auto& r : rep.rows) {
      const double exact = std::erfc(r.lambda / std::sqrt(2.0));
      const double se = std::max(r.se, std::sqrt(exact / trials) * 0.5 + 1e-12);
      rep.max_norm_tail_err =
          std::max(rep.max_norm_tail_err, std::abs(r.survival - exact) / se);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Row/column norm concentration sweep
// ---------------------------------------------------------------------------

struct ConcentrationSweep {
  std::vector<int> n_list;
  std::vector<double> med_row_dev, q95_row_dev, med_col_dev;
  ScalingFit fit;       // slope of median row deviation vs N
  bool degenerate = false;  // exact norms (rademacher): no fit
};

inline ConcentrationSweep concentration_check(Family family,
                                              const std::vector<int>& n_list,
                                              int seeds, double delta,
                                              std::uint64_t seed, int threads = 1) {
  AMPBP_REQUIRE(!n_list.empty() && seeds >= 1, "concentration_check: args");
  ConcentrationSweep out;
  out.n_list = n_list;
  for (int n : n_list) {
    const int m = std::max(1, int(std::lround(delta * n)));
    std::vector<double> rdev(seeds), cdev(seeds);
    parallel_for(seeds, threads, [&](int s) {
      EnsembleSpec spec{family, m, n, child_seed(seed, std::uint64_t(s))};
      const NormDeviation d = row_col_concentration(sample_matrix(spec));
      rdev[s] = d.max_row_dev;
      cdev[s] = d.max_col_dev;
    });
    out.med_row_dev.push_back(median(rdev));
    out.q95_row_dev.push_back(quantile(rdev, 0.95));
    out.med_col_dev.push_back(median(cdev));
  }
  out.degenerate = family == Family::rademacher ||
                   *std::max_element(out.med_row_dev.begin(), out.med_row_dev.end()) <= 0.0;
  if (!out.degenerate && n_list.size() >= 3) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < n_list.size(); ++k)
      pts.emplace_back(double(n_list[k]), out.med_row_dev[k]);
    out.fit = fit_scaling(pts);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

enum class Experiment {
  bp_variance,
  bp_consensus,
  shadow,
  amp_convergence,
  chaos,
  density_gauss_gap,
  tails,
  concentration
};

inline const char* experiment_name(Experiment e) {
  switch (e) {
    case Experiment::bp_variance: return "bp_variance";
    case Experiment::bp_consensus: return "bp_consensus";
    case Experiment::shadow: return "shadow";
    case Experiment::amp_convergence: return "amp_convergence";
    case Experiment::chaos: return "chaos";
    case Experiment::density_gauss_gap: return "density_gauss_gap";
    case Experiment::tails: return "tails";
    case Experiment::concentration: return "concentration";
  }
  return "?";
}

inline Experiment experiment_from(const std::string& s) {
  for (Experiment e :
       {Experiment::bp_variance, Experiment::bp_consensus, Experiment::shadow,
        Experiment::amp_convergence, Experiment::chaos,
        Experiment::density_gauss_gap, Experiment::tails, Experiment::concentration})
    if (s == experiment_name(e)) return e;
  AMPBP_REQUIRE(false, "unknown experiment '" + s + "'");
  return Experiment::bp_variance;
}

struct ExperimentConfig {
  Experiment experiment = Experiment::bp_variance;
  std::vector<int> n_list{100, 200, 400, 800};
  double delta = 0.5;
  double beta = 1.0;
  double v0 = 1.0;
  double q = 2.0;
  int seeds = 30;
  std::uint64_t seed = 1;
  int tmax = 8;
  long trials = 100000;
  int threads = 1;
  std::string out_dir;

  void validate() const {
    AMPBP_REQUIRE(!n_list.empty(), "ExperimentConfig: n_list empty");
    for (std::size_t k = 1; k < n_list.size(); ++k)
      AMPBP_REQUIRE(n_list[k] > n_list[k - 1],
                    "ExperimentConfig: n_list strictly increasing");
    AMPBP_REQUIRE(seeds >= 1, "ExperimentConfig: seeds >= 1");
    AMPBP_REQUIRE(delta > 0.0 && delta < 1.0, "ExperimentConfig: delta in (0,1)");
  }
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::map<std::string, ScalingFit> fits;
  std::map<std::string, double> scalars;
  int failures = 0;
  int replicates = 0;
};

namespace detail {

struct ReplicateTask {
  int n = 0;
  int seed_index = 0;
  std::uint64_t seed = 0;
};

inline std::vector<ReplicateTask> replicate_grid(const ExperimentConfig& cfg) {
  std::vector<ReplicateTask> tasks;
  for (int n : cfg.n_list)
    for (int s = 0; s < cfg.seeds; ++s)
      tasks.push_back({n, s, child_seed(cfg.seed, std::uint64_t(s))});
  return tasks;
}

// run one replicate body over the grid with failure isolation
inline void run_replicates(
    const ExperimentConfig& cfg, ExperimentReport& rep,
    const std::function<std::vector<std::pair<std::string, double>>(
        const ReplicateTask&)>& body) {
  const auto tasks = replicate_grid(cfg);
  std::vector<std::vector<std::pair<std::string, double>>> results(tasks.size());
  std::vector<int> failed(tasks.size(), 0);
  parallel_for(int(tasks.size()), cfg.threads, [&](int k) {
    try {
      results[k] = body(tasks[k]);
    } catch (const std::exception&) {
      failed[k] = 1;
    }
  });
  rep.replicates = int(tasks.size());
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    if (failed[k]) {
      ++rep.failures;
      rep.rows.push_back(ReportRow{experiment_name(cfg.experiment), tasks[k].n,
                                   cfg.delta, cfg.beta, cfg.v0, tasks[k].seed,
                                   "replicate_error", 1.0});
      continue;
    }
    for (const auto& [metric, value] : results[k])
      rep.rows.push_back(ReportRow{experiment_name(cfg.experiment), tasks[k].n,
                                   cfg.delta, cfg.beta, cfg.v0, tasks[k].seed,
                                   metric, value});
  }
  AMPBP_CHECK(rep.failures * 2 <= rep.replicates,
              "run_experiment: more than half of the replicates failed");
}

inline void fit_metric_over_n(const ExperimentConfig& cfg, ExperimentReport& rep,
                              const std::string& metric) {
  if (cfg.n_list.size() < 3) return;
  std::vector<std::pair<double, double>> pts;
  for (int n : cfg.n_list) {
    std::vector<double> vals;
    for (const auto& r : rep.rows)
      if (r.n == n && r.metric == metric) vals.push_back(r.value);
    if (vals.size() >= 1) pts.emplace_back(double(n), median(vals));
  }
  if (pts.size() >= 3) rep.fits[metric] = fit_scaling(pts);
}

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport rep;
  switch (cfg.experiment) {
    case Experiment::bp_variance: {
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        EnsembleSpec spec{Family::gaussian, int(std::lround(cfg.delta * task.n)),
                          task.n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        const BpTrace tr = run_bp(inst, cfg.beta, cfg.v0, cfg.tmax);
        double dev = 0.0;
        for (const auto& s : tr.stats) dev = std::max(dev, s.max_var_dev);
        std::vector<std::pair<std::string, double>> out{
            {"max_var_dev", dev},
            {"exceed_half", dev > std::pow(double(task.n), -0.5) ? 1.0 : 0.0},
            {"exceed_04", dev > std::pow(double(task.n), -0.4) ? 1.0 : 0.0}};
        return out;
      });
      detail::fit_metric_over_n(cfg, rep, "max_var_dev");
      break;
    }
    case Experiment::bp_consensus: {
      const int tmax = std::min(cfg.tmax, 4);
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        EnsembleSpec spec{Family::gaussian, int(std::lround(cfg.delta * task.n)),
                          task.n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        const VarianceSchedule sched(cfg.v0, cfg.beta, inst.delta);
        std::vector<std::pair<std::string, double>> out;
        MessageField msg = initial_messages(inst.m(), inst.n(), cfg.v0);
        Eigen::VectorXd X = Eigen::VectorXd::Zero(inst.n());
        std::vector<Eigen::VectorXd> amp_iters{X};
        for (int t = 0; t < tmax; ++t) {
          X = amp_step(inst, X, sched, t);
          amp_iters.push_back(X);
        }
        for (int t = 0; t < tmax; ++t) {
          const HatField hat = hat_update(inst, msg);
          msg = node_update(inst, hat, cfg.beta);
          msg.t = t + 1;
          const Eigen::VectorXd bp_mean = msg.x.colwise().mean().transpose();
          // both index conventions: bp mean at t+1 against X(t+1) and X(t)
          out.emplace_back("gap_same_t" + std::to_string(t + 1),
                           (bp_mean - amp_iters[t + 1]).lpNorm<Eigen::Infinity>());
          out.emplace_back("gap_shift_t" + std::to_string(t + 1),
                           (bp_mean - amp_iters[t]).lpNorm<Eigen::Infinity>());
        }
        return out;
      });
      for (int t = 1; t <= std::min(cfg.tmax, 4); ++t)
        detail::fit_metric_over_n(cfg, rep, "gap_same_t" + std::to_string(t));
      break;
    }
    case Experiment::shadow: {
      const int tmax = std::min(cfg.tmax, 2);
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        EnsembleSpec spec{Family::gaussian, std::max(2, int(std::lround(cfg.delta * task.n))),
                          task.n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        std::vector<std::pair<std::string, double>> out;
        // variance gap against the closed-form path: symmetric flat start
        DensityOptions du;
        du.q = 2.0;
        du.beta = cfg.beta;
        du.v0 = cfg.v0;
        du.init = InitKind::uniform;
        du.tmax = tmax;
        du.with_gaps = false;
        const DensityTrace tu = run_density_bp(inst, du);
        const VarianceSchedule sched(cfg.v0, cfg.beta, inst.delta);
        // mean gap against the Gaussian-start run: skewed start
        DensityOptions ds = du;
        ds.init = InitKind::skew;
        const DensityTrace tsk = run_density_bp(inst, ds);
        BpTrace gauss = run_bp(inst, cfg.beta, cfg.v0, tmax);
        MessageField gmsg = initial_messages(inst.m(), inst.n(), cfg.v0);
        for (int t = 1; t <= tmax; ++t) {
          const HatField hat = hat_update(inst, gmsg);
          gmsg = node_update(inst, hat, cfg.beta);
          gmsg.t = t;
          out.emplace_back(
              "vgap_t" + std::to_string(t),
              (tu.steps[t - 1].var.array() - sched.v(t)).abs().maxCoeff());
          out.emplace_back(
              "xgap_t" + std::to_string(t),
              (tsk.steps[t - 1].mean - gmsg.x).array().abs().maxCoeff());
        }
        return out;
      });
      for (int t = 1; t <= tmax; ++t) {
        detail::fit_metric_over_n(cfg, rep, "vgap_t" + std::to_string(t));
        detail::fit_metric_over_n(cfg, rep, "xgap_t" + std::to_string(t));
      }
      break;
    }
    case Experiment::amp_convergence: {
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        EnsembleSpec spec{Family::gaussian, int(std::lround(cfg.delta * task.n)),
                          task.n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        const VarianceSchedule sched(cfg.v0, cfg.beta, inst.delta);
        const AmpTrace tr = run_amp(inst, sched, cfg.tmax);
        const double rel = tr.dist_to_star.back() / tr.x_star.norm();
        double contraction_ok = 1.0;
        for (std::size_t t = 2; t + 1 < tr.dist_to_star.size(); ++t)
          if (tr.dist_to_star[t + 1] >
              tr.dist_to_star[t] * (tr.rnorm_est[t] + 1e-10))
            contraction_ok = 0.0;
        double sup_rnorm = 0.0;
        for (double r : tr.rnorm_est) sup_rnorm = std::max(sup_rnorm, r);
        std::vector<std::pair<std::string, double>> out{
            {"rel_dist_final", rel},
            {"converged", (!tr.diverged && rel <= 1e-3) ? 1.0 : 0.0},
            {"diverged", tr.diverged ? 1.0 : 0.0},
            {"contraction_ok", contraction_ok},
            {"sup_rnorm", sup_rnorm}};
        return out;
      });
      break;
    }
    case Experiment::chaos: {
      const int t = std::min(cfg.tmax, 3);
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        const int n = task.n;
        const int m = std::max(2, int(std::lround(cfg.delta * n)));
        EnsembleSpec spec{Family::gaussian, m, n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        const VarianceSchedule sched(cfg.v0, cfg.beta, inst.delta);
        Eigen::MatrixXd x_mp = Eigen::MatrixXd::Zero(m, n);
        for (int s = 0; s < t; ++s) x_mp = mp_step(inst, x_mp, sched, s);
        double relgap = 0.0, idgap = 0.0, adev = 0.0, z2 = 0.0;
        int zc = 0;
        for (int i = 0; i < n; ++i) {
          double x_ref = 0.0;
          for (int a = 0; a < m; ++a) {
            const double cm = chaos_mean(inst, sched, t, i, a);
            relgap = std::max(relgap, std::abs(cm - x_mp(a, i)) /
                                          (1.0 + std::abs(x_mp(a, i))));
            const XzDecomposition dz = decompose_xz(inst, sched, t, i, a);
            idgap = std::max(idgap, std::abs(dz.x_part + dz.z_part - cm));
            if (a == 0)
              x_ref = dz.x_part;
            else
              adev = std::max(adev, std::abs(dz.x_part - x_ref));
            z2 += dz.z_part * dz.z_part;
            ++zc;
          }
        }
        std::vector<std::pair<std::string, double>> out{
            {"chaos_mp_relgap", relgap},
            {"xz_identity_gap", idgap},
            {"x_anchor_dev", adev},
            {"z_rms", std::sqrt(z2 / zc)}};
        return out;
      });
      detail::fit_metric_over_n(cfg, rep, "z_rms");
      break;
    }
    case Experiment::density_gauss_gap: {
      detail::run_replicates(cfg, rep, [&](const detail::ReplicateTask& task) {
        EnsembleSpec spec{Family::gaussian, std::max(2, int(std::lround(cfg.delta * task.n))),
                          task.n, task.seed};
        const ProblemInstance inst = make_instance(spec);
        DensityOptions opt;
        opt.q = cfg.q;
        opt.beta = cfg.beta;
        opt.v0 = cfg.v0;
        opt.init = InitKind::uniform;
        opt.tmax = 1;
        const DensityTrace tr = run_density_bp(inst, opt);
        DensityOptions opt2 = opt;
        opt2.init = InitKind::skew;
        const DensityTrace tr2 = run_density_bp(inst, opt2);
        std::vector<std::pair<std::string, double>> out;
        for (int k = 0; k < 4; ++k) {
          std::vector<double> g(tr.steps[0].gap[k].data(),
                                tr.steps[0].gap[k].data() + tr.steps[0].gap[k].size());
          std::vector<double> g2(tr2.steps[0].gap[k].data(),
                                 tr2.steps[0].gap[k].data() + tr2.steps[0].gap[k].size());
          out.emplace_back("gap_k" + std::to_string(k + 1), median(g));
          out.emplace_back("skew_gap_k" + std::to_string(k + 1), median(g2));
        }
        return out;
      });
      for (int k = 1; k <= 4; ++k) {
        detail::fit_metric_over_n(cfg, rep, "gap_k" + std::to_string(k));
        detail::fit_metric_over_n(cfg, rep, "skew_gap_k" + std::to_string(k));
      }
      break;
    }
    case Experiment::tails: {
      const int n = cfg.n_list.back();
      std::vector<double> lam;
      for (int k = 0; k < 48; ++k)
        lam.push_back(0.4 * std::pow(60.0, k / 47.0));
      const TailReport tr = tail_check(
          Family::gaussian, int(cfg.q), make_weights(WeightProfile::spiked, n), lam,
          cfg.trials, cfg.seed, cfg.threads);
      for (const auto& r : tr.rows)
        rep.rows.push_back(ReportRow{experiment_name(cfg.experiment), n, cfg.delta,
                                     cfg.beta, cfg.v0, cfg.seed, "survival_" + fmt_g(r.lambda),
                                     r.survival});
      rep.scalars["exp_bottom"] = tr.exp_bottom;
      rep.scalars["exp_top"] = tr.exp_top;
      rep.scalars["dominated"] = tr.dominated ? 1.0 : 0.0;
      rep.replicates = 1;
      break;
    }
    case Experiment::concentration: {
      const ConcentrationSweep sweep = concentration_check(
          Family::gaussian, cfg.n_list, cfg.seeds, cfg.delta, cfg.seed, cfg.threads);
      for (std::size_t k = 0; k < cfg.n_list.size(); ++k) {
        rep.rows.push_back(ReportRow{experiment_name(cfg.experiment), cfg.n_list[k],
                                     cfg.delta, cfg.beta, cfg.v0, cfg.seed,
                                     "med_row_dev", sweep.med_row_dev[k]});
        rep.rows.push_back(ReportRow{experiment_name(cfg.experiment), cfg.n_list[k],
                                     cfg.delta, cfg.beta, cfg.v0, cfg.seed,
                                     "q95_row_dev", sweep.q95_row_dev[k]});
      }
      if (!sweep.degenerate && cfg.n_list.size() >= 3)
        rep.fits["med_row_dev"] = sweep.fit;
      rep.replicates = cfg.seeds * int(cfg.n_list.size());
      break;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Flat key=value config files
// ---------------------------------------------------------------------------

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& val) {
  if (key == "experiment") cfg.experiment = experiment_from(val);
  else if (key == "n_list") cfg.n_list = parse_int_list(val);
  else if (key == "delta") cfg.delta = std::stod(val);
  else if (key == "beta") cfg.beta = std::stod(val);
  else if (key == "v0") cfg.v0 = std::stod(val);
  else if (key == "q") cfg.q = std::stod(val);
  else if (key == "seeds") cfg.seeds = std::stoi(val);
  else if (key == "seed") cfg.seed = std::stoull(val);
  else if (key == "tmax") cfg.tmax = std::stoi(val);
  else if (key == "trials") cfg.trials = std::stol(val);
  else if (key == "threads") cfg.threads = std::stoi(val);
  else if (key == "out_dir") cfg.out_dir = val;
  else AMPBP_REQUIRE(false, "unknown config key '" + key + "'");
}

// Lines of `key=value`; blank lines and lines starting with '#' are skipped.
inline ExperimentConfig load_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    AMPBP_REQUIRE(eq != std::string::npos, "config: expected key=value, got '" + line + "'");
    apply_config_entry(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

}  // namespace ampbp
