// Command line front end: instance generation, the three iteration engines,
// the combinatorial verifier, tail checks and the config-driven study runner.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ampbp/amp.hpp"
#include "ampbp/chaos.hpp"
#include "ampbp/density_bp.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/gaussian_bp.hpp"
#include "ampbp/harness.hpp"
#include "ampbp/schedule.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("AMPBP_OUT_DIR");
  return env ? env : ".";
}

std::ofstream open_out(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot open output file " + path);
  return out;
}

ampbp::ProblemInstance load_or_die(const std::string& path) {
  return ampbp::load_instance(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"message-passing laboratory for l2 recovery under random designs"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "sample a problem instance and write it out");
  std::string g_family = "gaussian", g_mode = "uniform_box", g_out;
  int g_m = 100, g_n = 200;
  std::uint64_t g_seed = 1;
  gen->add_option("--family", g_family, "gaussian|rademacher|uniform");
  gen->add_option("--m", g_m, "rows")->required();
  gen->add_option("--n", g_n, "columns")->required();
  gen->add_option("--seed", g_seed, "seed");
  gen->add_option("--mode", g_mode, "uniform_box|planted");
  gen->add_option("--out", g_out, "output path")->required();

  // ---- schedule ----
  auto* sch = app.add_subcommand("schedule", "print the closed-form schedule table");
  double s_delta = 0.5, s_beta = 1.0, s_v0 = 1.0;
  int s_tmax = 10;
  std::string s_out;
  sch->add_option("--delta", s_delta);
  sch->add_option("--beta", s_beta);
  sch->add_option("--v0", s_v0);
  sch->add_option("--tmax", s_tmax);
  sch->add_option("--out", s_out, "CSV path (default stdout)");

  // ---- bp-run ----
  auto* bpr = app.add_subcommand("bp-run", "edgewise Gaussian-start run with summary trace");
  std::string b_inst, b_out;
  double b_beta = 1.0, b_v0 = 1.0;
  int b_tmax = 8;
  bpr->add_option("--instance", b_inst)->required();
  bpr->add_option("--beta", b_beta);
  bpr->add_option("--v0", b_v0);
  bpr->add_option("--tmax", b_tmax);
  bpr->add_option("--out", b_out, "trace CSV")->required();

  // ---- density-run ----
  auto* den = app.add_subcommand("density-run", "grid-density run for arbitrary priors/starts");
  std::string d_inst, d_out, d_init = "gauss";
  double d_q = 2.0, d_beta = 1.0, d_v0 = 1.0;
  int d_points = 1024, d_tmax = 1;
  den->add_option("--instance", d_inst)->required();
  den->add_option("--q", d_q);
  den->add_option("--beta", d_beta);
  den->add_option("--init", d_init, "gauss|uniform|laplace|skew");
  den->add_option("--v0", d_v0);
  den->add_option("--grid-points", d_points);
  den->add_option("--tmax", d_tmax);
  den->add_option("--out", d_out, "per-edge CSV")->required();

  // ---- amp-run ----
  auto* ampc = app.add_subcommand("amp-run", "node-indexed iteration with distance trace");
  std::string a_inst, a_out;
  double a_beta = 2.0, a_v0 = 1.0;
  int a_tmax = 20;
  ampc->add_option("--instance", a_inst)->required();
  ampc->add_option("--beta", a_beta);
  ampc->add_option("--v0", a_v0);
  ampc->add_option("--tmax", a_tmax);
  ampc->add_option("--out", a_out, "trace CSV")->required();

  // ---- chaos-verify ----
  auto* chv = app.add_subcommand("chaos-verify", "path expansion vs iterated recursion");
  int c_m = 4, c_n = 6, c_t = 2;
  std::uint64_t c_seed = 1;
  double c_beta = 1.0, c_v0 = 1.0;
  chv->add_option("--m", c_m);
  chv->add_option("--n", c_n);
  chv->add_option("--t", c_t);
  chv->add_option("--seed", c_seed);
  chv->add_option("--beta", c_beta);
  chv->add_option("--v0", c_v0);

  // ---- tail-check ----
  auto* tlc = app.add_subcommand("tail-check", "empirical survival vs the two-regime bound");
  std::string t_family = "gaussian", t_weights = "uniform", t_out;
  int t_p = 1, t_n = 256, t_lcount = 40;
  long t_trials = 1000000;
  double t_lmin = 0.4, t_lmax = 40.0;
  std::uint64_t t_seed = 1;
  int t_threads = 1;
  tlc->add_option("--family", t_family);
  tlc->add_option("--p", t_p);
  tlc->add_option("--n", t_n);
  tlc->add_option("--trials", t_trials);
  tlc->add_option("--lambda-min", t_lmin);
  tlc->add_option("--lambda-max", t_lmax);
  tlc->add_option("--lambda-count", t_lcount);
  tlc->add_option("--weights", t_weights, "uniform|spiked");
  tlc->add_option("--seed", t_seed);
  tlc->add_option("--threads", t_threads);
  tlc->add_option("--out", t_out, "CSV path (default stdout)");

  // ---- study ----
  auto* study = app.add_subcommand("study", "config-driven multi-N experiment");
  std::string st_config;
  std::vector<std::string> st_sets;
  std::string st_outdir;
  int st_threads = 0;
  study->add_option("--config", st_config, "key=value config file");
  study->add_option("--set", st_sets, "key=value override (repeatable)");
  study->add_option("--out", st_outdir, "output directory");
  study->add_option("--threads", st_threads);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ampbp::EnsembleSpec spec{ampbp::family_from(g_family), g_m, g_n, g_seed};
      const auto mode = g_mode == "planted" ? ampbp::OutcomeMode::planted
                                            : ampbp::OutcomeMode::uniform_box;
      const ampbp::ProblemInstance inst = ampbp::make_instance(spec, mode);
      auto out = open_out(g_out);
      ampbp::save_instance(inst, out);
      std::cout << "wrote " << g_out << " (hash " << std::hex
                << ampbp::content_hash(inst) << std::dec << ")\n";
    } else if (*sch) {
      ampbp::VarianceSchedule sched(s_v0, s_beta, s_delta);
      std::ostringstream csv;
      csv << "t,v,delta_t,gamma_1\n";
      for (int t = 0; t <= s_tmax; ++t) {
        csv << t << "," << ampbp::fmt_g(sched.v(t)) << ","
            << ampbp::fmt_g(sched.delta_t(t)) << ",";
        if (t >= 1) csv << ampbp::fmt_g(sched.gamma_lambda(t, 1));
        csv << "\n";
      }
      if (s_out.empty())
        std::cout << csv.str();
      else
        open_out(s_out) << csv.str();
    } else if (*bpr) {
      const auto inst = load_or_die(b_inst);
      const ampbp::BpTrace tr = ampbp::run_bp(inst, b_beta, b_v0, b_tmax);
      auto out = open_out(b_out);
      out << "t,max_var_dev,mean_spread_over_a,max_spread_over_a,mp_bp_gap\n";
      for (const auto& s : tr.stats)
        out << s.t << "," << ampbp::fmt_g(s.max_var_dev) << ","
            << ampbp::fmt_g(s.mean_spread_over_a) << ","
            << ampbp::fmt_g(s.max_spread_over_a) << ","
            << ampbp::fmt_g(s.mp_bp_gap) << "\n";
      std::cout << "wrote " << b_out << "\n";
    } else if (*den) {
      const auto inst = load_or_die(d_inst);
      ampbp::DensityOptions opt;
      opt.q = d_q;
      opt.beta = d_beta;
      opt.v0 = d_v0;
      opt.init = ampbp::init_from(d_init);
      opt.grid_points = d_points;
      opt.tmax = d_tmax;
      const ampbp::DensityTrace tr = ampbp::run_density_bp(inst, opt);
      auto out = open_out(d_out);
      out << "t,a,i,mean,var,rho3,gap_k1,gap_k2,gap_k3,gap_k4\n";
      for (const auto& step : tr.steps)
        for (int a = 0; a < inst.m(); ++a)
          for (int i = 0; i < inst.n(); ++i) {
            out << step.t << "," << a << "," << i << ","
                << ampbp::fmt_g(step.mean(a, i)) << ","
                << ampbp::fmt_g(step.var(a, i)) << ","
                << ampbp::fmt_g(step.rho3(a, i));
            for (int k = 0; k < 4; ++k)
              out << "," << ampbp::fmt_g(step.gap[k](a, i));
            out << "\n";
          }
      std::cout << "wrote " << d_out << "\n";
    } else if (*ampc) {
      const auto inst = load_or_die(a_inst);
      ampbp::VarianceSchedule sched(a_v0, a_beta, inst.delta);
      const ampbp::AmpTrace tr = ampbp::run_amp(inst, sched, a_tmax);
      auto out = open_out(a_out);
      out << "t,dist_to_star,residual,delta_t,rnorm_est\n";
      for (std::size_t t = 0; t < tr.dist_to_star.size(); ++t) {
        out << t << "," << ampbp::fmt_g(tr.dist_to_star[t]) << ","
            << ampbp::fmt_g(tr.residual[t]) << ",";
        if (t < tr.delta_ts.size())
          out << ampbp::fmt_g(tr.delta_ts[t]) << "," << ampbp::fmt_g(tr.rnorm_est[t]);
        else
          out << ",";
        out << "\n";
      }
      if (!tr.guarantee)
        std::cout << "note: beta below the contraction threshold, no guarantee\n";
      if (tr.diverged) std::cout << "note: stopped by the divergence guard\n";
      std::cout << "wrote " << a_out << "\n";
    } else if (*chv) {
      ampbp::EnsembleSpec spec{ampbp::Family::gaussian, c_m, c_n, c_seed};
      const ampbp::ProblemInstance inst = ampbp::make_instance(spec);
      ampbp::VarianceSchedule sched(c_v0, c_beta, inst.delta);
      std::cout << "t,max_relgap_chaos_vs_mp,max_xz_identity_gap,max_x_anchor_dev,z_rms\n";
      for (int t = 1; t <= c_t; ++t) {
        Eigen::MatrixXd x_mp = Eigen::MatrixXd::Zero(c_m, c_n);
        for (int s = 0; s < t; ++s) x_mp = ampbp::mp_step(inst, x_mp, sched, s);
        double relgap = 0, idgap = 0, adev = 0, z2 = 0;
        for (int i = 0; i < c_n; ++i) {
          double x_ref = 0;
          for (int a = 0; a < c_m; ++a) {
            const double cm = ampbp::chaos_mean(inst, sched, t, i, a);
            relgap = std::max(relgap,
                              std::abs(cm - x_mp(a, i)) / (1.0 + std::abs(x_mp(a, i))));
            const auto dz = ampbp::decompose_xz(inst, sched, t, i, a);
            idgap = std::max(idgap, std::abs(dz.x_part + dz.z_part - cm));
            if (a == 0)
              x_ref = dz.x_part;
            else
              adev = std::max(adev, std::abs(dz.x_part - x_ref));
            z2 += dz.z_part * dz.z_part;
          }
        }
        std::cout << t << "," << ampbp::fmt_g(relgap) << "," << ampbp::fmt_g(idgap)
                  << "," << ampbp::fmt_g(adev) << ","
                  << ampbp::fmt_g(std::sqrt(z2 / (c_m * c_n))) << "\n";
      }
    } else if (*tlc) {
      std::vector<double> lam;
      for (int k = 0; k < t_lcount; ++k)
        lam.push_back(t_lmin * std::pow(t_lmax / t_lmin, double(k) / (t_lcount - 1)));
      const auto profile = t_weights == "spiked" ? ampbp::WeightProfile::spiked
                                                 : ampbp::WeightProfile::uniform;
      const ampbp::TailReport tr =
          ampbp::tail_check(ampbp::family_from(t_family), t_p,
                            ampbp::make_weights(profile, t_n), lam, t_trials,
                            t_seed, t_threads);
      std::ostringstream csv;
      csv << "lambda,survival,se,bound\n";
      for (const auto& r : tr.rows)
        csv << ampbp::fmt_g(r.lambda) << "," << ampbp::fmt_g(r.survival) << ","
            << ampbp::fmt_g(r.se) << "," << ampbp::fmt_g(r.bound) << "\n";
      if (t_out.empty())
        std::cout << csv.str();
      else
        open_out(t_out) << csv.str();
      std::cout << "# dominated=" << (tr.dominated ? 1 : 0)
                << " degenerate=" << (tr.degenerate ? 1 : 0)
                << " exp_bottom=" << tr.exp_bottom << " exp_top=" << tr.exp_top
                << "\n";
    } else if (*study) {
      ampbp::ExperimentConfig cfg;
      if (!st_config.empty()) {
        std::ifstream in(st_config);
        if (!in.good()) throw std::runtime_error("cannot open config " + st_config);
        cfg = ampbp::load_config(in);
      }
      for (const auto& kv : st_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("--set expects key=value, got " + kv);
        ampbp::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (st_threads > 0) cfg.threads = st_threads;
      if (!st_outdir.empty()) cfg.out_dir = st_outdir;
      if (cfg.out_dir.empty()) cfg.out_dir = default_out_dir();

      const ampbp::ExperimentReport rep = ampbp::run_experiment(cfg);
      const std::string base =
          cfg.out_dir + "/" + ampbp::experiment_name(cfg.experiment);
      fs::create_directories(cfg.out_dir);
      {
        auto out = open_out(base + "_rows.csv");
        ampbp::write_rows_csv(rep.rows, out);
      }
      ordered_json meta;
      meta["experiment"] = ampbp::experiment_name(cfg.experiment);
      meta["n_list"] = cfg.n_list;
      meta["delta"] = cfg.delta;
      meta["beta"] = cfg.beta;
      meta["v0"] = cfg.v0;
      meta["q"] = cfg.q;
      meta["seeds"] = cfg.seeds;
      meta["seed"] = cfg.seed;
      meta["tmax"] = cfg.tmax;
      meta["replicates"] = rep.replicates;
      meta["failures"] = rep.failures;
      for (const auto& [name, fit] : rep.fits) {
        meta["fits"][name] = {{"slope", fit.slope},
                              {"intercept", fit.intercept},
                              {"r2", fit.r2},
                              {"n_points", fit.n_points}};
      }
      for (const auto& [name, val] : rep.scalars) meta["scalars"][name] = val;
      open_out(base + "_summary.json") << meta.dump(2) << "\n";
      std::cout << "wrote " << base << "_rows.csv and " << base
                << "_summary.json\n";
      for (const auto& [name, fit] : rep.fits)
        std::cout << "fit " << name << ": slope=" << fit.slope << " r2=" << fit.r2
                  << "\n";
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
