#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "ampbp/common.hpp"
#include "ampbp/ensemble.hpp"
#include "ampbp/gaussian_bp.hpp"
#include "ampbp/grid_density.hpp"

namespace ampbp {

// ---------------------------------------------------------------------------
// Initial message densities.  These are known analytic families, so their
// characteristic functions are evaluated in closed form; a sampled version of
// a discontinuous density would pollute the quadrature CF tail.
// ---------------------------------------------------------------------------

enum class InitKind { gauss, uniform, laplace, skew };

inline const char* init_name(InitKind k) {
  switch (k) {
    case InitKind::gauss: return "gauss";
    case InitKind::uniform: return "uniform";
    case InitKind::laplace: return "laplace";
    case InitKind::skew: return "skew";
  }
  return "?";
}

inline InitKind init_from(const std::string& s) {
  if (s == "gauss") return InitKind::gauss;
  if (s == "uniform") return InitKind::uniform;
  if (s == "laplace") return InitKind::laplace;
  if (s == "skew") return InitKind::skew;
  AMPBP_REQUIRE(false, "unknown init '" + s + "'");
  return InitKind::gauss;
}

// Centred, variance v0, bounded continuous with finite fourth moment.
// `skew` is a mean-shifted exponential, the one family with a nonzero third
// cumulant (kappa3 = 2 v0^{3/2}).
struct InitDensity {
  InitKind kind = InitKind::gauss;
  double v0 = 1.0;

  double pdf(double s) const {
    switch (kind) {
      case InitKind::gauss:
        return std::exp(-0.5 * s * s / v0) / std::sqrt(2.0 * M_PI * v0);
      case InitKind::uniform: {
        const double w = std::sqrt(3.0 * v0);
        return (std::abs(s) <= w) ? 1.0 / (2.0 * w) : 0.0;
      }
      case InitKind::laplace: {
        const double b = std::sqrt(0.5 * v0);
        return std::exp(-std::abs(s) / b) / (2.0 * b);
      }
      case InitKind::skew: {
        const double th = 1.0 / std::sqrt(v0);
        const double u = s + 1.0 / th;
        return (u >= 0.0) ? th * std::exp(-th * u) : 0.0;
      }
    }
    return 0.0;
  }

  std::complex<double> cf(double u) const {
    switch (kind) {
      case InitKind::gauss:
        return {std::exp(-0.5 * v0 * u * u), 0.0};
      case InitKind::uniform: {
        const double x = u * std::sqrt(3.0 * v0);
        const double v = (std::abs(x) < 1e-6) ? 1.0 - x * x / 6.0 : std::sin(x) / x;
        return {v, 0.0};
      }
      case InitKind::laplace:
        return {1.0 / (1.0 + 0.5 * v0 * u * u), 0.0};
      case InitKind::skew: {
        const double th = 1.0 / std::sqrt(v0);
        const std::complex<double> i(0.0, 1.0);
        return std::exp(-i * (u / th)) * (th / (th - i * u));
      }
    }
    return {1.0, 0.0};
  }

  double mean() const { return 0.0; }
  double var() const { return v0; }
  double kappa3() const {
    return kind == InitKind::skew ? 2.0 * std::pow(v0, 1.5) : 0.0;
  }
  double rho3() const { return kappa3(); }  // centred families: raw == cumulant
};

// ---------------------------------------------------------------------------
// Prior and window
// ---------------------------------------------------------------------------

// Normalised exp(-beta |s|^q) on the grid.  If more than 1e-6 of the mass
// falls outside the window the grid is widened (up to 8 retries).
inline GridDensity prior_density(double q, double beta, const Grid& grid) {
  AMPBP_REQUIRE(q > 0.0 && beta > 0.0, "prior_density: q, beta > 0");
  Grid g = grid;
  for (int attempt = 0;; ++attempt) {
    GridDensity d = make_density(
        g, [&](double s) { return std::exp(-beta * std::pow(std::abs(s), q)); },
        false);
    // unnormalised tail estimate: compare edge value against an exponential
    // continuation of the last decade
    const double z = d.mass();
    const double edge = std::max(d.values(0), d.values(d.values.size() - 1));
    const double tail_est = edge * std::max(1.0, std::abs(g.hi)) * 2.0;
    if (tail_est <= 1e-6 * z) {
      d.normalize();
      return d;
    }
    AMPBP_CHECK(attempt < 8, "prior_density: grid too narrow after widening");
    const double c = (g.hi - g.lo) / 2.0;
    g.lo -= c;
    g.hi += c;
  }
}

// Run window.  The |y|/|A| term is capped: a hat whose location sits outside
// any fixed window is automatically wide on the scale of its own deviation
// (location/width is O(1)), so only resolution matters and an uncapped term
// would destroy it.
inline Grid run_window(const ProblemInstance& inst, double v0max, int points) {
  double min_abs = std::numeric_limits<double>::infinity();
  for (int a = 0; a < inst.m(); ++a)
    for (int i = 0; i < inst.n(); ++i)
      min_abs = std::min(min_abs, std::abs(inst.a(a, i)));
  const double ymax = inst.y.lpNorm<Eigen::Infinity>();
  double s = std::max(12.0, 8.0 * std::sqrt(v0max));
  if (min_abs > 0.0) s = std::max(s, std::min(4.0 * ymax / min_abs, 48.0));
  return Grid{-s, s, points};
}

// ---------------------------------------------------------------------------
// Characteristic-function machinery
// ---------------------------------------------------------------------------

namespace detail {

// CF of a grid density at u_k = k*step, k = 0..count-1, trapezoid weights,
// rotation recurrence over frequencies (one sincos per grid point).
inline void grid_cf_batch(const GridDensity& d, double step, int count,
                          std::complex<double>* out) {
  for (int k = 0; k < count; ++k) out[k] = 0.0;
  const double h = d.grid.step();
  const int g_last = int(d.values.size()) - 1;
  for (int g = 0; g <= g_last; ++g) {
    const double w = ((g == 0 || g == g_last) ? 0.5 : 1.0) * h * d.values(g);
    if (w == 0.0) continue;
    const double s = d.grid.point(g);
    const std::complex<double> rot(std::cos(step * s), std::sin(step * s));
    std::complex<double> ph(w, 0.0);
    for (int k = 0; k < count; ++k) {
      out[k] += ph;
      ph *= rot;
    }
  }
}

// One factor of a weighted-sum CF: either an analytic initial density or a
// grid message; evaluated at u_k = k*step.
struct CfSource {
  const InitDensity* init = nullptr;
  const GridDensity* grid = nullptr;
  double mean = 0.0;
  double var = 0.0;

  void batch(double step, int count, std::complex<double>* out) const {
    if (init != nullptr) {
      for (int k = 0; k < count; ++k) out[k] = init->cf(step * k);
    } else {
      grid_cf_batch(*grid, step, count, out);
    }
  }
};

struct RowTables {
  double domega = 0.0;
  int count = 0;
  // leave-one-out CF products: loo[i][k] = prod_{j != i} cf_j(-A_aj omega_k)
  std::vector<std::vector<std::complex<double>>> loo;
};

inline RowTables build_row_tables(const ProblemInstance& inst, int a,
                                  const std::vector<CfSource>& src,
                                  const Grid& grid, double tail_tol = 1e-13,
                                  int max_count = 65536) {
  const int n = inst.n();
  double var_total = 0.0, max_bulk = 0.0, mean_total = 0.0;
  std::vector<double> w2v(n), wm(n);
  for (int j = 0; j < n; ++j) {
    const double w = inst.a(a, j);
    w2v[j] = w * w * src[j].var;
    wm[j] = w * src[j].mean;
    var_total += w2v[j];
    mean_total += wm[j];
  }
  double sig_min2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double s2 = std::max(var_total - w2v[i], 1e-30);
    sig_min2 = std::min(sig_min2, s2);
    max_bulk = std::max(max_bulk, std::abs(mean_total - wm[i]) + 10.0 * std::sqrt(s2));
  }
  const double max_eval =
      std::abs(inst.y(a)) + inst.a.row(a).cwiseAbs().maxCoeff() * std::max(std::abs(grid.lo), grid.hi);
  const double span = 1.3 * (max_eval + max_bulk) + 4.0;

  RowTables t;
  t.domega = 2.0 * M_PI / span;
  int count = std::max(64, int(std::ceil(45.0 / std::sqrt(sig_min2) / t.domega)) + 1);
  count = std::min(count, max_count);

  std::vector<std::vector<std::complex<double>>> cf(n);
  for (;;) {
    for (int j = 0; j < n; ++j) {
      cf[j].resize(count);
      src[j].batch(-inst.a(a, j) * t.domega, count, cf[j].data());
    }
    // prefix/suffix leave-one-out products
    std::vector<std::vector<std::complex<double>>> pre(n + 1), suf(n + 1);
    for (int j = 0; j <= n; ++j) {
      pre[j].assign(count, {1.0, 0.0});
      suf[j].assign(count, {1.0, 0.0});
    }
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < count; ++k) pre[j + 1][k] = pre[j][k] * cf[j][k];
    for (int j = n - 1; j >= 0; --j)
      for (int k = 0; k < count; ++k) suf[j][k] = suf[j + 1][k] * cf[j][k];
    t.loo.assign(n, {});
    double tail = 0.0;
    for (int i = 0; i < n; ++i) {
      t.loo[i].resize(count);
      for (int k = 0; k < count; ++k) t.loo[i][k] = pre[i][k] * suf[i + 1][k];
      tail = std::max(tail, std::abs(t.loo[i][count - 1]));
    }
    t.count = count;
    if (tail <= tail_tol || count >= max_count) return t;
    count = std::min(max_count, count * 2);
  }
}

// Invert the leave-one-out CF onto the run grid through the affine map
// s -> y_a - A_ai s and scale by |A_ai|.
inline GridDensity invert_hat(const ProblemInstance& inst, int a, int i,
                              const RowTables& t, const Grid& grid) {
  const double ai = inst.a(a, i);
  AMPBP_CHECK(std::abs(ai) > 1e-30, "hat_density: vanishing matrix entry");
  const auto& p = t.loo[i];
  int kmax = t.count;
  double pmax = 0.0;
  for (int k = 0; k < t.count; ++k) pmax = std::max(pmax, std::abs(p[k]));
  while (kmax > 8 && std::abs(p[kmax - 1]) < 1e-17 * pmax) --kmax;

  GridDensity d;
  d.grid = grid;
  d.values.resize(grid.points);
  const double scale = t.domega / M_PI;
  for (int g = 0; g < grid.points; ++g) {
    const double w = inst.y(a) - ai * grid.point(g);
    const std::complex<double> rot(std::cos(t.domega * w), -std::sin(t.domega * w));
    std::complex<double> ph(1.0, 0.0);
    double acc = -0.5 * p[0].real();
    for (int k = 0; k < kmax; ++k) {
      acc += p[k].real() * ph.real() - p[k].imag() * ph.imag();
      ph *= rot;
    }
    d.values(g) = std::abs(ai) * scale * acc;
  }
  return d;
}

}  // namespace detail

// Density of (y_a - sum_{j != i} A_aj xi_j)/A_ai on the target grid, where
// xi_j follows the row message ν_{j->a} given as a grid density.
inline GridDensity hat_density(const ProblemInstance& inst, int i, int a,
                               const std::vector<GridDensity>& row_msgs) {
  AMPBP_REQUIRE(int(row_msgs.size()) == inst.n(), "hat_density: need n messages");
  AMPBP_REQUIRE(inst.n() <= 32, "hat_density: n <= 32");
  const Grid grid = row_msgs[0].grid;
  AMPBP_REQUIRE(grid.points <= 1024, "hat_density: grid cap 1024");
  std::vector<detail::CfSource> src(inst.n());
  for (int j = 0; j < inst.n(); ++j) {
    const GridMoments mo = row_msgs[j].moments();
    src[j] = detail::CfSource{nullptr, &row_msgs[j], mo.mean, mo.var};
  }
  const detail::RowTables t = detail::build_row_tables(inst, a, src, grid);
  GridDensity d = detail::invert_hat(inst, a, i, t, grid);
  AMPBP_CHECK(d.values.maxCoeff() > 0.0, "hat_density: CF product underflow");
  d.normalize();
  return d;
}

// Same law with analytic initial messages, on an arbitrary grid.
inline GridDensity hat_density_init(const ProblemInstance& inst, int i, int a,
                                    const InitDensity& init, const Grid& grid,
                                    bool normalized = true) {
  std::vector<detail::CfSource> src(
      inst.n(), detail::CfSource{&init, nullptr, init.mean(), init.var()});
  const detail::RowTables t = detail::build_row_tables(inst, a, src, grid);
  GridDensity d = detail::invert_hat(inst, a, i, t, grid);
  AMPBP_CHECK(d.values.maxCoeff() > 0.0, "hat_density_init: CF product underflow");
  if (normalized) d.normalize();
  return d;
}

// Pointwise product prior * prod hats, in log space, renormalised.
inline GridDensity node_density(const GridDensity& prior,
                                const std::vector<const GridDensity*>& hats) {
  const Grid grid = prior.grid;
  Eigen::ArrayXd logv(grid.points);
  for (int g = 0; g < grid.points; ++g)
    logv(g) = std::log(std::max(prior.values(g), 1e-300));
  for (const GridDensity* h : hats) {
    AMPBP_REQUIRE(h->grid.points == grid.points, "node_density: common grid");
    for (int g = 0; g < grid.points; ++g)
      logv(g) += std::log(std::max(h->values(g), 1e-300));
  }
  const double mx = logv.maxCoeff();
  AMPBP_CHECK(std::isfinite(mx) && mx > -690.0 * (double(hats.size()) + 1.0),
              "node_density: vanishing product");
  GridDensity d;
  d.grid = grid;
  d.values = (logv - mx).exp();
  d.normalize();
  return d;
}

// ---------------------------------------------------------------------------
// Third-cumulant correction
// ---------------------------------------------------------------------------

// P_{a->i} = -A_ai^{-3} sum_{j != i} A_aj^3 (rho3_j - 3 x_j v_j - x_j^3),
// the summed third cumulant of the scaled summands.
inline double edgeworth_p3(const ProblemInstance& inst, int a, int i,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                           const Eigen::VectorXd& rho3) {
  AMPBP_REQUIRE(x.size() == inst.n() && v.size() == inst.n() && rho3.size() == inst.n(),
                "edgeworth_p3: moment arrays of length n");
  double acc = 0.0;
  for (int j = 0; j < inst.n(); ++j) {
    if (j == i) continue;
    const double w = inst.a(a, j);
    acc += w * w * w * (rho3(j) - 3.0 * x(j) * v(j) - std::pow(x(j), 3));
  }
  const double ai = inst.a(a, i);
  return -acc / (ai * ai * ai);
}

inline double edgeworth_p3_init(const ProblemInstance& inst, int a, int i,
                                const InitDensity& init) {
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(inst.n());
  const Eigen::VectorXd v = Eigen::VectorXd::Constant(inst.n(), init.var());
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(inst.n(), init.rho3());
  return edgeworth_p3(inst, a, i, x, v, r);
}

struct EdgeworthData {
  double p3;
  double xhat;
  double vhat;  // > 0
};

// 1 + (1/3!) P / vhat^{3/2} H3((s - xhat)/sqrt(vhat)), H3(x) = x^3 - 3x.
inline double edg_factor(double s, const EdgeworthData& ed) {
  AMPBP_REQUIRE(ed.vhat > 0.0, "edg_factor: vhat > 0");
  const double z = (s - ed.xhat) / std::sqrt(ed.vhat);
  return 1.0 + ed.p3 / (6.0 * std::pow(ed.vhat, 1.5)) * (z * z * z - 3.0 * z);
}

// Finite-difference third derivative of the log moment generating function of
// sum_{j != i} (y_a/(A_ai (N-1)) - (A_aj/A_ai) xi_j); independent quadrature
// oracle for edgeworth_p3.  With include_prior the integrand carries the
// exp(-beta|s|^q) reweighting (the alternative reading; values then differ and
// the caller is expected to surface the gap, not hide it).
inline double cumulant_p3_fd(const ProblemInstance& inst, int a, int i,
                             const InitDensity& init, bool include_prior = false,
                             double q = 2.0, double beta = 1.0) {
  const int n = inst.n();
  const double ai = inst.a(a, i);
  double lo, hi;
  if (init.kind == InitKind::skew) {
    lo = -std::sqrt(init.v0);
    hi = lo + 40.0 * std::sqrt(init.v0);
  } else if (init.kind == InitKind::uniform) {
    lo = -std::sqrt(3.0 * init.v0);
    hi = -lo;
  } else {
    lo = -16.0 * std::sqrt(init.v0);
    hi = -lo;
  }
  const int pts = 20001;  // Simpson, even interval count
  const double h = (hi - lo) / (pts - 1);

  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    const double c1 = inst.y(a) / (ai * (n - 1));
    const double c2 = inst.a(a, j) / ai;
    const auto logM = [&](double r) {
      double acc = 0.0;
      for (int g = 0; g < pts; ++g) {
        const double s = lo + g * h;
        double f = init.pdf(s) * std::exp(r * (c1 - c2 * s));
        if (include_prior) f *= std::exp(-beta * std::pow(std::abs(s), q));
        const double w = (g == 0 || g == pts - 1) ? 1.0 : (g % 2 == 1 ? 4.0 : 2.0);
        acc += w * f;
      }
      return std::log(acc * h / 3.0);
    };
    const double hr = 0.05 / (1.0 + std::abs(c2) * (1.0 + std::sqrt(init.v0)));
    total += (logM(2 * hr) - 2.0 * logM(hr) + 2.0 * logM(-hr) - logM(-2 * hr)) /
             (2.0 * hr * hr * hr);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Gaussian surrogate comparison
// ---------------------------------------------------------------------------

// [s^k] under exp(-beta|s|^q) phi_{mu,sigma}, k = 1..kmax.
inline std::vector<double> surrogate_moments(double mu, double sigma, double q,
                                             double beta, int kmax) {
  AMPBP_REQUIRE(sigma > 0.0 && kmax >= 1 && kmax <= 6, "surrogate_moments: args");
  const double sd = std::sqrt(sigma);
  const double lo = std::min(-2.0, mu - 14.0 * sd);
  const double hi = std::max(2.0, mu + 14.0 * sd);
  const int pts = 8193;
  const double h = (hi - lo) / (pts - 1);
  std::vector<double> num(kmax + 1, 0.0);
  for (int g = 0; g < pts; ++g) {
    const double s = lo + g * h;
    const double w = ((g == 0 || g == pts - 1) ? 0.5 : 1.0) *
                     std::exp(-beta * std::pow(std::abs(s), q) -
                              0.5 * (s - mu) * (s - mu) / sigma);
    double p = w;
    num[0] += p;
    for (int k = 1; k <= kmax; ++k) {
      p *= s;
      num[k] += p;
    }
  }
  AMPBP_CHECK(num[0] > 0.0, "surrogate_moments: vanishing normalisation");
  std::vector<double> out(kmax);
  for (int k = 1; k <= kmax; ++k) out[k - 1] = num[k] / num[0];
  return out;
}

// |raw moments of d - surrogate moments|, k = 1..kmax.
inline std::vector<double> gaussian_proximity(const GridDensity& d, double mu,
                                              double sigma, double q, double beta,
                                              int kmax) {
  const std::vector<double> sur = surrogate_moments(mu, sigma, q, beta, kmax);
  std::vector<double> out(kmax);
  for (int k = 1; k <= kmax; ++k) out[k - 1] = std::abs(d.raw_moment(k) - sur[k - 1]);
  return out;
}

// ---------------------------------------------------------------------------
// Full nonparametric run
// ---------------------------------------------------------------------------

struct DensityOptions {
  double q = 2.0;
  double beta = 1.0;
  double v0 = 1.0;
  InitKind init = InitKind::gauss;
  int grid_points = 1024;
  int tmax = 1;
  bool with_gaps = true;
};

struct DensityStep {
  int t = 0;
  Eigen::MatrixXd mean, var, rho3;          // message moments, entry (a,i)
  Eigen::MatrixXd shadow_mean, shadow_var;  // Gaussian-product push of true hat moments
  std::array<Eigen::MatrixXd, 4> gap;       // |moment - surrogate|, k = 1..4
};

struct DensityTrace {
  DensityOptions opt;
  Grid grid;
  std::vector<DensityStep> steps;
};

inline DensityTrace run_density_bp(const ProblemInstance& inst,
                                   const DensityOptions& opt) {
  const int m = inst.m(), n = inst.n();
  AMPBP_REQUIRE(n <= 32, "run_density_bp: n <= 32");
  AMPBP_REQUIRE(opt.tmax >= 1 && opt.tmax <= 6, "run_density_bp: tmax in [1,6]");
  AMPBP_REQUIRE(opt.grid_points >= 128 && opt.grid_points <= 1024,
                "run_density_bp: grid points in [128,1024]");

  DensityTrace trace;
  trace.opt = opt;
  trace.grid = run_window(inst, opt.v0, opt.grid_points);
  const GridDensity prior = prior_density(opt.q, opt.beta, trace.grid);
  Eigen::ArrayXd logprior(trace.grid.points);
  for (int g = 0; g < trace.grid.points; ++g)
    logprior(g) = std::log(std::max(prior.values(g), 1e-300));

  const InitDensity init{opt.init, opt.v0};

  MessageField mom = initial_messages(m, n, opt.v0);
  Eigen::MatrixXd rho3 = Eigen::MatrixXd::Constant(m, n, init.rho3());
  std::vector<GridDensity> msgs;  // m*n grid messages, index a*n+j; empty at t=0

  for (int t = 1; t <= opt.tmax; ++t) {
    // exact hat moments of the previous step, and the Gaussian-product push
    const HatField hmom = hat_update(inst, mom);
    const ShadowField shadow = shadow_step(inst, hmom, opt.beta);

    // hat densities, one row at a time
    std::vector<Eigen::ArrayXd> loghat(m * n);
    for (int a = 0; a < m; ++a) {
      std::vector<detail::CfSource> src(n);
      for (int j = 0; j < n; ++j) {
        if (msgs.empty()) {
          src[j] = detail::CfSource{&init, nullptr, init.mean(), init.var()};
        } else {
          src[j] = detail::CfSource{nullptr, &msgs[a * n + j], mom.x(a, j),
                                    mom.v(a, j)};
        }
      }
      const detail::RowTables tables =
          detail::build_row_tables(inst, a, src, trace.grid);
      for (int i = 0; i < n; ++i) {
        GridDensity hat = detail::invert_hat(inst, a, i, tables, trace.grid);
        AMPBP_CHECK(hat.values.maxCoeff() > 0.0,
                    "run_density_bp: CF product underflow");
        hat.normalize();
        Eigen::ArrayXd lh(trace.grid.points);
        for (int g = 0; g < trace.grid.points; ++g)
          lh(g) = std::log(std::max(hat.values(g), 1e-300));
        loghat[a * n + i] = std::move(lh);
      }
    }

    // node products per column, leave-one-out in log space
    DensityStep step;
    step.t = t;
    step.mean.resize(m, n);
    step.var.resize(m, n);
    step.rho3.resize(m, n);
    step.shadow_mean = shadow.mean;
    step.shadow_var = shadow.var;
    for (auto& gmat : step.gap) gmat = Eigen::MatrixXd::Zero(m, n);

    std::vector<GridDensity> next(m * n);
    for (int i = 0; i < n; ++i) {
      Eigen::ArrayXd lsum = Eigen::ArrayXd::Zero(trace.grid.points);
      for (int a = 0; a < m; ++a) lsum += loghat[a * n + i];
      double sp = 0.0, sm = 0.0;
      for (int a = 0; a < m; ++a) {
        sp += 1.0 / hmom.vhat(a, i);
        sm += hmom.xhat(a, i) / hmom.vhat(a, i);
      }
      for (int a = 0; a < m; ++a) {
        Eigen::ArrayXd lv = lsum - loghat[a * n + i] + logprior;
        const double mx = lv.maxCoeff();
        AMPBP_CHECK(std::isfinite(mx), "run_density_bp: vanishing node product");
        GridDensity nu;
        nu.grid = trace.grid;
        nu.values = (lv - mx).exp();
        nu.normalize();
        const GridMoments mo = nu.moments();
        step.mean(a, i) = mo.mean;
        step.var(a, i) = mo.var;
        step.rho3(a, i) = mo.rho3_raw;
        if (opt.with_gaps) {
          const double spp = sp - 1.0 / hmom.vhat(a, i);
          const double smm = sm - hmom.xhat(a, i) / hmom.vhat(a, i);
          const double mu = smm / spp, sig = 1.0 / spp;
          const std::vector<double> g =
              gaussian_proximity(nu, mu, sig, opt.q, opt.beta, 4);
          for (int k = 0; k < 4; ++k) step.gap[k](a, i) = g[k];
        }
        next[a * n + i] = std::move(nu);
      }
    }

    mom.x = step.mean;
    mom.v = step.var;
    mom.t = t;
    rho3 = step.rho3;
    msgs = std::move(next);
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Local-limit diagnostics for the first hat step
// ---------------------------------------------------------------------------

// Raw (un-normalised) density of (y_a - sum_{j != i} A_aj xi_j)/A_ai on a
// window adapted to its own location and width.
inline GridDensity hat_density_init_own_window(const ProblemInstance& inst, int a,
                                               int i, const InitDensity& init,
                                               int points = 2048,
                                               double half_sigmas = 8.0) {
  const double ai = inst.a(a, i);
  const double xh = inst.y(a) / ai;
  double vh = 0.0;
  for (int j = 0; j < inst.n(); ++j)
    if (j != i) vh += inst.a(a, j) * inst.a(a, j) * init.var();
  vh /= ai * ai;
  const double sd = std::sqrt(vh);
  const Grid grid{xh - half_sigmas * sd, xh + half_sigmas * sd, points};
  return hat_density_init(inst, i, a, init, grid, /*normalized=*/false);
}

// sup over |s - xhat| <= L sqrt(vhat) of |hat(s) / (phi * EDG)(s) - 1|.
inline double edg_sup_ratio_dev(const ProblemInstance& inst, int a, int i,
                                const InitDensity& init, double window_sigmas,
                                int points = 2048) {
  const GridDensity hat = hat_density_init_own_window(inst, a, i, init, points);
  const double ai = inst.a(a, i);
  const double xh = inst.y(a) / ai;
  double vh = 0.0;
  for (int j = 0; j < inst.n(); ++j)
    if (j != i) vh += inst.a(a, j) * inst.a(a, j) * init.var();
  vh /= ai * ai;
  const EdgeworthData ed{edgeworth_p3_init(inst, a, i, init), xh, vh};
  double sup = 0.0;
  for (int g = 0; g < hat.grid.points; ++g) {
    const double s = hat.grid.point(g);
    if (std::abs(s - xh) > window_sigmas * std::sqrt(vh)) continue;
    const double z = (s - xh) / std::sqrt(vh);
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI * vh);
    const double ref = phi * edg_factor(s, ed);
    if (ref == 0.0) continue;
    sup = std::max(sup, std::abs(hat.values(g) / ref - 1.0));
  }
  return sup;
}

}  // namespace ampbp
