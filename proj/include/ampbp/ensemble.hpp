#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ampbp/common.hpp"
#include "ampbp/rng.hpp"

namespace ampbp {

// Named i.i.d. ensembles.  Every family has mean 0, per-entry variance
// exactly 1/m and no atom at 0:
//   gaussian    N(0, 1/m)
//   rademacher  +-1/sqrt(m)
//   uniform     uniform on [-sqrt(3/m), +sqrt(3/m)]
enum class Family { gaussian, rademacher, uniform };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::rademacher: return "rademacher";
    case Family::uniform: return "uniform";
  }
  return "?";
}

inline Family family_from(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "rademacher") return Family::rademacher;
  if (s == "uniform") return Family::uniform;
  AMPBP_REQUIRE(false, "unknown family '" + s + "'");
  return Family::gaussian;
}

struct EnsembleSpec {
  Family family = Family::gaussian;
  int m = 0;
  int n = 0;  // m < n
  std::uint64_t seed = 0;

  double delta() const { return double(m) / double(n); }
  void validate() const {
    AMPBP_REQUIRE(m >= 1 && n >= 2 && m < n,
                  "EnsembleSpec: need 1 <= m < n, got m=" + std::to_string(m) +
                      " n=" + std::to_string(n));
  }
};

enum class OutcomeMode { uniform_box, planted };

struct ProblemInstance {
  Eigen::MatrixXd a;  // m x n
  Eigen::VectorXd y;  // length m, |y|_inf <= 1
  double delta = 0.0;
  EnsembleSpec spec;

  int m() const { return int(a.rows()); }
  int n() const { return int(a.cols()); }
};

namespace detail {

inline double draw_entry(Rng& rng, Family f, double inv_sqrt_m) {
  switch (f) {
    case Family::gaussian: return rng.gaussian() * inv_sqrt_m;
    case Family::rademacher: return rng.coin() ? inv_sqrt_m : -inv_sqrt_m;
    case Family::uniform:
      return rng.uniform_pm1() * 1.7320508075688772 * inv_sqrt_m;
  }
  return 0.0;
}

}  // namespace detail

// Entries filled row-major from stream child_seed(seed, 0).  Entries that
// sample to exactly 0 are redrawn; >100 redraws signals a broken generator.
inline Eigen::MatrixXd sample_matrix(const EnsembleSpec& spec) {
  spec.validate();
  Rng rng(child_seed(spec.seed, 0));
  const double inv_sqrt_m = 1.0 / std::sqrt(double(spec.m));
  Eigen::MatrixXd a(spec.m, spec.n);
  for (int r = 0; r < spec.m; ++r) {
    for (int c = 0; c < spec.n; ++c) {
      double v = detail::draw_entry(rng, spec.family, inv_sqrt_m);
      int attempts = 0;
      while (v == 0.0) {
        AMPBP_CHECK(++attempts <= 100, "sample_matrix: zero-entry resample loop");
        v = detail::draw_entry(rng, spec.family, inv_sqrt_m);
      }
      a(r, c) = v;
    }
  }
  return a;
}

// y = A x0 rescaled into the unit sup-norm box when needed.
inline Eigen::VectorXd planted_outcome(const Eigen::MatrixXd& a,
                                       const Eigen::VectorXd& x0) {
  AMPBP_REQUIRE(x0.size() == a.cols(), "planted_outcome: x0 length mismatch");
  Eigen::VectorXd y = a * x0;
  const double mx = y.lpNorm<Eigen::Infinity>();
  if (mx > 1.0) y /= mx;
  return y;
}

// Outcome vector from stream child_seed(seed, 1).  uniform_box draws entries
// i.i.d. uniform on [-1,1]; planted uses a sparse +-1 vector with ceil(n/8)
// nonzero coordinates.
inline Eigen::VectorXd sample_outcome(const EnsembleSpec& spec,
                                      OutcomeMode mode = OutcomeMode::uniform_box,
                                      const Eigen::MatrixXd* a = nullptr) {
  spec.validate();
  Rng rng(child_seed(spec.seed, 1));
  if (mode == OutcomeMode::uniform_box) {
    Eigen::VectorXd y(spec.m);
    for (int b = 0; b < spec.m; ++b) y(b) = rng.uniform_pm1();
    return y;
  }
  Eigen::MatrixXd local;
  if (a == nullptr) {
    local = sample_matrix(spec);
    a = &local;
  }
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(spec.n);
  const int k = (spec.n + 7) / 8;
  int placed = 0;
  while (placed < k) {
    const int pos = int(rng.below(std::uint64_t(spec.n)));
    if (x0(pos) != 0.0) continue;
    x0(pos) = rng.coin() ? 1.0 : -1.0;
    ++placed;
  }
  return planted_outcome(*a, x0);
}

inline ProblemInstance make_instance(const EnsembleSpec& spec,
                                     OutcomeMode mode = OutcomeMode::uniform_box) {
  ProblemInstance inst;
  inst.spec = spec;
  inst.a = sample_matrix(spec);
  inst.y = sample_outcome(spec, mode, &inst.a);
  inst.delta = spec.delta();
  return inst;
}

struct NormDeviation {
  double max_row_dev;  // max over columns i of |sum_b a(b,i)^2 - 1|
  double max_col_dev;  // max over rows a of |sum_j a(a,j)^2 - n/m|
};

inline NormDeviation row_col_concentration(const Eigen::MatrixXd& a) {
  AMPBP_REQUIRE(a.size() > 0, "row_col_concentration: empty matrix");
  const double inv_delta = double(a.cols()) / double(a.rows());
  NormDeviation d{0.0, 0.0};
  for (int i = 0; i < a.cols(); ++i)
    d.max_row_dev = std::max(d.max_row_dev, std::abs(a.col(i).squaredNorm() - 1.0));
  for (int r = 0; r < a.rows(); ++r)
    d.max_col_dev =
        std::max(d.max_col_dev, std::abs(a.row(r).squaredNorm() - inv_delta));
  return d;
}

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Text dump, one instance per file:
//   line 1: m,n,family,seed
//   lines 2..m+1: row-major A, comma separated
//   last line: y, comma separated
inline void save_instance(const ProblemInstance& inst, std::ostream& out) {
  out << inst.m() << "," << inst.n() << "," << family_name(inst.spec.family)
      << "," << inst.spec.seed << "\n";
  for (int r = 0; r < inst.m(); ++r) {
    for (int c = 0; c < inst.n(); ++c)
      out << (c ? "," : "") << detail::fmt17(inst.a(r, c));
    out << "\n";
  }
  for (int b = 0; b < inst.m(); ++b)
    out << (b ? "," : "") << detail::fmt17(inst.y(b));
  out << "\n";
}

inline void save_instance(const ProblemInstance& inst, const std::string& path) {
  std::ofstream out(path);
  AMPBP_CHECK(out.good(), "save_instance: cannot open " + path);
  save_instance(inst, out);
}

inline std::vector<double> split_doubles(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

inline ProblemInstance load_instance(std::istream& in) {
  std::string line;
  AMPBP_CHECK(std::getline(in, line), "load_instance: missing header");
  std::stringstream hs(line);
  std::string tm, tn, tf, ts;
  AMPBP_CHECK(std::getline(hs, tm, ',') && std::getline(hs, tn, ',') &&
                  std::getline(hs, tf, ',') && std::getline(hs, ts, ','),
              "load_instance: malformed header");
  ProblemInstance inst;
  inst.spec.m = std::stoi(tm);
  inst.spec.n = std::stoi(tn);
  inst.spec.family = family_from(tf);
  inst.spec.seed = std::stoull(ts);
  inst.spec.validate();
  inst.a.resize(inst.spec.m, inst.spec.n);
  for (int r = 0; r < inst.spec.m; ++r) {
    AMPBP_CHECK(std::getline(in, line), "load_instance: truncated matrix");
    const auto row = split_doubles(line);
    AMPBP_CHECK(int(row.size()) == inst.spec.n, "load_instance: bad row length");
    for (int c = 0; c < inst.spec.n; ++c) inst.a(r, c) = row[c];
  }
  AMPBP_CHECK(std::getline(in, line), "load_instance: missing outcome row");
  const auto yv = split_doubles(line);
  AMPBP_CHECK(int(yv.size()) == inst.spec.m, "load_instance: bad outcome length");
  inst.y.resize(inst.spec.m);
  for (int b = 0; b < inst.spec.m; ++b) inst.y(b) = yv[b];
  inst.delta = inst.spec.delta();
  return inst;
}

inline ProblemInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  AMPBP_CHECK(in.good(), "load_instance: cannot open " + path);
  return load_instance(in);
}

// FNV-1a over the canonical text dump; used to stamp reports.
inline std::uint64_t content_hash(const ProblemInstance& inst) {
  std::ostringstream ss;
  save_instance(inst, ss);
  const std::string s = ss.str();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace ampbp
