#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "ampbp/common.hpp"

namespace ampbp {

// Uniform evaluation grid on [lo, hi].
struct Grid {
  double lo = -12.0;
  double hi = 12.0;
  int points = 1024;

  double step() const { return (hi - lo) / double(points - 1); }
  double point(int g) const { return lo + g * step(); }
  void validate() const {
    AMPBP_REQUIRE(points >= 8 && hi > lo, "Grid: need hi > lo and >= 8 points");
  }
};

struct GridMoments {
  double mean = 0.0;
  double var = 0.0;
  double m3_central = 0.0;
  double m4_central = 0.0;
  double rho3_raw = 0.0;  // raw third moment
};

// Probability density sampled on a grid; trapezoid rule throughout.
struct GridDensity {
  Grid grid;
  Eigen::ArrayXd values;

  double mass() const {
    const double s = values.sum() - 0.5 * (values(0) + values(values.size() - 1));
    return s * grid.step();
  }

  // Clamp negative excursions (inversion ringing) to zero, then rescale to
  // unit mass on the window.
  void normalize() {
    values = values.max(0.0);
    const double z = mass();
    AMPBP_CHECK(z > 0.0 && std::isfinite(z), "GridDensity: vanishing mass");
    values /= z;
  }

  double raw_moment(int k) const {
    AMPBP_REQUIRE(k >= 0 && k <= 8, "raw_moment: k in [0,8]");
    double acc = 0.0;
    const int g_last = int(values.size()) - 1;
    for (int g = 0; g <= g_last; ++g) {
      const double w = (g == 0 || g == g_last) ? 0.5 : 1.0;
      acc += w * values(g) * std::pow(grid.point(g), k);
    }
    return acc * grid.step();
  }

  GridMoments moments() const {
    GridMoments mo;
    mo.mean = raw_moment(1);
    const double m2 = raw_moment(2);
    mo.rho3_raw = raw_moment(3);
    const double m4 = raw_moment(4);
    mo.var = m2 - mo.mean * mo.mean;
    mo.m3_central = mo.rho3_raw - 3.0 * mo.mean * m2 + 2.0 * std::pow(mo.mean, 3);
    mo.m4_central = m4 - 4.0 * mo.mean * mo.rho3_raw + 6.0 * mo.mean * mo.mean * m2 -
                    3.0 * std::pow(mo.mean, 4);
    return mo;
  }
};

inline GridDensity make_density(const Grid& grid,
                                const std::function<double(double)>& f,
                                bool normalized = true) {
  grid.validate();
  GridDensity d;
  d.grid = grid;
  d.values.resize(grid.points);
  for (int g = 0; g < grid.points; ++g) d.values(g) = f(grid.point(g));
  if (normalized) d.normalize();
  return d;
}

inline GridMoments moments(const GridDensity& d) { return d.moments(); }

}  // namespace ampbp
