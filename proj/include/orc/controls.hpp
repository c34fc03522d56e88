#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "orc/errors.hpp"

namespace orc {

/// Continuous piecewise-linear signal on strictly increasing knots, clamped
/// to its end values outside the knot span. A single knot is a constant.
struct PiecewiseLinear {
  std::vector<double> t;
  std::vector<double> v;

  static PiecewiseLinear constant(double value) {
    return PiecewiseLinear{{0.0}, {value}};
  }

  void validate(const char* name) const {
    if (t.empty() || t.size() != v.size()) {
      throw ConfigError(std::string(name) +
                        ": knot times and values must be non-empty and of "
                        "equal length");
    }
    for (size_t i = 1; i < t.size(); ++i) {
      if (!(t[i] > t[i - 1])) {
        throw ConfigError(std::string(name) +
                          ": knot times must be strictly increasing");
      }
    }
  }

  /// The two knots supporting the value at `time` and their hat weights.
  struct Support {
    int i0 = 0;
    double w0 = 1.0;
    int i1 = 0;
    double w1 = 0.0;
  };

  Support support(double time) const {
    Support s;
    if (time <= t.front()) {
      s.i0 = s.i1 = 0;
      s.w0 = 1.0;
      s.w1 = 0.0;
      return s;
    }
    if (time >= t.back()) {
      s.i0 = s.i1 = int(t.size()) - 1;
      s.w0 = 1.0;
      s.w1 = 0.0;
      return s;
    }
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const int hi = int(it - t.begin());
    const int lo = hi - 1;
    const double span = t[size_t(hi)] - t[size_t(lo)];
    const double w_hi = (time - t[size_t(lo)]) / span;
    s.i0 = lo;
    s.w0 = 1.0 - w_hi;
    s.i1 = hi;
    s.w1 = w_hi;
    return s;
  }

  double eval(double time) const {
    const Support s = support(time);
    return s.w0 * v[size_t(s.i0)] + s.w1 * v[size_t(s.i1)];
  }

  size_t size() const { return t.size(); }
};

/// The three manipulated inputs (all already normalised): feed mass flow,
/// turbine speed ratio, and exhaust bypass valve position.
struct ControlSchedule {
  PiecewiseLinear mdot_wf_star = PiecewiseLinear::constant(0.014);
  PiecewiseLinear n_star = PiecewiseLinear::constant(0.95);
  PiecewiseLinear x_bpv = PiecewiseLinear::constant(1.0);

  void validate() const {
    mdot_wf_star.validate("controls.mdot_wf_star");
    n_star.validate("controls.n_star");
    x_bpv.validate("controls.x_bpv");
  }

  Eigen::Vector3d eval(double time) const {
    return Eigen::Vector3d(mdot_wf_star.eval(time), n_star.eval(time),
                           x_bpv.eval(time));
  }

  /// All knot times, sorted and deduplicated; integration restarts here
  /// because the signal slope is discontinuous.
  std::vector<double> breakpoints() const {
    std::vector<double> b;
    b.insert(b.end(), mdot_wf_star.t.begin(), mdot_wf_star.t.end());
    b.insert(b.end(), n_star.t.begin(), n_star.t.end());
    b.insert(b.end(), x_bpv.t.begin(), x_bpv.t.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
  }
};

}  // namespace orc
