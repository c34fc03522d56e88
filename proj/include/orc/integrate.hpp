#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <vector>

#include "orc/errors.hpp"

namespace orc {

struct IntegratorOptions {
  double rtol = 1e-7;
  double atol = 1e-9;
  double h_init = 1e-2;   ///< first attempted step [s]
  double h_min = 1e-12;   ///< below this the integration is abandoned
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 2000000;
  /// Disable the embedded-error step controller and march with h_max-wide
  /// steps clipped to the mandatory times. The step pattern then depends
  /// only on the time grid, not on the solution, which makes the map from
  /// model parameters to trajectory smooth; an optimizer differentiating
  /// through the integration needs that. Stage solves still converge to
  /// the rtol/atol-scaled tolerance, and failed stages still retry with a
  /// shorter step.
  bool fixed_mesh = false;
};

/// Settings for optimizer-facing evaluations: a fixed mesh of width dt
/// whose step pattern depends only on the time grid.
inline IntegratorOptions fixed_mesh_integrator(double dt) {
  IntegratorOptions opt;
  opt.fixed_mesh = true;
  opt.h_init = dt;
  opt.h_max = dt;
  return opt;
}

/// Right-hand side bundle. `f` is mandatory. For forward sensitivities set
/// `np` and `df_dtheta`, which must return the dim x np partial derivative
/// of f with respect to the parameter vector at fixed state.
struct OdeSystem {
  int dim = 0;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> f;
  int np = 0;
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> df_dtheta;
};

struct TrajectoryNode {
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd f;
  Eigen::MatrixXd S;  ///< dim x np state sensitivities (empty when off)
};

struct Trajectory {
  std::vector<TrajectoryNode> nodes;
  long n_rhs_evals = 0;
  long n_steps = 0;
  long n_rejected = 0;

  /// Cubic Hermite interpolation between accepted steps.
  Eigen::VectorXd eval(double t) const;

  /// The accepted node lying exactly at t (within roundoff); throws if the
  /// integration did not step onto t.
  const TrajectoryNode& node_at(double t) const;

  double t_begin() const { return nodes.front().t; }
  double t_end() const { return nodes.back().t; }
};

/// One-step implicit integration (trapezoidal stage followed by a
/// second-order backward-differentiation stage) with an embedded
/// third-order error estimate, adaptive step control, and exact landing on
/// the supplied mandatory times. Sensitivities, when enabled, are
/// propagated by differentiating the discrete stage equations; S0 defaults
/// to zero (initial state independent of the parameters).
Trajectory integrate_ode(const OdeSystem& sys, double t0, double tf,
                         const Eigen::VectorXd& x0,
                         const IntegratorOptions& opt,
                         const std::vector<double>& mandatory = {},
                         const Eigen::MatrixXd* S0 = nullptr);

}  // namespace orc
