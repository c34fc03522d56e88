#pragma once

#include <Eigen/Dense>

#include "orc/system.hpp"

namespace orc {

struct SteadyStateResult {
  Eigen::VectorXd x;      ///< internal state at the fixed point
  SystemOutputs out;      ///< model outputs evaluated at the fixed point
  int iterations = 0;     ///< Newton iterations spent
  double residual = 0.0;  ///< max norm of the scaled state rates [1/s]
};

/// Constructs a physically reasonable state for the given operating point:
/// pressure from matching turbine admission to the evaporator feed, zone
/// lengths from an approximate duty split, walls from local heat balance.
/// The result is a valid model state, not a fixed point.
Eigen::VectorXd initial_state_guess(const SystemParams& params,
                                    const Eigen::Vector3d& u_star,
                                    const Eigen::Vector2d& d_star);

/// Solves xdot(x, u, d) = 0 by damped Newton with a finite-difference
/// Jacobian in internally scaled coordinates, falling back to a transient
/// relaxation when the Newton iteration stalls. Throws NumericsError if no
/// fixed point is found.
SteadyStateResult solve_steady_state(const SystemParams& params,
                                     const Eigen::Vector3d& u_star,
                                     const Eigen::Vector2d& d_star,
                                     const Eigen::VectorXd* x_guess = nullptr);

}  // namespace orc
