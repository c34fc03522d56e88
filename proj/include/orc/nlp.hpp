#pragma once

#include <Eigen/Dense>
#include <functional>

#include "orc/errors.hpp"

namespace orc {

/// Smooth box-constrained minimisation problem with general constraints:
/// the first m_eq rows of c are equalities c(theta) = 0, the remaining rows
/// are inequalities c(theta) <= 0. One callback evaluates objective,
/// constraints and their gradients together, because for shooting problems
/// a single integration yields all of them. Returning false marks the point
/// as not evaluable (for example, the plant has no solution there); line
/// searches back away from such points instead of aborting.
struct NlpProblem {
  int n = 0;     ///< decision variables
  int m = 0;     ///< total constraints
  int m_eq = 0;  ///< leading rows of c that are equalities
  Eigen::VectorXd lower;  ///< size n, -inf entries for unbounded below
  Eigen::VectorXd upper;  ///< size n, +inf entries for unbounded above

  /// Full evaluation: f, grad_f (size n), c (size m), jac_c (m x n, row i
  /// holds the gradient of c_i).
  std::function<bool(const Eigen::VectorXd& theta, double& f,
                     Eigen::VectorXd& grad_f, Eigen::VectorXd& c,
                     Eigen::MatrixXd& jac_c)>
      eval;

  /// Optional cheaper evaluation without gradients, used for line-search
  /// trial points. When absent, `eval` is used for trials as well.
  std::function<bool(const Eigen::VectorXd& theta, double& f,
                     Eigen::VectorXd& c)>
      eval_value;
};

struct NlpOptions {
  double tol_kkt = 1e-6;   ///< projected-gradient stationarity target
  double tol_feas = 1e-4;  ///< max constraint violation target
  int max_iterations = 500;  ///< total inner iterations across outer passes
  int max_outer = 30;
  int lbfgs_memory = 10;
  double mu_init = 10.0;
  double mu_growth = 10.0;
  double mu_max = 1e12;
  /// Absolute slack added to the line-search acceptance test, scaled by
  /// 1 + |merit|. Set to the objective's evaluation noise when values come
  /// from an inner iterative solve, so steps that genuinely improve the
  /// merit are not rejected for falling inside the noise band.
  double noise_budget = 0.0;
};

struct NlpResult {
  Eigen::VectorXd theta;
  double objective = 0.0;
  Eigen::VectorXd constraints;  ///< c at theta
  Eigen::VectorXd multipliers;  ///< lambda for c
  double kkt = 0.0;            ///< projected Lagrangian gradient, inf-norm
  double max_violation = 0.0;  ///< |c_i| for equalities, max(0, c_i) else
  int outer_iterations = 0;
  int inner_iterations = 0;
  int n_evals = 0;
  bool converged = false;
};

/// Augmented-Lagrangian solver: the bound constraints are kept explicitly
/// (projection), the inequalities are folded into a smooth penalty, and each
/// outer pass minimises the penalised objective with projected L-BFGS.
/// Throws NumericsError if the initial point cannot be evaluated.
NlpResult solve_nlp(const NlpProblem& prob, const Eigen::VectorXd& theta0,
                    const NlpOptions& opt = {});

}  // namespace orc
