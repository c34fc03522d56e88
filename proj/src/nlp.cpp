#include "orc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace orc {

namespace {

Eigen::VectorXd project_box(const Eigen::VectorXd& x,
                            const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

/// Everything known about one evaluated point. The penalised objective phi
/// and its gradient are derived from (f, c, grad_f, jac_c) for the current
/// multipliers, so they can be refreshed without touching the model when
/// the outer loop updates lambda or mu.
struct EvalPoint {
  Eigen::VectorXd theta;
  double f = 0.0;
  Eigen::VectorXd grad_f;
  Eigen::VectorXd c;
  Eigen::MatrixXd jac_c;
  double phi = 0.0;
  Eigen::VectorXd grad_phi;
};

/// Smooth augmented-Lagrangian terms. Equality rows (the first m_eq) carry
/// the plain quadratic penalty
///   psi_i = lambda_i c_i + mu c_i^2 / 2,
/// inequality rows c <= 0 the one-sided version
///   psi_i = lambda_i c_i + mu c_i^2 / 2   if lambda_i + mu c_i >= 0,
///   psi_i = -lambda_i^2 / (2 mu)          otherwise,
/// with d psi_i / d c_i = lambda_i + mu c_i, clamped at zero for inactive
/// inequalities.
double penalty_value(const Eigen::VectorXd& c, const Eigen::VectorXd& lambda,
                     double mu, int m_eq) {
  double s = 0.0;
  for (int i = 0; i < c.size(); ++i) {
    const double w = lambda[i] + mu * c[i];
    if (i < m_eq || w >= 0.0) {
      s += c[i] * (lambda[i] + 0.5 * mu * c[i]);
    } else {
      s -= 0.5 * lambda[i] * lambda[i] / mu;
    }
  }
  return s;
}

Eigen::VectorXd penalty_weights(const Eigen::VectorXd& c,
                                const Eigen::VectorXd& lambda, double mu,
                                int m_eq) {
  Eigen::VectorXd w = lambda + mu * c;
  for (int i = m_eq; i < w.size(); ++i) {
    w[i] = std::max(0.0, w[i]);
  }
  return w;
}

void refresh_penalty(EvalPoint& p, const Eigen::VectorXd& lambda, double mu,
                     int m_eq) {
  p.phi = p.f + penalty_value(p.c, lambda, mu, m_eq);
  p.grad_phi = p.grad_f;
  if (p.c.size() > 0) {
    p.grad_phi +=
        p.jac_c.transpose() * penalty_weights(p.c, lambda, mu, m_eq);
  }
}

/// Limited-memory inverse-Hessian application (two-loop recursion). Pairs
/// are stored oldest first. Returns H * g.
Eigen::VectorXd lbfgs_apply(const Eigen::VectorXd& g,
                            const std::deque<Eigen::VectorXd>& ss,
                            const std::deque<Eigen::VectorXd>& ys) {
  Eigen::VectorXd q = g;
  const int k = int(ss.size());
  if (k == 0) {
    return q;
  }
  std::vector<double> alpha(static_cast<size_t>(k));
  std::vector<double> rho(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    rho[size_t(i)] = 1.0 / ys[size_t(i)].dot(ss[size_t(i)]);
  }
  for (int i = k - 1; i >= 0; --i) {
    alpha[size_t(i)] = rho[size_t(i)] * ss[size_t(i)].dot(q);
    q -= alpha[size_t(i)] * ys[size_t(i)];
  }
  const double gamma =
      ss.back().dot(ys.back()) / ys.back().squaredNorm();
  Eigen::VectorXd r = gamma * q;
  for (int i = 0; i < k; ++i) {
    const double beta = rho[size_t(i)] * ys[size_t(i)].dot(r);
    r += (alpha[size_t(i)] - beta) * ss[size_t(i)];
  }
  return r;
}

enum class InnerStatus { Converged, Stalled, Budget };

struct Workspace {
  const NlpProblem& prob;
  const NlpOptions& opt;
  int n_evals = 0;
  int inner_iterations = 0;

  bool eval_full(const Eigen::VectorXd& theta, EvalPoint& out) {
    double f = 0.0;
    Eigen::VectorXd gf, c;
    Eigen::MatrixXd jc;
    ++n_evals;
    if (!prob.eval(theta, f, gf, c, jc)) {
      return false;
    }
    out.theta = theta;
    out.f = f;
    out.grad_f = std::move(gf);
    out.c = std::move(c);
    out.jac_c = std::move(jc);
    return true;
  }

  /// Trial evaluation for the line search: uses the cheap path when the
  /// problem provides one, otherwise a full evaluation whose gradients are
  /// kept in case the trial is accepted.
  bool eval_trial(const Eigen::VectorXd& theta, EvalPoint& out,
                  bool& has_gradients) {
    if (prob.eval_value) {
      double f = 0.0;
      Eigen::VectorXd c;
      ++n_evals;
      if (!prob.eval_value(theta, f, c)) {
        return false;
      }
      out.theta = theta;
      out.f = f;
      out.c = std::move(c);
      has_gradients = false;
      return true;
    }
    has_gradients = true;
    return eval_full(theta, out);
  }
};

/// Projected L-BFGS descent on the penalised objective, to stationarity
/// omega or until the step budget runs out. `point` holds a fully evaluated
/// point on entry and exit.
InnerStatus minimize_penalized(Workspace& ws, const Eigen::VectorXd& lambda,
                               double mu, double omega, EvalPoint& point) {
  const NlpProblem& prob = ws.prob;
  const NlpOptions& opt = ws.opt;
  std::deque<Eigen::VectorXd> ss, ys;

  refresh_penalty(point, lambda, mu, prob.m_eq);
  for (;;) {
    const Eigen::VectorXd pg =
        point.theta -
        project_box(point.theta - point.grad_phi, prob.lower, prob.upper);
    if (pg.lpNorm<Eigen::Infinity>() <= omega) {
      return InnerStatus::Converged;
    }
    if (ws.inner_iterations >= opt.max_iterations) {
      return InnerStatus::Budget;
    }

    bool accepted = false;
    EvalPoint trial;
    bool trial_has_gradients = false;
    // When objective values carry evaluation noise (e.g. from an inner
    // iterative solve), a strict sufficient-decrease test rejects every
    // step once the true decrease per step drops into the noise band and
    // the search freezes early; accept within the declared budget instead.
    const double slack = opt.noise_budget * (1.0 + std::abs(point.phi));
    for (int pass = 0; pass < 2 && !accepted; ++pass) {
      Eigen::VectorXd dir;
      if (pass == 0 && !ss.empty()) {
        dir = -lbfgs_apply(point.grad_phi, ss, ys);
        if (dir.dot(point.grad_phi) >
            -1e-12 * dir.norm() * point.grad_phi.norm()) {
          ss.clear();
          ys.clear();
          dir = -point.grad_phi;
        }
      } else if (pass == 0) {
        dir = -point.grad_phi;
      } else {
        // The quasi-Newton direction failed its line search; drop the
        // curvature memory and retry with plain projected steepest descent.
        ss.clear();
        ys.clear();
        dir = -point.grad_phi;
      }

      double alpha = 1.0;
      for (int halving = 0; halving < 45; ++halving, alpha *= 0.5) {
        const Eigen::VectorXd theta_t =
            project_box(point.theta + alpha * dir, prob.lower, prob.upper);
        const Eigen::VectorXd step = theta_t - point.theta;
        if (step.lpNorm<Eigen::Infinity>() == 0.0) {
          break;  // the box blocks this direction entirely
        }
        if (!ws.eval_trial(theta_t, trial, trial_has_gradients)) {
          continue;  // not evaluable there; come closer
        }
        const double phi_t =
            trial.f + penalty_value(trial.c, lambda, mu, prob.m_eq);
        const double slope = point.grad_phi.dot(step);
        if (phi_t <= point.phi + 1e-4 * slope + slack ||
            (slope >= 0.0 && phi_t < point.phi)) {
          trial.phi = phi_t;
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      return InnerStatus::Stalled;
    }
    if (!trial_has_gradients) {
      EvalPoint full;
      if (!ws.eval_full(trial.theta, full)) {
        return InnerStatus::Stalled;  // value path succeeded, full did not
      }
      trial = std::move(full);
    }
    refresh_penalty(trial, lambda, mu, prob.m_eq);

    const Eigen::VectorXd s = trial.theta - point.theta;
    const Eigen::VectorXd y = trial.grad_phi - point.grad_phi;
    if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      ss.push_back(s);
      ys.push_back(y);
      if (int(ss.size()) > opt.lbfgs_memory) {
        ss.pop_front();
        ys.pop_front();
      }
    } else {
      // A step without positive curvature means the stored pairs no longer
      // describe the local landscape; stale memory here causes stagnation
      // at a frozen, badly scaled step length.
      ss.clear();
      ys.clear();
    }
    point = std::move(trial);
    ++ws.inner_iterations;
  }
}

}  // namespace

NlpResult solve_nlp(const NlpProblem& prob, const Eigen::VectorXd& theta0,
                    const NlpOptions& opt) {
  if (prob.n <= 0 || !prob.eval) {
    throw ConfigError("nlp: problem must define n > 0 and an eval callback");
  }
  if (prob.lower.size() != prob.n || prob.upper.size() != prob.n) {
    throw ConfigError("nlp: bound vectors must have length n");
  }
  if ((prob.lower.array() > prob.upper.array()).any()) {
    throw ConfigError("nlp: lower bound exceeds upper bound");
  }
  if (theta0.size() != prob.n) {
    throw ConfigError("nlp: initial point has the wrong dimension");
  }
  if (prob.m_eq < 0 || prob.m_eq > prob.m) {
    throw ConfigError("nlp: m_eq must lie in [0, m]");
  }

  Workspace ws{prob, opt};
  EvalPoint point;
  if (!ws.eval_full(project_box(theta0, prob.lower, prob.upper), point)) {
    throw NumericsError("nlp: initial point cannot be evaluated");
  }
  if (point.c.size() != prob.m) {
    throw ConfigError("nlp: eval returned a constraint vector of wrong size");
  }

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(prob.m);
  double mu = opt.mu_init;
  // Inner stationarity and feasibility milestones, tightened as the
  // multiplier estimates firm up.
  double omega = (prob.m == 0) ? opt.tol_kkt : 1e-2;
  double eta = 1e-2;

  NlpResult res;
  res.converged = false;
  InnerStatus status = InnerStatus::Stalled;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    res.outer_iterations = outer + 1;
    status = minimize_penalized(ws, lambda, mu, omega, point);

    double viol = 0.0;
    for (int i = 0; i < prob.m; ++i) {
      viol = std::max(viol, i < prob.m_eq ? std::abs(point.c[i])
                                          : std::max(0.0, point.c[i]));
    }
    const Eigen::VectorXd lambda_new =
        (prob.m > 0) ? penalty_weights(point.c, lambda, mu, prob.m_eq)
                     : Eigen::VectorXd::Zero(0);

    // First-order measure of the true problem at the updated multipliers.
    Eigen::VectorXd grad_lag = point.grad_f;
    if (prob.m > 0) {
      grad_lag += point.jac_c.transpose() * lambda_new;
    }
    const double kkt =
        (point.theta -
         project_box(point.theta - grad_lag, prob.lower, prob.upper))
            .lpNorm<Eigen::Infinity>();

    // Complementarity-aware violation: equalities must be satisfied,
    // inactive inequalities must shed their multipliers, active ones must
    // be (nearly) satisfied.
    double comp = 0.0;
    for (int i = 0; i < prob.m; ++i) {
      if (i < prob.m_eq) {
        comp = std::max(comp, std::abs(point.c[i]));
      } else {
        comp =
            std::max(comp, std::abs(std::max(point.c[i], -lambda[i] / mu)));
      }
    }

    res.kkt = kkt;
    res.max_violation = viol;
    if (kkt <= opt.tol_kkt && viol <= opt.tol_feas &&
        (prob.m == 0 || comp <= opt.tol_feas)) {
      lambda = lambda_new;
      res.converged = true;
      break;
    }
    if (prob.m == 0 || status == InnerStatus::Budget) {
      break;  // nothing more the outer loop can change
    }

    if (comp <= std::max(opt.tol_feas, eta)) {
      lambda = lambda_new;
      omega = std::max(0.2 * opt.tol_kkt, 0.2 * omega);
      eta = std::max(0.2 * opt.tol_feas, 0.2 * eta);
    } else {
      if (mu >= opt.mu_max && status == InnerStatus::Stalled) {
        break;  // penalty saturated and no further progress
      }
      mu = std::min(mu * opt.mu_growth, opt.mu_max);
      omega = std::max(0.2 * opt.tol_kkt, std::min(omega, 1e-2));
    }
  }

  res.theta = point.theta;
  res.objective = point.f;
  res.constraints = point.c;
  res.multipliers = lambda;
  res.inner_iterations = ws.inner_iterations;
  res.n_evals = ws.n_evals;
  return res;
}

}  // namespace orc
