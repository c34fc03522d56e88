#include "orc/integrate.hpp"

#include <algorithm>
#include <cmath>

namespace orc {

namespace {

// Stage geometry: gamma = 2 - sqrt(2) makes both implicit stages share the
// iteration matrix I - (gamma/2) h J and renders the pair L-stable.
const double kGamma = 2.0 - std::sqrt(2.0);
const double kD = kGamma / 2.0;            // implicit weight, both stages
const double kW = std::sqrt(2.0) / 4.0;    // trapezoidal quadrature weight
const double kA = 1.0 / (kGamma * (2.0 - kGamma));
const double kB = (1.0 - kGamma) * (1.0 - kGamma) / (kGamma * (2.0 - kGamma));
// Embedded third-order weights for the error estimate.
const double kBh1 = (4.0 - std::sqrt(2.0)) / 12.0;
const double kBh2 = (3.0 * std::sqrt(2.0) + 4.0) / 12.0;
const double kBh3 = (2.0 - std::sqrt(2.0)) / 6.0;

double wrms(const Eigen::VectorXd& v, const Eigen::VectorXd& x_ref,
            const IntegratorOptions& opt) {
  double acc = 0.0;
  for (int i = 0; i < v.size(); ++i) {
    const double w = opt.atol + opt.rtol * std::abs(x_ref[i]);
    const double q = v[i] / w;
    acc += q * q;
  }
  return std::sqrt(acc / double(v.size()));
}

struct RhsCounter {
  const OdeSystem& sys;
  long evals = 0;
  Eigen::VectorXd operator()(double t, const Eigen::VectorXd& x) {
    ++evals;
    return sys.f(t, x);
  }
};

Eigen::MatrixXd fd_jacobian(RhsCounter& f, double t, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& fx) {
  const int n = int(x.size());
  Eigen::MatrixXd J(n, n);
  const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  Eigen::VectorXd xp = x;
  for (int j = 0; j < n; ++j) {
    const double delta = sqrt_eps * std::max(std::abs(x[j]), 1e-2);
    xp[j] = x[j] + delta;
    J.col(j) = (f(t, xp) - fx) / delta;
    xp[j] = x[j];
  }
  return J;
}

struct NewtonResult {
  bool converged = false;
  Eigen::VectorXd x;
  Eigen::VectorXd fx;
};

/// Solves x = base + d*h*f(t, x) by modified Newton with the supplied
/// factorisation of I - d*h*J. Model evaluations that throw ModelError are
/// treated as divergence so the caller can shrink the step.
NewtonResult solve_stage(RhsCounter& f, double t, double dh,
                         const Eigen::VectorXd& base,
                         const Eigen::VectorXd& predictor,
                         const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                         const Eigen::VectorXd& x_ref,
                         const IntegratorOptions& opt) {
  NewtonResult r;
  r.x = predictor;
  double prev_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 12; ++it) {
    Eigen::VectorXd fx;
    try {
      fx = f(t, r.x);
    } catch (const ModelError&) {
      return r;  // stage wandered outside the model's validity
    }
    const Eigen::VectorXd residual = r.x - dh * fx - base;
    const Eigen::VectorXd delta = lu.solve(-residual);
    r.x += delta;
    const double norm = wrms(delta, x_ref, opt);
    if (!std::isfinite(norm) || norm > 4.0 * prev_norm) {
      return r;
    }
    if (norm <= 0.03) {
      try {
        r.fx = f(t, r.x);
      } catch (const ModelError&) {
        return r;
      }
      r.converged = true;
      return r;
    }
    prev_norm = norm;
  }
  return r;
}

}  // namespace

Eigen::VectorXd Trajectory::eval(double t) const {
  if (nodes.empty()) {
    throw NumericsError("trajectory: empty");
  }
  if (t <= nodes.front().t) return nodes.front().x;
  if (t >= nodes.back().t) return nodes.back().x;
  // Find the interval [t_i, t_{i+1}] containing t.
  size_t lo = 0, hi = nodes.size() - 1;
  while (hi - lo > 1) {
    const size_t mid = (lo + hi) / 2;
    if (nodes[mid].t <= t) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const TrajectoryNode& a = nodes[lo];
  const TrajectoryNode& b = nodes[hi];
  const double h = b.t - a.t;
  const double s = (t - a.t) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * a.x + (h10 * h) * a.f + h01 * b.x + (h11 * h) * b.f;
}

const TrajectoryNode& Trajectory::node_at(double t) const {
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  size_t lo = 0, hi = nodes.size();
  while (lo < hi) {
    const size_t mid = (lo + hi) / 2;
    if (nodes[mid].t < t) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  // The nearest node is either the first one at or after t or its
  // predecessor; adaptive steps can land arbitrarily close together, so
  // pick the closer of the two rather than the first within tolerance.
  const TrajectoryNode* best = nullptr;
  if (lo < nodes.size()) {
    best = &nodes[lo];
  }
  if (lo > 0) {
    const TrajectoryNode& prev = nodes[lo - 1];
    if (best == nullptr || std::abs(prev.t - t) < std::abs(best->t - t)) {
      best = &prev;
    }
  }
  if (best != nullptr && std::abs(best->t - t) <= tol) {
    return *best;
  }
  throw NumericsError("trajectory: no accepted step lands on the requested "
                      "time");
}

Trajectory integrate_ode(const OdeSystem& sys, double t0, double tf,
                         const Eigen::VectorXd& x0,
                         const IntegratorOptions& opt,
                         const std::vector<double>& mandatory,
                         const Eigen::MatrixXd* S0) {
  if (!(tf >= t0)) {
    throw NumericsError("integrate: tf must be >= t0");
  }
  const int n = sys.dim;
  const bool with_sens = sys.np > 0;
  if (with_sens && !sys.df_dtheta) {
    throw NumericsError("integrate: sensitivities requested without "
                        "df_dtheta");
  }

  RhsCounter f{sys};
  Trajectory traj;

  // Segment boundaries: mandatory times inside (t0, tf), sorted, unique.
  std::vector<double> stops;
  const double span = tf - t0;
  for (double m : mandatory) {
    if (m > t0 + 1e-12 * std::max(1.0, span) &&
        m < tf - 1e-12 * std::max(1.0, span)) {
      stops.push_back(m);
    }
  }
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) <=
                                   1e-12 * std::max(1.0, span);
                          }),
              stops.end());
  stops.push_back(tf);

  double t = t0;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd fx = f(t, x);
  Eigen::MatrixXd S;
  if (with_sens) {
    S = S0 ? *S0 : Eigen::MatrixXd::Zero(n, sys.np);
  }
  traj.nodes.push_back({t, x, fx, S});
  if (span == 0.0) {
    traj.n_rhs_evals = f.evals;
    return traj;
  }

  double h = std::min({opt.h_init, opt.h_max, span});

  for (double stop : stops) {
    while (t < stop - 1e-12 * std::max(1.0, span)) {
      if (traj.n_steps + traj.n_rejected > opt.max_steps) {
        throw NumericsError("integrate: step budget exhausted");
      }
      if (opt.fixed_mesh) {
        h = opt.h_max;  // solution-independent pattern: h_max, clipped below
      }
      h = std::min(h, opt.h_max);
      // Land exactly on the segment end when close. Remember the working
      // step so an artificially shortened landing step does not throttle
      // the next segment.
      double h_resume = 0.0;
      if (t + 1.05 * h >= stop) {
        h_resume = h;
        h = stop - t;
      }

      // Fresh Jacobian at the step base; reused for both stages and for
      // all retries at this point.
      const Eigen::MatrixXd J = fd_jacobian(f, t, x, fx);

      bool accepted = false;
      Eigen::VectorXd x_gamma, f_gamma, x_new, f_new;
      Eigen::PartialPivLU<Eigen::MatrixXd> lu;
      while (!accepted) {
        if (h < opt.h_min) {
          throw NumericsError("integrate: step size underflow at t = " +
                              std::to_string(t));
        }
        lu.compute(Eigen::MatrixXd::Identity(n, n) - (kD * h) * J);

        // Trapezoidal stage to t + gamma h.
        const Eigen::VectorXd base1 = x + (kD * h) * fx;
        const NewtonResult s1 =
            solve_stage(f, t + kGamma * h, kD * h, base1,
                        x + (kGamma * h) * fx, lu, x, opt);
        if (!s1.converged) {
          h *= 0.25;
          h_resume = 0.0;
          ++traj.n_rejected;
          continue;
        }
        x_gamma = s1.x;
        f_gamma = s1.fx;

        // Second-order backward stage to t + h.
        const Eigen::VectorXd base2 = kA * x_gamma - kB * x;
        const Eigen::VectorXd predictor =
            x_gamma + ((1.0 - kGamma) / kGamma) * (x_gamma - x);
        const NewtonResult s2 =
            solve_stage(f, t + h, kD * h, base2, predictor, lu, x, opt);
        if (!s2.converged) {
          h *= 0.25;
          h_resume = 0.0;
          ++traj.n_rejected;
          continue;
        }
        x_new = s2.x;
        f_new = s2.fx;

        // Embedded error, filtered through the stage matrix to keep the
        // estimate bounded for stiff components. Skipped on a fixed mesh,
        // where both stages having converged is the whole acceptance test.
        double err_norm = 0.0;
        if (!opt.fixed_mesh) {
          const Eigen::VectorXd err_raw = h * ((kW - kBh1) * fx +
                                               (kW - kBh2) * f_gamma +
                                               (kD - kBh3) * f_new);
          const Eigen::VectorXd err = lu.solve(err_raw);
          const Eigen::VectorXd x_ref =
              x.cwiseAbs().cwiseMax(x_new.cwiseAbs());
          err_norm = wrms(err, x_ref, opt);
          if (!std::isfinite(err_norm)) {
            h *= 0.25;
            h_resume = 0.0;
            ++traj.n_rejected;
            continue;
          }
          if (err_norm > 1.0) {
            ++traj.n_rejected;
            h *= std::max(0.2, 0.9 * std::pow(err_norm, -1.0 / 3.0));
            h_resume = 0.0;
            continue;
          }
        }
        accepted = true;

        if (with_sens) {
          // Differentiate the two converged stage equations with fresh
          // Jacobians at the stage states. The sensitivity recursion runs
          // in open loop (nothing corrects S against the true flow the way
          // Newton corrects x), so it is only as stable as the state
          // coordinates are well scaled: systems should be posed in units
          // where the state magnitudes are comparable.
          const Eigen::MatrixXd J_gamma =
              fd_jacobian(f, t + kGamma * h, x_gamma, f_gamma);
          const Eigen::MatrixXd J_new = fd_jacobian(f, t + h, x_new, f_new);
          const Eigen::MatrixXd G_n = sys.df_dtheta(t, x);
          const Eigen::MatrixXd G_gamma =
              sys.df_dtheta(t + kGamma * h, x_gamma);
          const Eigen::MatrixXd G_new = sys.df_dtheta(t + h, x_new);

          const Eigen::PartialPivLU<Eigen::MatrixXd> lu_gamma(
              Eigen::MatrixXd::Identity(n, n) - (kD * h) * J_gamma);
          const Eigen::MatrixXd S_gamma = lu_gamma.solve(
              S + (kD * h) * (J * S + G_n + G_gamma));
          const Eigen::PartialPivLU<Eigen::MatrixXd> lu_new(
              Eigen::MatrixXd::Identity(n, n) - (kD * h) * J_new);
          S = lu_new.solve(kA * S_gamma - kB * S + (kD * h) * G_new);
        }

        t += h;
        x = x_new;
        fx = f_new;
        traj.nodes.push_back({t, x, fx, S});
        ++traj.n_steps;

        if (!opt.fixed_mesh) {
          const double grow =
              std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(err_norm,
                                                                  1e-10),
                                                         -1.0 / 3.0)));
          h = std::max(h * grow, h_resume);
        }
      }
    }
    // Snap exactly onto the segment boundary to make node_at() reliable.
    t = stop;
    traj.nodes.back().t = stop;
  }

  traj.n_rhs_evals = f.evals;
  return traj;
}

}  // namespace orc
