#include "orc/ocp.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace orc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Quadrature over dense trajectory output
// ---------------------------------------------------------------------------

double simpson(double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& g, double a,
                        double b, double fa, double fm, double fb,
                        double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = g(lm);
  const double frm = g(rm);
  const double left = simpson(a, fa, m, fm, flm);
  const double right = simpson(m, fm, b, fb, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * eps) {
    return left + right + delta / 15.0;
  }
  return adaptive_simpson(g, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
         adaptive_simpson(g, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
}

/// Integrates g over the trajectory's time span, splitting at the accepted
/// step boundaries (the interpolant is smooth inside each step) and
/// refining each piece adaptively to a tolerance proportional to its share
/// of a coarse whole-interval estimate.
double integrate_over_nodes(const Trajectory& traj,
                            const std::function<double(double)>& g,
                            double rel_tol) {
  const auto& nodes = traj.nodes;
  if (nodes.size() < 2) {
    return 0.0;
  }
  double coarse = 0.0;
  std::vector<double> f_at(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    f_at[i] = g(nodes[i].t);
  }
  for (size_t i = 0; i + 1 < nodes.size(); ++i) {
    coarse += 0.5 * (nodes[i + 1].t - nodes[i].t) * (f_at[i] + f_at[i + 1]);
  }
  const double span = nodes.back().t - nodes.front().t;
  const double eps_total =
      std::max(1e-12, rel_tol * std::max(std::abs(coarse), 1e-6));
  double total = 0.0;
  for (size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double a = nodes[i].t;
    const double b = nodes[i + 1].t;
    if (!(b > a)) {
      continue;
    }
    const double fm = g(0.5 * (a + b));
    const double whole = simpson(a, f_at[i], b, f_at[i + 1], fm);
    const double eps_i = eps_total * std::max((b - a) / span, 1e-6);
    total += adaptive_simpson(g, a, b, f_at[i], fm, f_at[i + 1], whole,
                              eps_i, 24);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Steady-state optimisation
// ---------------------------------------------------------------------------

bool try_steady(const SystemParams& params, const Eigen::Vector3d& u,
                const Eigen::Vector2d& d, SteadyStateResult& out) {
  try {
    out = solve_steady_state(params, u, d, nullptr);
    return true;
  } catch (const NumericsError&) {
    return false;
  } catch (const ModelError&) {
    return false;
  }
}

/// The four envelope constraints at a steady point, in scaled units:
/// superheat shortfall, outlet temperature excess, pressure band.
Eigen::Vector4d envelope_constraints(const SystemOutputs& o,
                                     const OperatingEnvelope& env,
                                     double T_scale) {
  return Eigen::Vector4d(
      (env.dT_sup_min - o.dT_superheat) / T_scale,
      o.T_wf_out_star - env.T_out_star_max,
      env.p_star_min - o.p_star,
      o.p_star - env.p_star_max);
}

/// A finite-difference step in one control that never leaves the admissible
/// box; collapses to a one-sided difference at an active bound (the bypass
/// valve rides its upper limit at typical optima).
struct ControlStep {
  Eigen::Vector3d up;
  Eigen::Vector3d um;
  double denom = 0.0;
};

ControlStep control_step(const Eigen::Vector3d& u, int j,
                         const Eigen::Vector3d& lo,
                         const Eigen::Vector3d& hi) {
  const double dj = 1e-7 * std::max(1.0, std::abs(u[j]));
  ControlStep s{u, u, 0.0};
  s.up[j] = std::min(u[j] + dj, hi[j]);
  s.um[j] = std::max(u[j] - dj, lo[j]);
  s.denom = s.up[j] - s.um[j];
  return s;
}

/// Partial derivatives of (P_net_star, dT_superheat, T_wf_out_star, p_star,
/// P_turb_star) with respect to the plant states and the three controls,
/// by central differences of the instantaneous model.
struct OutputPartials {
  Eigen::Matrix<double, 5, 7> dx;
  Eigen::Matrix<double, 5, 3> du;
};

Eigen::Matrix<double, 5, 1> output_vector(const SystemOutputs& o) {
  Eigen::Matrix<double, 5, 1> y;
  y << o.P_net_star, o.dT_superheat, o.T_wf_out_star, o.p_star,
      o.P_turb_star;
  return y;
}

OutputPartials output_partials(const SystemParams& params, const Vec7& x,
                               const Eigen::Vector3d& u,
                               const Eigen::Vector2d& d,
                               const Eigen::Vector3d& u_lo,
                               const Eigen::Vector3d& u_hi) {
  OutputPartials out;
  const Vec7 scales = internal_state_scales(params.geometry);
  for (int j = 0; j < 7; ++j) {
    const double dj = 1e-6 * scales[j];
    Vec7 xp = x, xm = x;
    xp[j] += dj;
    xm[j] -= dj;
    const auto yp = output_vector(evaluate_system(params, xp, u, d).out);
    const auto ym = output_vector(evaluate_system(params, xm, u, d).out);
    out.dx.col(j) = (yp - ym) / (2.0 * dj);
  }
  for (int j = 0; j < 3; ++j) {
    const ControlStep cst = control_step(u, j, u_lo, u_hi);
    if (!(cst.denom > 0.0)) {
      out.du.col(j).setZero();
      continue;
    }
    const auto yp = output_vector(evaluate_system(params, x, cst.up, d).out);
    const auto ym = output_vector(evaluate_system(params, x, cst.um, d).out);
    out.du.col(j) = (yp - ym) / cst.denom;
  }
  return out;
}

/// d(steady outputs)/d(controls) through the fixed-point condition: the
/// state moves along dx/du = -(dr/dx)^{-1} dr/du as the controls move.
}  // namespace

SteadyOptimum optimal_steady_state(const SystemParams& params,
                                   const Eigen::Vector2d& d_star,
                                   const OperatingEnvelope& envelope,
                                   const NlpOptions& nlp_options) {
  const double T_scale = params.scaling.T_scale;
  const Vec7 scales = internal_state_scales(params.geometry);

  // A ladder of starting controls: moderate feed flow with open bypass is
  // solvable over the whole disturbance range of interest; fall back to
  // lower feed if the plant refuses the first guess.
  const std::array<Eigen::Vector3d, 4> starts = {
      Eigen::Vector3d(0.012, 0.95, 1.0), Eigen::Vector3d(0.010, 0.95, 1.0),
      Eigen::Vector3d(0.0085, 0.90, 1.0), Eigen::Vector3d(0.0073, 0.85, 1.0)};
  SteadyStateResult st0;
  bool have_start = false;
  Eigen::Vector3d u0 = Eigen::Vector3d::Zero();
  for (const auto& s : starts) {
    u0 = s.cwiseMax(envelope.u_lower).cwiseMin(envelope.u_upper);
    if (try_steady(params, u0, d_star, st0)) {
      have_start = true;
      break;
    }
  }
  if (!have_start) {
    throw NumericsError(
        "steady optimisation: no evaluable starting point found");
  }

  // Nested formulation: the decision variables are the three controls, and
  // every evaluation solves the plant to steady state (warm-started from
  // the previous solution). Objective and constraint gradients follow from
  // the implicit-function theorem, which keeps them clean even though the
  // objective value carries the inner solver's noise.
  Eigen::VectorXd warm_start = st0.x;
  const auto solve_at = [&params, d_star, &warm_start](
                            const Eigen::Vector3d& u, SteadyStateResult& st) {
    try {
      st = solve_steady_state(params, u, d_star, &warm_start);
      warm_start = st.x;
      return true;
    } catch (const NumericsError&) {
      return false;
    } catch (const ModelError&) {
      return false;
    }
  };

  /// d(outputs)/d(controls) along the steady manifold: the state moves as
  /// dx/du = -(dr/dx)^{-1} dr/du when the controls move.
  const auto manifold_gradients =
      [&params, &envelope, d_star,
       &scales](const Vec7& x,
                const Eigen::Vector3d& u) -> Eigen::Matrix<double, 5, 3> {
    const auto scaled_rates = [&](const Vec7& xs,
                                  const Eigen::Vector3d& us) -> Vec7 {
      return evaluate_system(params, xs, us, d_star)
          .xdot.cwiseQuotient(scales);
    };
    Eigen::Matrix<double, 7, 7> A;
    for (int j = 0; j < 7; ++j) {
      const double dj = 1e-6 * scales[j];
      Vec7 xp = x, xm = x;
      xp[j] += dj;
      xm[j] -= dj;
      A.col(j) = (scaled_rates(xp, u) - scaled_rates(xm, u)) / (2.0 * dj);
    }
    Eigen::Matrix<double, 7, 3> B;
    for (int j = 0; j < 3; ++j) {
      const ControlStep cst =
          control_step(u, j, envelope.u_lower, envelope.u_upper);
      if (!(cst.denom > 0.0)) {
        B.col(j).setZero();
        continue;
      }
      B.col(j) =
          (scaled_rates(x, cst.up) - scaled_rates(x, cst.um)) / cst.denom;
    }
    const Eigen::Matrix<double, 7, 3> dxdu = -A.partialPivLu().solve(B);
    const OutputPartials p = output_partials(params, x, u, d_star,
                                             envelope.u_lower,
                                             envelope.u_upper);
    return p.du + p.dx * dxdu;
  };

  NlpProblem prob;
  prob.n = 3;
  prob.m = 4;
  prob.lower = envelope.u_lower;
  prob.upper = envelope.u_upper;
  prob.eval = [&envelope, T_scale, solve_at, manifold_gradients](
                  const Eigen::VectorXd& th, double& f, Eigen::VectorXd& gf,
                  Eigen::VectorXd& c, Eigen::MatrixXd& jc) -> bool {
    try {
      SteadyStateResult st;
      if (!solve_at(th, st)) {
        return false;
      }
      f = -st.out.P_net_star;
      c = envelope_constraints(st.out, envelope, T_scale);
      const Eigen::Matrix<double, 5, 3> dy =
          manifold_gradients(st.x.head<7>(), th);
      gf = -dy.row(0).transpose();
      jc.resize(4, 3);
      jc.row(0) = -dy.row(1) / T_scale;
      jc.row(1) = dy.row(2);
      jc.row(2) = -dy.row(3);
      jc.row(3) = dy.row(3);
      return true;
    } catch (const ModelError&) {
      return false;
    } catch (const NumericsError&) {
      return false;
    }
  };
  prob.eval_value = [&envelope, T_scale, solve_at](const Eigen::VectorXd& th,
                                                   double& f,
                                                   Eigen::VectorXd& c)
      -> bool {
    try {
      SteadyStateResult st;
      if (!solve_at(th, st)) {
        return false;
      }
      f = -st.out.P_net_star;
      c = envelope_constraints(st.out, envelope, T_scale);
      return true;
    } catch (const ModelError&) {
      return false;
    } catch (const NumericsError&) {
      return false;
    }
  };

  // The objective value inherits roundoff noise from the inner Newton
  // solve, which would otherwise freeze the line search well above the
  // stationarity target; allow decreases within that noise band.
  NlpOptions opt = nlp_options;
  opt.noise_budget = std::max(opt.noise_budget, 1e-11);

  SteadyOptimum res;
  res.nlp = solve_nlp(prob, u0, opt);
  res.u_star = res.nlp.theta;

  // Re-solve the plant at the optimal controls so callers get the
  // steady point to the plant solver's own accuracy.
  if (!solve_at(res.u_star, res.steady)) {
    throw NumericsError(
        "steady optimisation: optimum not re-solvable at the returned "
        "controls");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Trajectory objectives
// ---------------------------------------------------------------------------

double eval_phi1(const ClosedLoop& cl, const Trajectory& traj,
                 double dT_sup_min) {
  const auto g = [&](double t) {
    const double dev =
        outputs_at(cl, t, traj.eval(t)).dT_superheat - dT_sup_min;
    return dev * dev;
  };
  return integrate_over_nodes(traj, g, 1e-8);
}

double eval_phi2(const ClosedLoop& cl, const Trajectory& traj) {
  const auto g = [&](double t) {
    return outputs_at(cl, t, traj.eval(t)).P_net_star;
  };
  return -integrate_over_nodes(traj, g, 1e-8);
}

// ---------------------------------------------------------------------------
// Transcription of the dynamic problem
// ---------------------------------------------------------------------------

namespace {

/// Kinds of pointwise path conditions, each mapped to one scalar c <= 0.
enum class ConKind {
  SuperheatMin,
  OutletTempMax,
  PressureMin,
  PressureMax,
  TurbinePowerCap,
  SuperheatMax,
};

struct PathCon {
  double t = 0.0;
  ConKind kind = ConKind::SuperheatMin;
};

/// Static description of one transcribed problem: which controls are free,
/// the shared knot grid, check times and constraint list.
struct Transcription {
  SystemParams params;
  OcpSpec spec;
  Disturbance dist;
  std::array<bool, 3> free_ctl = {true, true, true};
  /// Values for frozen controls (times must equal the shared grid).
  std::array<std::vector<double>, 3> frozen_values;
  std::vector<double> knots;
  int N = 0;
  int n_theta = 0;
  std::array<int, 3> slot = {-1, -1, -1};
  double t0 = 0.0;
  double tf = 0.0;
  Vec7 x0 = Vec7::Zero();
  std::vector<double> check_times;
  std::vector<PathCon> cons;
  std::vector<double> mandatory;
};

std::vector<double> make_check_grid(const std::vector<double>& knots,
                                    const std::vector<Stage>& stages,
                                    double t0, double tf, int per_interval) {
  // Segment boundaries: control knots, horizon ends and stage joins, all
  // clamped into the horizon. Each segment is then subdivided uniformly so
  // the paths are watched even where the control grid is coarse.
  std::vector<double> bounds = knots;
  bounds.push_back(t0);
  bounds.push_back(tf);
  for (const Stage& s : stages) {
    bounds.push_back(s.t_start);
    bounds.push_back(s.t_end);
  }
  for (double& t : bounds) {
    t = std::min(std::max(t, t0), tf);
  }
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end(),
                           [&](double a, double b) {
                             return std::abs(a - b) <=
                                    1e-9 * std::max(1.0, std::abs(b));
                           }),
               bounds.end());
  std::vector<double> g;
  for (size_t i = 0; i < bounds.size(); ++i) {
    g.push_back(bounds[i]);
    if (i + 1 < bounds.size()) {
      const double a = bounds[i];
      const double b = bounds[i + 1];
      for (int k = 1; k < per_interval; ++k) {
        g.push_back(a + (b - a) * double(k) / double(per_interval));
      }
    }
  }
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

bool in_power_limited_stage(const std::vector<Stage>& stages, double t) {
  for (const Stage& s : stages) {
    if (s.power_limited && t >= s.t_start - 1e-9 && t <= s.t_end + 1e-9) {
      return true;
    }
  }
  return false;
}

std::vector<PathCon> make_constraints(const OcpSpec& spec,
                                      const std::vector<double>& checks) {
  std::vector<PathCon> cons;
  const bool sup_cap = spec.dT_sup_max < kInf;
  for (double t : checks) {
    cons.push_back({t, ConKind::SuperheatMin});
    cons.push_back({t, ConKind::OutletTempMax});
    cons.push_back({t, ConKind::PressureMin});
    cons.push_back({t, ConKind::PressureMax});
    if (spec.P_turb_star_max < kInf &&
        in_power_limited_stage(spec.stages, t)) {
      cons.push_back({t, ConKind::TurbinePowerCap});
    }
    if (sup_cap) {
      cons.push_back({t, ConKind::SuperheatMax});
    }
  }
  return cons;
}

/// Scalar value of one path condition from the instantaneous outputs.
double con_value(const PathCon& pc, const SystemOutputs& o,
                 const OcpSpec& spec, double T_scale) {
  const OperatingEnvelope& env = spec.envelope;
  switch (pc.kind) {
    case ConKind::SuperheatMin:
      return (env.dT_sup_min - o.dT_superheat) / T_scale;
    case ConKind::OutletTempMax:
      return o.T_wf_out_star - env.T_out_star_max;
    case ConKind::PressureMin:
      return env.p_star_min - o.p_star;
    case ConKind::PressureMax:
      return o.p_star - env.p_star_max;
    case ConKind::TurbinePowerCap:
      return o.P_turb_star - spec.P_turb_star_max;
    case ConKind::SuperheatMax:
      return (o.dT_superheat - spec.dT_sup_max) / T_scale;
  }
  return 0.0;
}

/// Weights that assemble one path-condition gradient from the output
/// partials (rows: P_net_star, dT_superheat, T_wf_out_star, p_star,
/// P_turb_star).
struct ConWeights {
  double w_dT = 0.0;
  double w_Tout = 0.0;
  double w_p = 0.0;
  double w_Pturb = 0.0;
};

ConWeights con_weights(const PathCon& pc, double T_scale) {
  ConWeights w;
  switch (pc.kind) {
    case ConKind::SuperheatMin:
      w.w_dT = -1.0 / T_scale;
      break;
    case ConKind::OutletTempMax:
      w.w_Tout = 1.0;
      break;
    case ConKind::PressureMin:
      w.w_p = -1.0;
      break;
    case ConKind::PressureMax:
      w.w_p = 1.0;
      break;
    case ConKind::TurbinePowerCap:
      w.w_Pturb = 1.0;
      break;
    case ConKind::SuperheatMax:
      w.w_dT = 1.0 / T_scale;
      break;
  }
  return w;
}

ControlSchedule controls_from_theta(const Transcription& tr,
                                    const Eigen::VectorXd& theta) {
  ControlSchedule cs;
  std::array<PiecewiseLinear*, 3> target = {&cs.mdot_wf_star, &cs.n_star,
                                            &cs.x_bpv};
  for (int j = 0; j < 3; ++j) {
    target[size_t(j)]->t = tr.knots;
    if (tr.free_ctl[size_t(j)]) {
      const auto seg = theta.segment(tr.slot[size_t(j)] * tr.N, tr.N);
      target[size_t(j)]->v.assign(seg.data(), seg.data() + tr.N);
    } else {
      target[size_t(j)]->v = tr.frozen_values[size_t(j)];
    }
  }
  return cs;
}

/// The augmented right-hand side: plant states plus the two objective
/// quadrature states (squared superheat deviation; starred net power).
Eigen::VectorXd augmented_rhs(const SystemParams& params,
                              const OperatingEnvelope& env,
                              const Eigen::VectorXd& x,
                              const Eigen::Vector3d& u,
                              const Eigen::Vector2d& d) {
  const SystemEval ev = evaluate_system(params, x.head<7>(), u, d);
  Eigen::VectorXd dx(9);
  dx.head<7>() = ev.xdot;
  const double dev = ev.out.dT_superheat - env.dT_sup_min;
  dx[7] = dev * dev;
  dx[8] = ev.out.P_net_star;
  return dx;
}

/// Builds the closed-loop augmented ODE for the given controls; when
/// `with_sens` the parameter Jacobian chains the control partials through
/// the piecewise-linear hat weights of the shared knot grid.
OdeSystem make_ode(const Transcription& tr, const ControlSchedule& cs,
                   bool with_sens) {
  OdeSystem sys;
  sys.dim = 9;
  const SystemParams* params = &tr.params;
  const OperatingEnvelope* env = &tr.spec.envelope;
  const Disturbance* dist = &tr.dist;
  sys.f = [params, env, cs, dist](double t, const Eigen::VectorXd& x) {
    return augmented_rhs(*params, *env, x, cs.eval(t), dist->eval(t));
  };
  if (with_sens) {
    sys.np = tr.n_theta;
    const PiecewiseLinear grid = cs.mdot_wf_star;  // shared knot times
    const std::array<bool, 3> free_ctl = tr.free_ctl;
    const std::array<int, 3> slot = tr.slot;
    const int N = tr.N;
    const int n_theta = tr.n_theta;
    sys.df_dtheta = [params, env, cs, dist, grid, free_ctl, slot, N,
                     n_theta](double t, const Eigen::VectorXd& x) {
      const Eigen::Vector3d u = cs.eval(t);
      const Eigen::Vector2d d = dist->eval(t);
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(9, n_theta);
      const PiecewiseLinear::Support sup = grid.support(t);
      for (int j = 0; j < 3; ++j) {
        if (!free_ctl[size_t(j)]) {
          continue;
        }
        const ControlStep cst =
            control_step(u, j, env->u_lower, env->u_upper);
        if (!(cst.denom > 0.0)) {
          continue;
        }
        const Eigen::VectorXd col =
            (augmented_rhs(*params, *env, x, cst.up, d) -
             augmented_rhs(*params, *env, x, cst.um, d)) /
            cst.denom;
        const int base = slot[size_t(j)] * N;
        G.col(base + sup.i0) += sup.w0 * col;
        if (sup.i1 != sup.i0) {
          G.col(base + sup.i1) += sup.w1 * col;
        }
      }
      return G;
    };
  }
  return sys;
}

/// Optimizer evaluations integrate on a fixed mesh: the step pattern then
/// depends only on the time grid, so the objective is a smooth function of
/// the control nodes. The verification pass re-integrates adaptively at
/// tight tolerance to measure the solution on the accurate model.
enum class ShootMode { Optimize, Verify };

IntegratorOptions shooting_integrator_options(const Transcription& tr,
                                              ShootMode mode) {
  IntegratorOptions opt;
  if (mode == ShootMode::Optimize) {
    opt.rtol = 1e-7;
    opt.atol = 1e-9;
    opt.fixed_mesh = true;
    opt.h_max = tr.spec.shoot_dt;
    opt.h_init = tr.spec.shoot_dt;
  } else {
    opt.rtol = 1e-8;
    opt.atol = 1e-10;
    opt.h_init = 1.0;
  }
  return opt;
}

/// One shooting pass. Returns false when the plant model rejects the
/// control iterate (integration failure), which the NLP treats as an
/// unevaluable point.
bool shoot(const Transcription& tr, const ControlSchedule& cs, bool with_sens,
           Trajectory& traj, ShootMode mode = ShootMode::Optimize) {
  const OdeSystem sys = make_ode(tr, cs, with_sens);
  Eigen::VectorXd x0(9);
  x0.head<7>() = tr.x0;
  x0[7] = 0.0;
  x0[8] = 0.0;
  try {
    traj = integrate_ode(sys, tr.t0, tr.tf, x0,
                         shooting_integrator_options(tr, mode),
                         tr.mandatory);
    return true;
  } catch (const NumericsError&) {
    return false;
  } catch (const ModelError&) {
    return false;
  }
}

double objective_from_trajectory(const Transcription& tr,
                                 const Trajectory& traj) {
  const Eigen::VectorXd& xf = traj.nodes.back().x;
  return tr.spec.objective == ObjectiveKind::Phi1 ? xf[7] : -xf[8];
}

/// Weights the hat functions of the shared grid into a dense gradient row:
/// d(output)/d(theta) = d(output)/du * W(t). Writes into one row of the
/// constraint Jacobian.
void add_control_gradient(const Transcription& tr,
                          const PiecewiseLinear& grid, double t,
                          const Eigen::Matrix<double, 1, 3>& dgdu,
                          Eigen::MatrixXd& jac, long row) {
  const PiecewiseLinear::Support sup = grid.support(t);
  for (int j = 0; j < 3; ++j) {
    if (!tr.free_ctl[size_t(j)]) {
      continue;
    }
    const int base = tr.slot[size_t(j)] * tr.N;
    jac(row, base + sup.i0) += dgdu[j] * sup.w0;
    if (sup.i1 != sup.i0) {
      jac(row, base + sup.i1) += dgdu[j] * sup.w1;
    }
  }
}

/// Full evaluation for the NLP: objective, path constraints and both
/// gradients from one sensitivity integration. Returns false (unevaluable)
/// when the plant model rejects the iterate anywhere along the horizon.
bool eval_transcribed(const Transcription& tr, const Eigen::VectorXd& theta,
                      double& f, Eigen::VectorXd& grad_f, Eigen::VectorXd& c,
                      Eigen::MatrixXd& jac_c) try {
  const ControlSchedule cs = controls_from_theta(tr, theta);
  Trajectory traj;
  if (!shoot(tr, cs, true, traj)) {
    return false;
  }
  f = objective_from_trajectory(tr, traj);
  const int qrow = tr.spec.objective == ObjectiveKind::Phi1 ? 7 : 8;
  const double qsign = tr.spec.objective == ObjectiveKind::Phi1 ? 1.0 : -1.0;
  grad_f = qsign * traj.nodes.back().S.row(qrow).transpose();

  const double T_scale = tr.params.scaling.T_scale;
  c.resize(long(tr.cons.size()));
  jac_c.setZero(long(tr.cons.size()), tr.n_theta);
  size_t i = 0;
  while (i < tr.cons.size()) {
    const double t = tr.cons[i].t;
    const TrajectoryNode& node = traj.node_at(t);
    const Eigen::Vector3d u = cs.eval(t);
    const Eigen::Vector2d d = tr.dist.eval(t);
    const Vec7 xp = node.x.head<7>();
    const SystemOutputs o = evaluate_system(tr.params, xp, u, d).out;
    const OutputPartials parts =
        output_partials(tr.params, xp, u, d, tr.spec.envelope.u_lower,
                        tr.spec.envelope.u_upper);
    // State sensitivities of the plant block at this time.
    const Eigen::MatrixXd S = node.S.topRows(7);
    for (; i < tr.cons.size() && tr.cons[i].t == t; ++i) {
      const PathCon& pc = tr.cons[i];
      c[long(i)] = con_value(pc, o, tr.spec, T_scale);
      const ConWeights w = con_weights(pc, T_scale);
      const Eigen::Matrix<double, 1, 7> gx =
          w.w_dT * parts.dx.row(1) + w.w_Tout * parts.dx.row(2) +
          w.w_p * parts.dx.row(3) + w.w_Pturb * parts.dx.row(4);
      const Eigen::Matrix<double, 1, 3> gu =
          w.w_dT * parts.du.row(1) + w.w_Tout * parts.du.row(2) +
          w.w_p * parts.du.row(3) + w.w_Pturb * parts.du.row(4);
      jac_c.row(long(i)) = gx * S;
      add_control_gradient(tr, cs.mdot_wf_star, t, gu, jac_c, long(i));
    }
  }
  return true;
} catch (const ModelError&) {
  return false;
} catch (const NumericsError&) {
  return false;
}

/// Cheap evaluation without gradients for line-search trials.
bool eval_transcribed_value(const Transcription& tr,
                            const Eigen::VectorXd& theta, double& f,
                            Eigen::VectorXd& c) try {
  const ControlSchedule cs = controls_from_theta(tr, theta);
  Trajectory traj;
  if (!shoot(tr, cs, false, traj)) {
    return false;
  }
  f = objective_from_trajectory(tr, traj);
  const double T_scale = tr.params.scaling.T_scale;
  c.resize(long(tr.cons.size()));
  size_t i = 0;
  while (i < tr.cons.size()) {
    const double t = tr.cons[i].t;
    const TrajectoryNode& node = traj.node_at(t);
    const SystemOutputs o = evaluate_system(
        tr.params, Vec7(node.x.head<7>()), cs.eval(t), tr.dist.eval(t)).out;
    for (; i < tr.cons.size() && tr.cons[i].t == t; ++i) {
      c[long(i)] = con_value(tr.cons[i], o, tr.spec, T_scale);
    }
  }
  return true;
} catch (const ModelError&) {
  return false;
} catch (const NumericsError&) {
  return false;
}

/// Largest scaled violation over a grid `factor` times denser than the
/// optimization check grid, measured on a fresh integration whose stops
/// land exactly on the verification times.
double verify_solution(const Transcription& tr, const ControlSchedule& cs,
                       Trajectory& traj_out) {
  OcpSpec dense = tr.spec;
  dense.check_per_interval = tr.spec.check_per_interval * 4;
  const std::vector<double> vgrid = make_check_grid(
      tr.knots, dense.stages, tr.t0, tr.tf, dense.check_per_interval);
  const std::vector<PathCon> vcons = make_constraints(dense, vgrid);

  Transcription vtr = tr;
  vtr.mandatory = tr.mandatory;
  vtr.mandatory.insert(vtr.mandatory.end(), vgrid.begin(), vgrid.end());
  std::sort(vtr.mandatory.begin(), vtr.mandatory.end());
  vtr.mandatory.erase(
      std::unique(vtr.mandatory.begin(), vtr.mandatory.end()),
      vtr.mandatory.end());
  if (!shoot(vtr, cs, false, traj_out, ShootMode::Verify)) {
    throw NumericsError(
        "ocp: solution trajectory failed to integrate during verification");
  }
  const double T_scale = tr.params.scaling.T_scale;
  double worst = 0.0;
  for (const PathCon& pc : vcons) {
    const TrajectoryNode& node = traj_out.node_at(pc.t);
    const SystemOutputs o =
        evaluate_system(tr.params, Vec7(node.x.head<7>()), cs.eval(pc.t),
                        tr.dist.eval(pc.t))
            .out;
    worst = std::max(worst, con_value(pc, o, tr.spec, T_scale));
  }
  return std::max(0.0, worst);
}

Transcription make_transcription(const OcpSpec& spec,
                                 const SystemParams& params,
                                 const Disturbance& dist,
                                 std::array<bool, 3> free_ctl,
                                 const ControlSchedule* frozen) {
  Transcription tr;
  tr.params = params;
  finalize(tr.params);
  tr.spec = spec;
  tr.dist = dist;
  tr.free_ctl = free_ctl;
  tr.knots = spec.control_times;
  tr.N = int(tr.knots.size());
  tr.t0 = spec.stages.front().t_start;
  tr.tf = spec.stages.back().t_end;
  int s = 0;
  for (int j = 0; j < 3; ++j) {
    if (free_ctl[size_t(j)]) {
      tr.slot[size_t(j)] = s++;
    } else {
      if (frozen == nullptr) {
        throw ConfigError("ocp: frozen controls require supplied values");
      }
      const PiecewiseLinear& src =
          j == 0 ? frozen->mdot_wf_star : (j == 1 ? frozen->n_star
                                                  : frozen->x_bpv);
      if (src.t != tr.knots) {
        throw ConfigError(
            "ocp: frozen control values must live on the shared knot grid");
      }
      tr.frozen_values[size_t(j)] = src.v;
    }
  }
  tr.n_theta = s * tr.N;
  tr.check_times = make_check_grid(tr.knots, spec.stages, tr.t0, tr.tf,
                                   spec.check_per_interval);
  tr.cons = make_constraints(spec, tr.check_times);

  std::vector<double> mand = tr.check_times;
  mand.insert(mand.end(), tr.knots.begin(), tr.knots.end());
  mand.insert(mand.end(), dist.breakpoints.begin(), dist.breakpoints.end());
  for (const Stage& st : spec.stages) {
    mand.push_back(st.t_start);
    mand.push_back(st.t_end);
  }
  std::sort(mand.begin(), mand.end());
  mand.erase(std::unique(mand.begin(), mand.end()), mand.end());
  tr.mandatory = std::move(mand);
  return tr;
}

OcpSolution package_solution(const Transcription& tr,
                             const ControlSchedule& cs, const NlpResult& nlp,
                             const Eigen::Vector3d& u_steady) {
  OcpSolution sol;
  sol.controls = cs;
  sol.nlp = nlp;
  sol.kkt = nlp.kkt;
  sol.converged = nlp.converged;
  sol.u_steady = u_steady;
  sol.x0 = tr.x0;
  sol.max_violation = verify_solution(tr, cs, sol.trajectory);
  const Eigen::VectorXd& xf = sol.trajectory.nodes.back().x;
  sol.phi1 = xf[7];
  sol.phi2 = -xf[8];
  sol.objective =
      tr.spec.objective == ObjectiveKind::Phi1 ? sol.phi1 : sol.phi2;
  return sol;
}

OcpSolution solve_transcribed(const OcpSpec& spec, const SystemParams& params,
                              const Disturbance& dist,
                              std::array<bool, 3> free_ctl,
                              const ControlSchedule* frozen,
                              const Eigen::VectorXd* theta_init) {
  validate(spec);
  Transcription tr =
      make_transcription(spec, params, dist, free_ctl, frozen);

  // Initial plant state and control guess: the optimal steady point at the
  // beginning-of-horizon disturbance unless the caller pinned them.
  Eigen::Vector3d u0;
  if (spec.x0.has_value() && spec.u_init.has_value()) {
    tr.x0 = *spec.x0;
    u0 = *spec.u_init;
  } else {
    const SteadyOptimum so = optimal_steady_state(
        tr.params, dist.eval(tr.t0), spec.envelope, NlpOptions{});
    tr.x0 = spec.x0.has_value() ? *spec.x0 : Vec7(so.steady.x.head<7>());
    u0 = spec.u_init.has_value() ? *spec.u_init : so.u_star;
  }

  // Zero-length horizon: nothing to integrate or optimise.
  if (!(tr.tf > tr.t0)) {
    OcpSolution sol;
    ControlSchedule cs;
    cs.mdot_wf_star = PiecewiseLinear::constant(u0[0]);
    cs.n_star = PiecewiseLinear::constant(u0[1]);
    cs.x_bpv = PiecewiseLinear::constant(u0[2]);
    sol.controls = cs;
    sol.objective = 0.0;
    sol.converged = true;
    sol.u_steady = u0;
    sol.x0 = tr.x0;
    TrajectoryNode node;
    node.t = tr.t0;
    node.x = Eigen::VectorXd::Zero(9);
    node.x.head<7>() = tr.x0;
    node.f = Eigen::VectorXd::Zero(9);
    sol.trajectory.nodes.push_back(std::move(node));
    return sol;
  }

  Eigen::VectorXd theta0(tr.n_theta);
  if (theta_init != nullptr) {
    if (theta_init->size() != tr.n_theta) {
      throw ConfigError("ocp: initial control vector has the wrong size");
    }
    theta0 = *theta_init;
  } else {
    for (int j = 0; j < 3; ++j) {
      if (tr.free_ctl[size_t(j)]) {
        theta0.segment(tr.slot[size_t(j)] * tr.N, tr.N).setConstant(u0[j]);
      }
    }
  }

  NlpProblem prob;
  prob.n = tr.n_theta;
  prob.m = int(tr.cons.size());
  prob.lower.resize(tr.n_theta);
  prob.upper.resize(tr.n_theta);
  for (int j = 0; j < 3; ++j) {
    if (tr.free_ctl[size_t(j)]) {
      prob.lower.segment(tr.slot[size_t(j)] * tr.N, tr.N)
          .setConstant(spec.envelope.u_lower[j]);
      prob.upper.segment(tr.slot[size_t(j)] * tr.N, tr.N)
          .setConstant(spec.envelope.u_upper[j]);
    }
  }
  prob.eval = [&tr](const Eigen::VectorXd& th, double& f,
                    Eigen::VectorXd& gf, Eigen::VectorXd& c,
                    Eigen::MatrixXd& jc) {
    return eval_transcribed(tr, th, f, gf, c, jc);
  };
  prob.eval_value = [&tr](const Eigen::VectorXd& th, double& f,
                          Eigen::VectorXd& c) {
    return eval_transcribed_value(tr, th, f, c);
  };

  const NlpResult nlp = solve_nlp(prob, theta0, spec.nlp);
  const ControlSchedule cs = controls_from_theta(tr, nlp.theta);
  return package_solution(tr, cs, nlp, u0);
}

}  // namespace

void validate(const OcpSpec& spec) {
  if (spec.stages.empty()) {
    throw ConfigError("ocp: at least one stage is required");
  }
  for (size_t i = 0; i < spec.stages.size(); ++i) {
    const Stage& s = spec.stages[i];
    if (!(s.t_end >= s.t_start)) {
      throw ConfigError("ocp: stage must not end before it starts");
    }
    if (i > 0 && std::abs(s.t_start - spec.stages[i - 1].t_end) >
                     1e-9 * std::max(1.0, std::abs(s.t_start))) {
      throw ConfigError("ocp: stages must be contiguous");
    }
    if (s.power_limited && !(spec.P_turb_star_max < kInf)) {
      throw ConfigError(
          "ocp: power-limited stage requires a finite turbine power cap");
    }
  }
  if (spec.control_times.empty()) {
    throw ConfigError("ocp: the control grid must have at least one knot");
  }
  for (size_t i = 1; i < spec.control_times.size(); ++i) {
    if (!(spec.control_times[i] > spec.control_times[i - 1])) {
      throw ConfigError("ocp: control knots must be strictly increasing");
    }
  }
  const double t0 = spec.stages.front().t_start;
  const double tf = spec.stages.back().t_end;
  const double pad = 1e-9 * std::max(1.0, tf - t0);
  if (spec.control_times.front() < t0 - pad ||
      spec.control_times.back() > tf + pad) {
    throw ConfigError("ocp: control knots must lie within the horizon");
  }
  if (spec.check_per_interval < 1) {
    throw ConfigError("ocp: need at least one check point per interval");
  }
  if (!(spec.shoot_dt > 0.0)) {
    throw ConfigError("ocp: the optimizer integration mesh must be positive");
  }
  if ((spec.envelope.u_lower.array() > spec.envelope.u_upper.array())
          .any() ||
      !(spec.envelope.p_star_min <= spec.envelope.p_star_max)) {
    throw ConfigError("ocp: envelope bounds are inverted");
  }
  if (spec.dT_sup_max < kInf &&
      !(spec.dT_sup_max > spec.envelope.dT_sup_min)) {
    throw ConfigError(
        "ocp: superheat ceiling must exceed the superheat floor");
  }
}

OcpSolution solve_ocp(const OcpSpec& spec, const SystemParams& params,
                      const Disturbance& disturbance) {
  return solve_transcribed(spec, params, disturbance, {true, true, true},
                           nullptr, nullptr);
}

OcpSolution solve_msh_two_step(const OcpSpec& spec,
                               const SystemParams& params,
                               const Disturbance& disturbance) {
  for (const Stage& s : spec.stages) {
    if (s.power_limited) {
      throw ConfigError(
          "ocp: the two-step minimal-superheat procedure cannot honor "
          "stage power caps; use solve_msh_bounded");
    }
  }
  OcpSpec step1 = spec;
  step1.objective = ObjectiveKind::Phi1;
  const OcpSolution sol1 = solve_transcribed(
      step1, params, disturbance, {true, true, true}, nullptr, nullptr);

  OcpSpec step2 = spec;
  step2.objective = ObjectiveKind::Phi2;
  // Reuse the step-1 starting point so both steps share the same steady
  // initial state.
  step2.x0 = sol1.x0;
  step2.u_init = sol1.u_steady;
  const int N = int(spec.control_times.size());
  Eigen::VectorXd theta0(N);
  for (int k = 0; k < N; ++k) {
    theta0[k] = sol1.controls.n_star.v[size_t(k)];
  }
  OcpSolution sol2 =
      solve_transcribed(step2, params, disturbance, {false, true, false},
                        &sol1.controls, &theta0);
  sol2.phi1_step1 = sol1.phi1;
  return sol2;
}

OcpSolution solve_msh_bounded(const OcpSpec& spec, const SystemParams& params,
                              const Disturbance& disturbance) {
  if (spec.objective != ObjectiveKind::Phi2) {
    throw ConfigError(
        "ocp: the bounded-superheat procedure maximises net work; set the "
        "net-work objective");
  }
  OcpSpec bounded = spec;
  if (!(bounded.dT_sup_max < kInf)) {
    bounded.dT_sup_max = bounded.envelope.dT_sup_min + 0.7;
  }
  return solve_ocp(bounded, params, disturbance);
}

}  // namespace orc
