#include "orc/system.hpp"

#include <array>
#include <string>

#include "orc/parallel.hpp"

namespace orc {

void finalize(SystemParams& p) {
  finalize(p.fluid);
  finalize(p.exhaust);
  finalize(p.geometry);
  finalize(p.heat_transfer);
  finalize(p.pump);
  finalize(p.turbine);
  finalize(p.fluid, p.condenser);
  finalize(p.scaling);
}

SystemParams default_system() {
  SystemParams p;
  finalize(p);
  return p;
}

Vec7 internal_state_scales(const EvapGeometry& geom) {
  Vec7 s;
  s << geom.length, geom.length, 1.0e6, 1.0e6, 100.0, 100.0, 100.0;
  return s;
}

SystemEval evaluate_system(const SystemParams& p, const Vec7& x,
                           const Eigen::Vector3d& u_star,
                           const Eigen::Vector2d& d_star) {
  const EvapState state = EvapState::from_vector(x);
  const ScalingConfig& sc = p.scaling;

  const double mdot_wf_in = u_star[0] * sc.mdot_scale;
  // Physical shaft speed, then the turbine map's own normalization.
  const double n_map = u_star[1] * sc.n_scale / p.turbine.n_scale;
  const double x_bpv = u_star[2];
  const double mdot_exh_total = d_star[0] * sc.mdot_scale;
  const double T_exh_in = d_star[1] * sc.T_scale;

  const BypassSplit split = bypass_split(mdot_exh_total, x_bpv);

  // Turbine admission fixes the evaporator outlet flow from the outlet
  // state; the expansion then sets the condenser inlet.
  const FluidState outlet = state_from_ph(p.fluid, state.p, state.h_out);
  const double mdot_out =
      turbine_admission(p.turbine, state.p, outlet.T, p.condenser.p_cond);
  const TurbineResult turb =
      turbine_power(p.fluid, p.turbine, mdot_out, state.p, state.h_out,
                    p.condenser.p_cond, n_map);

  // Condensate is pumped back to the (current) evaporation pressure.
  const CondenserResult cond =
      condenser_outlet(p.fluid, p.condenser, mdot_out, turb.h_out);
  const PumpResult pump =
      pump_state(p.fluid, p.pump, p.condenser.p_cond, cond.h_out, state.p,
                 mdot_wf_in);

  EvapInputs in;
  in.mdot_wf_in = mdot_wf_in;
  in.h_wf_in = pump.h_out;
  in.mdot_exh = split.mdot_evap;
  in.T_exh_in = T_exh_in;
  in.mdot_wf_out = mdot_out;
  const EvapDae dae = assemble_dae(p.fluid, p.exhaust, p.geometry,
                                   p.heat_transfer, p.arrangement, state, in);

  SystemEval ev;
  ev.xdot = dae.xdot;
  SystemOutputs& o = ev.out;
  o.P_turb = turb.P_shaft;
  o.P_pump = pump.power;
  o.P_net = turb.P_shaft - pump.power;
  o.P_turb_star = o.P_turb / sc.P_scale;
  o.P_pump_star = o.P_pump / sc.P_scale;
  o.P_net_star = o.P_net / sc.P_scale;
  o.dT_superheat = dae.out.dT_superheat;
  o.T_wf_out = dae.out.T_wf_out;
  o.T_wf_out_star = o.T_wf_out / sc.T_scale;
  o.p_star = state.p / sc.p_scale;
  o.mdot_wf_in = mdot_wf_in;
  o.mdot_wf_out = mdot_out;
  o.mdot_exh_evap = split.mdot_evap;
  o.x_bpv = x_bpv;
  o.n_star = u_star[1];
  o.T_exh_in = T_exh_in;
  o.T_exh_out = dae.out.T_exh_out;
  o.Q_exh_total = dae.out.Q_exh[0] + dae.out.Q_exh[1] + dae.out.Q_exh[2];
  o.Q_amb_total = dae.out.Q_amb[0] + dae.out.Q_amb[1] + dae.out.Q_amb[2];
  o.eta_is = turb.eta_is;
  o.eta_mech = turb.eta_mech;
  o.torque_star = turb.torque_star;
  o.h_feed = pump.h_out;
  o.zone_len = dae.out.zone_len;
  return ev;
}

SystemOutputs outputs_at(const ClosedLoop& cl, double t,
                         const Eigen::VectorXd& x) {
  if (x.size() < 7) {
    throw ConfigError("outputs_at: state vector must carry the plant states");
  }
  const Vec7 xp = x.head<7>();
  return evaluate_system(cl.params, xp, cl.controls.eval(t),
                         cl.disturbance.eval(t))
      .out;
}

std::vector<double> slope_breaks(const ClosedLoop& cl, double t0, double tf) {
  std::vector<double> b = cl.controls.breakpoints();
  b.insert(b.end(), cl.disturbance.breakpoints.begin(),
           cl.disturbance.breakpoints.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  const double pad = 1e-12 * std::max(1.0, std::abs(tf - t0));
  std::vector<double> out;
  for (double t : b) {
    if (t > t0 + pad && t < tf - pad) {
      out.push_back(t);
    }
  }
  return out;
}

Eigen::VectorXd augmented_rates(const SystemParams& p, const Vec7& scales,
                                const Eigen::VectorXd& xs,
                                const Eigen::Vector3d& u_star,
                                const Eigen::Vector2d& d_star,
                                double dT_sup_ref) {
  const Vec7 x = xs.head<7>().cwiseProduct(scales);
  const SystemEval ev = evaluate_system(p, x, u_star, d_star);
  Eigen::VectorXd rates(9);
  rates.head<7>() = ev.xdot.cwiseQuotient(scales);
  // The superheat deviation is normalised before squaring so the
  // quadrature state stays within a few orders of the scaled plant states.
  // An unbalanced quadrature row (raw kelvin-squared magnitudes reach 1e5)
  // couples through the shared step factorisation strongly enough to blow
  // up the sensitivity recursion of the otherwise well-behaved plant
  // block; see dev_superheat_integral for the conversion back.
  const double dev = (ev.out.dT_superheat - dT_sup_ref) / p.scaling.T_scale;
  rates[7] = dev * dev;
  rates[8] = ev.out.P_net_star;
  return rates;
}

namespace {

/// Offsets of the three control-node blocks inside the gradient vector.
struct NodeLayout {
  std::array<int, 3> offset = {0, 0, 0};
  int total = 0;
};

std::array<const PiecewiseLinear*, 3> schedule_parts(
    const ControlSchedule& cs) {
  return {&cs.mdot_wf_star, &cs.n_star, &cs.x_bpv};
}

NodeLayout node_layout(const ControlSchedule& cs) {
  NodeLayout l;
  const auto ctl = schedule_parts(cs);
  for (int j = 0; j < 3; ++j) {
    l.offset[size_t(j)] = l.total;
    l.total += int(ctl[size_t(j)]->size());
  }
  return l;
}

/// The control slot and local node index behind one gradient entry.
std::pair<int, int> locate_node(const NodeLayout& l, int k) {
  for (int j = 2; j >= 0; --j) {
    if (k >= l.offset[size_t(j)]) {
      return {j, k - l.offset[size_t(j)]};
    }
  }
  throw ConfigError("trajectory gradient: parameter index out of range");
}

/// Copy of the schedule with gradient entry k shifted by delta.
ControlSchedule perturb_node(const ControlSchedule& cs, const NodeLayout& l,
                             int k, double delta) {
  ControlSchedule out = cs;
  const auto [j, i] = locate_node(l, k);
  std::array<PiecewiseLinear*, 3> ctl = {&out.mdot_wf_star, &out.n_star,
                                         &out.x_bpv};
  ctl[size_t(j)]->v[size_t(i)] += delta;
  return out;
}

double node_value(const ControlSchedule& cs, const NodeLayout& l, int k) {
  const auto [j, i] = locate_node(l, k);
  return schedule_parts(cs)[size_t(j)]->v[size_t(i)];
}

double functional_value(FunctionalKind kind, const Eigen::VectorXd& xf) {
  return kind == FunctionalKind::SuperheatDeviation ? xf[7] : -xf[8];
}

/// Partial derivative of the augmented rates with respect to one control,
/// by a central difference that falls back to a one-sided difference when
/// the control sits at the edge of its physical domain (fully open bypass).
Eigen::VectorXd rates_control_partial(const SystemParams& p,
                                      const Vec7& scales,
                                      const Eigen::VectorXd& xs,
                                      const Eigen::Vector3d& u,
                                      const Eigen::Vector2d& d, double ref,
                                      int j) {
  const double dj = 1e-7 * std::max(std::abs(u[j]), 1e-2);
  Eigen::Vector3d up = u, um = u;
  up[j] += dj;
  um[j] -= dj;
  bool ok_p = true, ok_m = true;
  Eigen::VectorXd fp, fm;
  try {
    fp = augmented_rates(p, scales, xs, up, d, ref);
  } catch (const ModelError&) {
    ok_p = false;
  }
  try {
    fm = augmented_rates(p, scales, xs, um, d, ref);
  } catch (const ModelError&) {
    ok_m = false;
  }
  if (ok_p && ok_m) {
    return (fp - fm) / (2.0 * dj);
  }
  const Eigen::VectorXd f0 = augmented_rates(p, scales, xs, u, d, ref);
  if (ok_p) {
    return (fp - f0) / dj;
  }
  if (ok_m) {
    return (f0 - fm) / dj;
  }
  throw ModelError(
      "control partials: no valid perturbation around the control point");
}

}  // namespace

GradientResult trajectory_gradient(const SystemParams& params_in,
                                   FunctionalKind functional,
                                   const ControlSchedule& controls,
                                   const Vec7& x0, const Disturbance& d,
                                   double t0, double tf,
                                   const GradientOptions& options) {
  if (!(tf >= t0)) {
    throw ConfigError("trajectory gradient: the horizon must not be reversed");
  }
  controls.validate();
  SystemParams params = params_in;
  finalize(params);
  const Vec7 scales = internal_state_scales(params.geometry);
  const NodeLayout layout = node_layout(controls);
  const double ref = options.dT_sup_ref;

  GradientResult res;
  res.gradient = Eigen::VectorXd::Zero(layout.total);
  if (!(tf > t0)) {
    return res;  // nothing accumulates over a zero-length horizon
  }

  // Knot times are shared by all perturbed runs, so one stop list keeps
  // every run on the same mesh.
  std::vector<double> mandatory = controls.breakpoints();
  mandatory.insert(mandatory.end(), d.breakpoints.begin(),
                   d.breakpoints.end());

  Eigen::VectorXd xs0(9);
  xs0.head<7>() = x0.cwiseQuotient(scales);
  xs0[7] = 0.0;
  xs0[8] = 0.0;

  const auto shoot_value = [&](const ControlSchedule& cs) -> double {
    OdeSystem sys;
    sys.dim = 9;
    sys.f = [&params, &scales, cs, &d, ref](double t,
                                            const Eigen::VectorXd& xs) {
      return augmented_rates(params, scales, xs, cs.eval(t), d.eval(t), ref);
    };
    const Trajectory traj =
        integrate_ode(sys, t0, tf, xs0, options.integrator, mandatory);
    return functional_value(functional, traj.nodes.back().x);
  };

  if (options.method == GradientMethod::FiniteDifference) {
    res.value = shoot_value(controls);
    std::vector<char> failed(size_t(layout.total), 0);
    const auto column = [&](int k) {
      const double mag =
          std::max(std::abs(node_value(controls, layout, k)), 1e-3);
      double delta = options.fd_rel * mag;
      for (int attempt = 0; attempt <= options.max_step_shrink; ++attempt) {
        try {
          const double v_p =
              shoot_value(perturb_node(controls, layout, k, delta));
          const double v_m =
              shoot_value(perturb_node(controls, layout, k, -delta));
          res.gradient[k] = (v_p - v_m) / (2.0 * delta);
          return;
        } catch (const ModelError&) {
        } catch (const NumericsError&) {
        }
        delta *= 0.5;
      }
      failed[size_t(k)] = 1;
    };
    parallel_for(layout.total, options.threads, column);
    for (int k = 0; k < layout.total; ++k) {
      if (failed[size_t(k)]) {
        throw NumericsError(
            "trajectory gradient: perturbed trajectory failed to integrate "
            "at parameter index " +
            std::to_string(k));
      }
    }
    return res;
  }

  // Forward sensitivities: one integration carrying d(state)/d(nodes). The
  // chain from node values to the instantaneous controls is the pair of
  // hat weights supporting each control at the evaluation time.
  OdeSystem sys;
  sys.dim = 9;
  sys.f = [&params, &scales, cs = controls, &d, ref](
              double t, const Eigen::VectorXd& xs) {
    return augmented_rates(params, scales, xs, cs.eval(t), d.eval(t), ref);
  };
  sys.np = layout.total;
  sys.df_dtheta = [&params, &scales, cs = controls, &d, ref, layout](
                      double t, const Eigen::VectorXd& xs) {
    const Eigen::Vector3d u = cs.eval(t);
    const Eigen::Vector2d dd = d.eval(t);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(9, layout.total);
    const auto ctl = schedule_parts(cs);
    for (int j = 0; j < 3; ++j) {
      const Eigen::VectorXd col =
          rates_control_partial(params, scales, xs, u, dd, ref, j);
      const PiecewiseLinear::Support sup = ctl[size_t(j)]->support(t);
      const int base = layout.offset[size_t(j)];
      G.col(base + sup.i0) += sup.w0 * col;
      if (sup.i1 != sup.i0) {
        G.col(base + sup.i1) += sup.w1 * col;
      }
    }
    return G;
  };
  const Trajectory traj =
      integrate_ode(sys, t0, tf, xs0, options.integrator, mandatory);
  const TrajectoryNode& last = traj.nodes.back();
  res.value = functional_value(functional, last.x);
  const int row = functional == FunctionalKind::SuperheatDeviation ? 7 : 8;
  const double sign =
      functional == FunctionalKind::SuperheatDeviation ? 1.0 : -1.0;
  res.gradient = sign * last.S.row(row).transpose();
  return res;
}

}  // namespace orc
