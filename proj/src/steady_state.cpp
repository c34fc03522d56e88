#include "orc/steady_state.hpp"

#include <algorithm>
#include <cmath>

#include "orc/integrate.hpp"

namespace orc {

namespace {

/// Scaled steady-state residual: state rates divided by the internal state
/// scales, i.e. fractional rates per second.
Eigen::VectorXd scaled_rates(const SystemParams& p, const Vec7& scales,
                             const Eigen::VectorXd& y,
                             const Eigen::Vector3d& u_star,
                             const Eigen::Vector2d& d_star) {
  const Vec7 x = y.cwiseProduct(scales);
  const SystemEval ev = evaluate_system(p, x, u_star, d_star);
  return ev.xdot.cwiseQuotient(scales);
}

}  // namespace

Eigen::VectorXd initial_state_guess(const SystemParams& p,
                                    const Eigen::Vector3d& u_star,
                                    const Eigen::Vector2d& d_star) {
  const ScalingConfig& sc = p.scaling;
  const EvapGeometry& g = p.geometry;
  const HeatTransferParams& ht = p.heat_transfer;
  const double mdot_wf = u_star[0] * sc.mdot_scale;
  const double x_bpv = u_star[2];
  const double mdot_exh =
      std::max(d_star[0] * sc.mdot_scale * x_bpv, 1e-6);
  const double T_exh_in = d_star[1] * sc.T_scale;
  const double mcp = mdot_exh * exhaust_cp(p.exhaust, T_exh_in);

  // Pressure at which the turbine passes the feed flow for a given outlet
  // superheat. The admission grows monotonically with pressure, so
  // bisection on the mismatch is safe.
  const double p_cond = p.condenser.p_cond;
  auto pressure_for_flow = [&](double superheat) {
    auto mismatch = [&](double pr) {
      const double T_in = saturation(p.fluid, pr).T_sat + superheat;
      return turbine_admission(p.turbine, pr, T_in, p_cond) - mdot_wf;
    };
    double lo = std::max(2.0 * p_cond, p.fluid.p_valid_min * 1.5);
    double hi = p.fluid.p_valid_max * 0.97;
    if (mismatch(lo) >= 0.0) return lo;
    if (mismatch(hi) <= 0.0) return hi;
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      (mismatch(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };

  // First pass with a nominal superheat, then limit the superheat by the
  // heat the exhaust can actually deliver and re-match the pressure.
  double superheat = 10.0;
  double pres = pressure_for_flow(superheat);
  SaturationState sat = saturation(p.fluid, pres);
  const CondenserResult cond = condenser_outlet(
      p.fluid, p.condenser, mdot_wf,
      saturation(p.fluid, p_cond).h_vap + p.fluid.cp_vapor * 5.0);
  PumpResult pump =
      pump_state(p.fluid, p.pump, p_cond, cond.h_out, pres, mdot_wf);
  {
    const double ntu = ht.alpha_exh * g.width_exh * g.length / mcp;
    const double q_avail =
        (1.0 - std::exp(-ntu)) * mcp * (T_exh_in - sat.T_sat);
    const double q_latent = mdot_wf * (sat.h_vap - pump.h_out);
    superheat = (q_avail - q_latent) / (mdot_wf * p.fluid.cp_vapor);
    superheat = std::min(std::max(superheat, 1.0), 40.0);
    pres = pressure_for_flow(superheat);
    sat = saturation(p.fluid, pres);
    pump = pump_state(p.fluid, p.pump, p_cond, cond.h_out, pres, mdot_wf);
  }
  const double h_out = sat.h_vap + p.fluid.cp_vapor * superheat;

  // Zone duties and the exhaust temperature seen by each zone, following
  // the exhaust path through the zones for the chosen arrangement.
  const double q_zone[3] = {mdot_wf * std::max(sat.h_liq - pump.h_out, 1.0),
                            mdot_wf * sat.dh_evap,
                            mdot_wf * p.fluid.cp_vapor * superheat};
  double T_exh_local[3];
  {
    double T_run = T_exh_in;
    if (p.arrangement == FlowArrangement::Counter) {
      for (int i = 2; i >= 0; --i) {
        T_exh_local[i] = T_run;
        T_run -= q_zone[i] / mcp;
      }
    } else {
      for (int i = 0; i < 3; ++i) {
        T_exh_local[i] = T_run;
        T_run -= q_zone[i] / mcp;
      }
    }
  }

  // Feed temperature for the preheat-zone average.
  const double T_feed =
      p.fluid.T_datum +
      (pump.h_out - detail::pressure_work(p.fluid, pres)) / p.fluid.cp_liquid;
  const double T_zone[3] = {0.5 * (T_feed + sat.T_sat), sat.T_sat,
                            sat.T_sat + 0.5 * superheat};

  // Zone lengths from the duty each zone must transfer through the local
  // series conductance at the local temperature difference.
  const double alpha_wf[3] = {ht.alpha_wf_liq, ht.alpha_wf_two_phase,
                              ht.alpha_wf_vap};
  double len[3];
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double ua_per_m = 1.0 / (1.0 / (alpha_wf[i] * g.width_wf) +
                                   1.0 / (ht.alpha_exh * g.width_exh));
    const double dT = std::max(T_exh_local[i] - T_zone[i], 5.0);
    len[i] = q_zone[i] / (ua_per_m * dT);
    total += len[i];
  }
  const double lmin = 4.0 * g.min_zone_frac * g.length;
  for (int i = 0; i < 3; ++i) {
    len[i] = std::max(len[i] / total * g.length, lmin);
  }
  const double rescale = g.length / (len[0] + len[1] + len[2]);
  for (int i = 0; i < 3; ++i) len[i] *= rescale;

  // Walls from the local balance between the two films.
  EvapState st;
  for (int i = 0; i < 3; ++i) {
    const double a_wf = alpha_wf[i] * g.width_wf;
    const double a_ex = ht.alpha_exh * g.width_exh;
    st.T_w[i] = (a_wf * T_zone[i] + a_ex * T_exh_local[i]) / (a_wf + a_ex);
  }
  st.z1 = len[0];
  st.z2 = len[0] + len[1];
  st.p = pres;
  st.h_out = h_out;
  return st.to_vector();
}

namespace {

struct NewtonOutcome {
  bool converged = false;
  Eigen::VectorXd y;
  double residual = 0.0;
  int iterations = 0;
};

NewtonOutcome newton_on_rates(const SystemParams& p, const Vec7& scales,
                              const Eigen::Vector3d& u_star,
                              const Eigen::Vector2d& d_star,
                              const Eigen::VectorXd& y_start) {
  auto residual = [&](const Eigen::VectorXd& yv) {
    return scaled_rates(p, scales, yv, u_star, d_star);
  };
  const double tol = 1e-11;
  NewtonOutcome out;
  out.y = y_start;

  Eigen::VectorXd r;
  try {
    r = residual(out.y);
  } catch (const ModelError&) {
    return out;
  }

  for (int it = 0; it < 60; ++it) {
    const double rn = r.lpNorm<Eigen::Infinity>();
    if (rn <= tol) {
      out.converged = true;
      out.residual = rn;
      out.iterations = it;
      return out;
    }

    // Forward-difference Jacobian of the scaled residual.
    Eigen::MatrixXd J(7, 7);
    const double de = std::sqrt(std::numeric_limits<double>::epsilon());
    for (int j = 0; j < 7; ++j) {
      const double delta = de * std::max(std::abs(out.y[j]), 1e-3);
      Eigen::VectorXd yp = out.y;
      yp[j] += delta;
      try {
        J.col(j) = (residual(yp) - r) / delta;
      } catch (const ModelError&) {
        yp[j] = out.y[j] - delta;
        try {
          J.col(j) = (r - residual(yp)) / delta;
        } catch (const ModelError&) {
          return out;
        }
      }
    }

    const Eigen::VectorXd step = J.partialPivLu().solve(-r);
    if (!step.allFinite()) return out;

    // Backtracking line search on the residual norm.
    double lambda = 1.0;
    bool improved = false;
    for (int k = 0; k < 8; ++k, lambda *= 0.5) {
      const Eigen::VectorXd y_trial = out.y + lambda * step;
      try {
        const Eigen::VectorXd r_trial = residual(y_trial);
        if (r_trial.lpNorm<Eigen::Infinity>() < rn) {
          out.y = y_trial;
          r = r_trial;
          improved = true;
          break;
        }
      } catch (const ModelError&) {
        // trial left the model's validity region; shrink
      }
    }
    if (!improved) return out;
  }
  return out;
}

/// Newton, then (on failure) a short transient relaxation toward the
/// attractor followed by another Newton.
NewtonOutcome newton_with_relaxation(const SystemParams& p,
                                     const Vec7& scales,
                                     const Eigen::Vector3d& u_star,
                                     const Eigen::Vector2d& d_star,
                                     const Eigen::VectorXd& y_start) {
  NewtonOutcome out = newton_on_rates(p, scales, u_star, d_star, y_start);
  if (out.converged) return out;

  OdeSystem sys;
  sys.dim = 7;
  sys.f = [&](double, const Eigen::VectorXd& xv) {
    return evaluate_system(p, Vec7(xv), u_star, d_star).xdot;
  };
  IntegratorOptions opt;
  opt.rtol = 1e-6;
  opt.atol = 1e-8;
  for (double horizon : {400.0, 4000.0}) {
    try {
      const Trajectory traj = integrate_ode(
          sys, 0.0, horizon, out.y.cwiseProduct(scales), opt);
      const NewtonOutcome retry = newton_on_rates(
          p, scales, u_star, d_star,
          traj.nodes.back().x.cwiseQuotient(scales));
      if (retry.converged) return retry;
    } catch (const Error&) {
      // relaxation left the validity region; try the longer horizon or
      // report failure
    }
  }
  return out;
}

}  // namespace

SteadyStateResult solve_steady_state(const SystemParams& p,
                                     const Eigen::Vector3d& u_star,
                                     const Eigen::Vector2d& d_star,
                                     const Eigen::VectorXd* x_guess) {
  const Vec7 scales = internal_state_scales(p.geometry);

  auto finish = [&](const NewtonOutcome& n) {
    SteadyStateResult result;
    result.x = n.y.cwiseProduct(scales);
    result.out = evaluate_system(p, result.x, u_star, d_star).out;
    result.iterations = n.iterations;
    result.residual = n.residual;
    return result;
  };

  // Direct attempt from the caller's guess or the constructed one.
  {
    const Eigen::VectorXd y0 =
        (x_guess ? Eigen::VectorXd(*x_guess)
                 : initial_state_guess(p, u_star, d_star))
            .cwiseQuotient(scales);
    const NewtonOutcome n =
        newton_with_relaxation(p, scales, u_star, d_star, y0);
    if (n.converged) return finish(n);
  }

  // Continuation in the feed flow: near the superheat-collapse boundary the
  // constructed guess degrades, but states at reduced flow are easy to find
  // and track the manifold back up.
  for (double factor : {0.85, 0.7, 0.55, 0.4}) {
    Eigen::Vector3d u_easy = u_star;
    u_easy[0] = u_star[0] * factor;
    const Eigen::VectorXd y_easy =
        initial_state_guess(p, u_easy, d_star).cwiseQuotient(scales);
    NewtonOutcome n =
        newton_with_relaxation(p, scales, u_easy, d_star, y_easy);
    if (!n.converged) continue;

    // Walk the flow back up, warm-starting each solve; shrink the step on
    // failure, give up when the step underflows (mode boundary).
    double m_cur = u_easy[0];
    const double m_target = u_star[0];
    double dm = (m_target - m_cur) / 8.0;
    int budget = 60;
    while (budget-- > 0) {
      const double m_next = std::min(m_cur + dm, m_target);
      Eigen::Vector3d u_next = u_star;
      u_next[0] = m_next;
      const NewtonOutcome trial =
          newton_on_rates(p, scales, u_next, d_star, n.y);
      if (trial.converged) {
        n = trial;
        m_cur = m_next;
        if (m_cur >= m_target) return finish(n);
        dm = std::min(dm * 1.6, m_target - m_cur);
      } else {
        dm *= 0.5;
        if (dm < 1e-4 * m_target) break;
      }
    }
    break;  // the manifold ends below the requested flow
  }

  throw NumericsError("steady state: no fixed point found for the requested "
                      "operating point");
}

}  // namespace orc
