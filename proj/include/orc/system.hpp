#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "orc/controls.hpp"
#include "orc/cycle.hpp"
#include "orc/evaporator.hpp"
#include "orc/fluid.hpp"
#include "orc/integrate.hpp"

namespace orc {

/// Normalisation constants turning physical quantities into the starred
/// (dimensionless) values used for controls, disturbances, objectives and
/// reporting.
struct ScalingConfig {
  double p_scale = 2.0e6;     ///< pressure [Pa]
  double T_scale = 500.0;     ///< temperature [K]
  double mdot_scale = 1.0;    ///< mass flow [kg/s]
  double n_scale = 1000.0;    ///< rotational speed [1/s]
  double P_scale = 2.0e4;     ///< power [W]
};

inline void finalize(ScalingConfig& s) {
  if (!(s.p_scale > 0 && s.T_scale > 0 && s.mdot_scale > 0 &&
        s.n_scale > 0 && s.P_scale > 0)) {
    throw ConfigError("scaling: all scale factors must be positive");
  }
}

/// Exogenous exhaust-side boundary condition as a function of time, in
/// starred units: (mdot_exh_star, T_exh_in_star). Breakpoints mark slope
/// discontinuities the integrator must step onto exactly.
struct Disturbance {
  std::function<Eigen::Vector2d(double)> eval;
  std::vector<double> breakpoints;

  static Disturbance constant(double mdot_exh_star, double T_exh_star) {
    Disturbance d;
    const Eigen::Vector2d value(mdot_exh_star, T_exh_star);
    d.eval = [value](double) { return value; };
    return d;
  }

  static Disturbance piecewise_linear(PiecewiseLinear mdot_star,
                                      PiecewiseLinear T_star) {
    mdot_star.validate("disturbance.mdot_exh_star");
    T_star.validate("disturbance.T_exh_in_star");
    Disturbance d;
    std::vector<double> b;
    b.insert(b.end(), mdot_star.t.begin(), mdot_star.t.end());
    b.insert(b.end(), T_star.t.begin(), T_star.t.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    d.breakpoints = std::move(b);
    d.eval = [m = std::move(mdot_star), T = std::move(T_star)](double t) {
      return Eigen::Vector2d(m.eval(t), T.eval(t));
    };
    return d;
  }
};

/// Everything that defines the plant: fluid, exhaust gas, evaporator,
/// rotating equipment, condenser and the normalisation constants.
struct SystemParams {
  FluidParams fluid = default_fluid();
  ExhaustGasParams exhaust = default_exhaust_gas();
  EvapGeometry geometry;
  HeatTransferParams heat_transfer;
  FlowArrangement arrangement = FlowArrangement::Counter;
  PumpParams pump;
  TurbineParams turbine;
  CondenserParams condenser;
  ScalingConfig scaling;
};

void finalize(SystemParams& p);
SystemParams default_system();

/// Instantaneous plant readouts alongside the state derivative.
struct SystemOutputs {
  double P_turb = 0.0;       ///< turbine shaft power [W]
  double P_pump = 0.0;       ///< pump power drawn [W]
  double P_net = 0.0;        ///< P_turb - P_pump [W]
  double P_turb_star = 0.0;
  double P_pump_star = 0.0;
  double P_net_star = 0.0;
  double dT_superheat = 0.0;  ///< evaporator outlet superheat [K]
  double T_wf_out = 0.0;      ///< evaporator outlet temperature [K]
  double T_wf_out_star = 0.0;
  double p_star = 0.0;        ///< evaporation pressure, starred
  double mdot_wf_in = 0.0;    ///< feed flow [kg/s]
  double mdot_wf_out = 0.0;   ///< turbine admission flow [kg/s]
  double mdot_exh_evap = 0.0; ///< exhaust flow after the bypass [kg/s]
  double x_bpv = 0.0;
  double n_star = 0.0;
  double T_exh_in = 0.0;      ///< exhaust temperature entering [K]
  double T_exh_out = 0.0;     ///< exhaust temperature leaving [K]
  double Q_exh_total = 0.0;   ///< exhaust heat picked up by the walls [W]
  double Q_amb_total = 0.0;   ///< wall heat lost to ambient [W]
  double eta_is = 0.0;
  double eta_mech = 0.0;
  double torque_star = 0.0;
  double h_feed = 0.0;        ///< feed enthalpy delivered by the pump [J/kg]
  std::array<double, 3> zone_len = {0, 0, 0};
};

struct SystemEval {
  Vec7 xdot = Vec7::Zero();
  SystemOutputs out;
};

/// Closed-loop plant derivative: controls u_star = (mdot_wf_star, n_star,
/// x_bpv), disturbance d_star = (mdot_exh_star, T_exh_in_star).
SystemEval evaluate_system(const SystemParams& p, const Vec7& x,
                           const Eigen::Vector3d& u_star,
                           const Eigen::Vector2d& d_star);

/// Fixed internal magnitudes used to non-dimensionalise the state for
/// integration and root finding, independent of the reporting scales.
Vec7 internal_state_scales(const EvapGeometry& geom);

/// Right-hand side of the quadrature-augmented closed-loop system used by
/// shooting-based optimisation and trajectory gradients: the seven plant
/// states in scaled coordinates (raw state divided componentwise by
/// `scales`) followed by two running integrals, the squared superheat
/// deviation from `dT_sup_ref` and the starred net power. The scaled
/// coordinates keep all state entries within a few orders of one another;
/// numerical Jacobians and the open-loop sensitivity recursion both need
/// that, whereas the state integration alone would tolerate raw units.
Eigen::VectorXd augmented_rates(const SystemParams& p, const Vec7& scales,
                                const Eigen::VectorXd& xs,
                                const Eigen::Vector3d& u_star,
                                const Eigen::Vector2d& d_star,
                                double dT_sup_ref);

/// The plant together with the exogenous signals that close the loop.
struct ClosedLoop {
  SystemParams params;
  ControlSchedule controls;
  Disturbance disturbance;
};

/// Plant readouts at one instant of a closed-loop trajectory. Accepts
/// augmented state vectors and uses the leading plant states.
SystemOutputs outputs_at(const ClosedLoop& cl, double t,
                         const Eigen::VectorXd& x);

/// Times inside (t0, tf) where the closed-loop right-hand side has a slope
/// discontinuity (control knots and disturbance breakpoints), sorted.
std::vector<double> slope_breaks(const ClosedLoop& cl, double t0, double tf);

/// Trajectory aggregates whose gradients with respect to the control node
/// values can be computed.
enum class FunctionalKind {
  SuperheatDeviation,  ///< integral of squared superheat deviation [K^2 s]
  NetWork,             ///< negative integral of starred net power
};

enum class GradientMethod {
  FiniteDifference,    ///< central differences over perturbed trajectories
  ForwardSensitivity,  ///< one integration carrying state sensitivities
};

struct GradientOptions {
  GradientMethod method = GradientMethod::FiniteDifference;
  /// Superheat reference [K] for the deviation functional.
  double dT_sup_ref = 10.0;
  /// Integration settings shared by every run. Defaults to a fixed
  /// half-second mesh: the step pattern then depends only on the time
  /// grid, so perturbed runs differ only through the perturbation itself
  /// and difference quotients stay clean.
  IntegratorOptions integrator = fixed_mesh_integrator(0.5);
  /// Relative width of the central finite-difference steps.
  double fd_rel = 1e-6;
  /// Halvings of the difference step attempted when a perturbed run fails
  /// to integrate, before the failure is reported.
  int max_step_shrink = 4;
  /// Worker threads for perturbed runs; 0 uses the hardware concurrency.
  /// The result is identical for any thread count.
  int threads = 0;
};

/// Value and gradient of one trajectory functional with respect to the
/// control node values, ordered (feed-flow nodes, speed nodes, bypass
/// nodes), each block in its schedule's own knot order.
struct GradientResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Differentiates the functional of the closed-loop trajectory started at
/// `x0` (raw plant units) under the given controls and disturbance over
/// [t0, tf]. A zero-length horizon yields value zero and a zero gradient.
/// A perturbed run that fails to integrate even after shrinking the
/// difference step raises NumericsError naming the parameter index.
GradientResult trajectory_gradient(const SystemParams& params,
                                   FunctionalKind functional,
                                   const ControlSchedule& controls,
                                   const Vec7& x0, const Disturbance& d,
                                   double t0, double tf,
                                   const GradientOptions& options = {});

}  // namespace orc
