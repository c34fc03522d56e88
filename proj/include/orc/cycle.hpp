#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "orc/errors.hpp"
#include "orc/fluid.hpp"

namespace orc {

struct PumpParams {
  double eta_is = 0.9;    ///< isentropic efficiency
  double eta_mech = 0.9;  ///< mechanical/electrical efficiency
};

inline void finalize(PumpParams& p) {
  if (!(p.eta_is > 0 && p.eta_is <= 1) || !(p.eta_mech > 0 && p.eta_mech <= 1)) {
    throw ConfigError("pump: efficiencies must lie in (0, 1]");
  }
}

struct PumpResult {
  double h_out = 0.0;  ///< delivered enthalpy [J/kg]
  double dh_is = 0.0;  ///< isentropic enthalpy rise [J/kg]
  double power = 0.0;  ///< shaft power drawn [W]
};

/// Feed pump raising subcooled liquid from p_in to p_out. The isentropic
/// rise is the liquid pressure work integral; losses heat the fluid.
inline PumpResult pump_state(const FluidParams& f, const PumpParams& pp,
                             double p_in, double h_in, double p_out,
                             double mdot) {
  detail::require_pressure_in_window(f, p_in, "pump suction");
  detail::require_pressure_in_window(f, p_out, "pump discharge");
  if (!(p_out >= p_in)) {
    throw ModelError("pump: discharge pressure below suction pressure");
  }
  if (!(mdot >= 0)) {
    throw ModelError("pump: negative mass flow");
  }
  PumpResult r;
  r.dh_is = detail::pressure_work(f, p_out) - detail::pressure_work(f, p_in);
  r.h_out = h_in + r.dh_is / pp.eta_is;
  r.power = mdot * r.dh_is / (pp.eta_is * pp.eta_mech);
  return r;
}

/// Turbine efficiency maps as bivariate polynomials on normalised
/// coordinates: eta_is over (pressure ratio / pi_scale, speed ratio) and
/// eta_mech over (speed ratio, torque ratio).
struct TurbineMap {
  Eigen::Matrix<double, 4, 6> c_is = Eigen::Matrix<double, 4, 6>::Zero();
  Eigen::Matrix<double, 3, 6> c_mech = Eigen::Matrix<double, 3, 6>::Zero();
  double pi_scale = 20.0;
};

namespace detail {

/// Rewrites sum_k a[k] (x - c)^k into coefficients over plain powers of x.
template <int N>
Eigen::Matrix<double, N, 1> shift_polynomial(
    const Eigen::Matrix<double, N, 1>& a, double c) {
  Eigen::Matrix<double, N, 1> b = Eigen::Matrix<double, N, 1>::Zero();
  double binom[N][N] = {};
  for (int k = 0; k < N; ++k) {
    binom[k][0] = 1.0;
    for (int j = 1; j <= k; ++j) {
      binom[k][j] = binom[k - 1][j - 1] + (j < k ? binom[k - 1][j] : 0.0);
    }
  }
  for (int k = 0; k < N; ++k) {
    double cpow = 1.0;  // (-c)^(k-j), built from j = k downward
    for (int j = k; j >= 0; --j) {
      b[j] += a[k] * binom[k][j] * cpow;
      cpow *= -c;
    }
  }
  return b;
}

template <int R, int C>
double eval_bivariate(const Eigen::Matrix<double, R, C>& coef, double x,
                      double y) {
  double value = 0.0;
  for (int i = R - 1; i >= 0; --i) {
    double row = 0.0;
    for (int j = C - 1; j >= 0; --j) {
      row = row * y + coef(i, j);
    }
    value = value * x + row;
  }
  return value;
}

}  // namespace detail

/// Default efficiency maps: a cubic pressure-ratio hill times a quintic
/// speed hill peaking at a speed ratio of 0.95 for the aerodynamic
/// efficiency, and a speed/torque product form for the mechanical one.
inline TurbineMap default_turbine_map() {
  TurbineMap m;
  Eigen::Matrix<double, 4, 1> f_pi;
  f_pi << 0.7290625, 0.27625, 0.475, -0.5;
  Eigen::Matrix<double, 6, 1> g_delta;
  g_delta << 1.0, 0.0, -3.2, 1.5, -8.0, 3.0;
  const Eigen::Matrix<double, 6, 1> g_n =
      detail::shift_polynomial<6>(g_delta, 0.95);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) {
      m.c_is(i, j) = 0.78 * f_pi[i] * g_n[j];
    }
  }
  Eigen::Matrix<double, 3, 1> mech_speed_delta;
  mech_speed_delta << 0.95, 0.0, -0.2375;
  const Eigen::Matrix<double, 3, 1> mech_n =
      detail::shift_polynomial<3>(mech_speed_delta, 0.95);
  Eigen::Matrix<double, 6, 1> mech_torque_delta;
  mech_torque_delta << 1.0, 0.0, -0.12, 0.0, 0.0, 0.02;
  const Eigen::Matrix<double, 6, 1> mech_m =
      detail::shift_polynomial<6>(mech_torque_delta, 0.6);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 6; ++j) {
      m.c_mech(i, j) = mech_n[i] * mech_m[j];
    }
  }
  return m;
}

inline double eval_eta_is(const TurbineMap& m, double pressure_ratio,
                          double n_star) {
  const double eta =
      detail::eval_bivariate(m.c_is, pressure_ratio / m.pi_scale, n_star);
  if (!(eta > 0.01) || !(eta < 0.995)) {
    throw ModelError("turbine: aerodynamic efficiency map evaluated outside "
                     "its fitted envelope");
  }
  return eta;
}

inline double eval_eta_mech(const TurbineMap& m, double n_star,
                            double torque_star) {
  const double eta = detail::eval_bivariate(m.c_mech, n_star, torque_star);
  if (!(eta > 0.01) || !(eta < 0.995)) {
    throw ModelError("turbine: mechanical efficiency map evaluated outside "
                     "its fitted envelope");
  }
  return eta;
}

struct TurbineParams {
  double C_t = 3.0e-7;      ///< admission constant [kg K^0.5 / (s Pa)]
  double n_scale = 1000.0;  ///< speed normalisation [1/s]
  double M_ref = 2.0e4 / (2.0 * M_PI * 1000.0);  ///< torque norm [N m]
  TurbineMap map = default_turbine_map();
};

inline void finalize(TurbineParams& t) {
  if (!(t.C_t > 0) || !(t.n_scale > 0) || !(t.M_ref > 0) ||
      !(t.map.pi_scale > 0)) {
    throw ConfigError("turbine: C_t, n_scale, M_ref and pi_scale must be "
                      "positive");
  }
}

/// Admission law: choked-like algebraic flow through the turbine nozzle ring.
/// Returns zero when the pressure ratio reverses.
inline double turbine_admission(const TurbineParams& t, double p_in,
                                double T_in, double p_out) {
  if (!(T_in > 0) || !(p_in > 0) || !(p_out > 0)) {
    throw ModelError("turbine admission: non-positive pressure or "
                     "temperature");
  }
  if (p_out >= p_in) {
    return 0.0;
  }
  const double r = p_out / p_in;
  return t.C_t * p_in * std::sqrt(1.0 - r * r) / std::sqrt(T_in);
}

struct TurbineResult {
  double P_aero = 0.0;     ///< power taken from the fluid [W]
  double P_shaft = 0.0;    ///< power delivered at the coupling [W]
  double torque = 0.0;     ///< aerodynamic torque [N m]
  double torque_star = 0.0;
  double eta_is = 0.0;
  double eta_mech = 0.0;
  double dh_is = 0.0;      ///< isentropic enthalpy drop [J/kg]
  double h_out = 0.0;      ///< fluid enthalpy at the diffuser exit [J/kg]
};

/// Expansion through the turbine at speed ratio n_star. The fluid leaves
/// with the aerodynamic work extracted; bearing and gear losses then reduce
/// the shaft power without re-entering the fluid path.
inline TurbineResult turbine_power(const FluidParams& f,
                                   const TurbineParams& t, double mdot,
                                   double p_in, double h_in, double p_out,
                                   double n_star) {
  if (!(mdot >= 0)) {
    throw ModelError("turbine: negative mass flow");
  }
  if (!(n_star > 0)) {
    throw ModelError("turbine: speed ratio must be positive");
  }
  if (!(p_out < p_in)) {
    throw ModelError("turbine: expansion requires p_out < p_in");
  }
  const FluidState inlet = state_from_ph(f, p_in, h_in);
  if (inlet.region != Region::Vapor) {
    throw ModelError("turbine: inlet must be superheated vapor");
  }
  TurbineResult r;
  const double h_out_is = h_from_ps(f, p_out, inlet.s);
  r.dh_is = h_in - h_out_is;
  if (!(r.dh_is > 0)) {
    throw ModelError("turbine: non-positive isentropic enthalpy drop");
  }
  r.eta_is = eval_eta_is(t.map, p_in / p_out, n_star);
  r.P_aero = mdot * r.eta_is * r.dh_is;
  const double omega = 2.0 * M_PI * n_star * t.n_scale;
  r.torque = r.P_aero / omega;
  r.torque_star = r.torque / t.M_ref;
  r.eta_mech = eval_eta_mech(t.map, n_star, r.torque_star);
  r.P_shaft = r.eta_mech * r.P_aero;
  r.h_out = h_in - r.eta_is * r.dh_is;
  return r;
}

struct CondenserParams {
  double p_cond = 101325.0;  ///< condensation pressure [Pa]
  double dT_subcool = 5.0;   ///< outlet subcooling [K]
};

inline void finalize(const FluidParams& f, CondenserParams& c) {
  detail::require_pressure_in_window(f, c.p_cond, "condenser");
  if (!(c.dT_subcool >= 0)) {
    throw ConfigError("condenser: subcooling must be non-negative");
  }
}

struct CondenserResult {
  double h_out = 0.0;
  double T_out = 0.0;
  double Q_dot = 0.0;  ///< heat rejected [W]
};

/// Full condensation to subcooled liquid at the fixed condenser pressure.
inline CondenserResult condenser_outlet(const FluidParams& f,
                                        const CondenserParams& c, double mdot,
                                        double h_in) {
  if (!(mdot >= 0)) {
    throw ModelError("condenser: negative mass flow");
  }
  const SaturationState sat = saturation(f, c.p_cond);
  CondenserResult r;
  r.T_out = sat.T_sat - c.dT_subcool;
  r.h_out = sat.h_liq - f.cp_liquid * c.dT_subcool;
  r.Q_dot = mdot * (h_in - r.h_out);
  if (r.Q_dot < 0) {
    throw ModelError("condenser: inlet enthalpy below the outlet state");
  }
  return r;
}

struct BypassSplit {
  double mdot_evap = 0.0;
  double mdot_bypass = 0.0;
};

/// Exhaust bypass valve: the fraction x_bpv of the raw exhaust stream is
/// admitted to the evaporator, the rest is vented around it.
inline BypassSplit bypass_split(double mdot_exh_total, double x_bpv) {
  if (!(mdot_exh_total >= 0)) {
    throw ModelError("bypass: negative exhaust flow");
  }
  if (!(x_bpv >= 0.0 && x_bpv <= 1.0)) {
    throw ModelError("bypass: valve position must lie in [0, 1]");
  }
  return BypassSplit{x_bpv * mdot_exh_total, (1.0 - x_bpv) * mdot_exh_total};
}

}  // namespace orc
