#pragma once

#include <array>
#include <cmath>
#include <string>

#include "orc/errors.hpp"

namespace orc {

/// Simplified working-fluid property model built from four closed-form pieces:
/// an incompressible-with-slope liquid with constant cp, an Antoine-type
/// saturation curve, an ideal-gas vapor with constant cp measured from the dew
/// line, and a latent heat that follows the Clausius-Clapeyron shape evaluated
/// on the Antoine curve, anchored at a reference pressure. Enthalpy and entropy
/// are zero at the saturated-liquid state at `p_ref`. Every property and every
/// reported partial derivative is analytic.
struct FluidParams {
  double R_vapor = 180.48;         ///< vapor specific gas constant [J/(kg K)]
  double cp_liquid = 2700.0;       ///< liquid isobaric heat capacity [J/(kg K)]
  double cp_vapor = 1700.0;        ///< vapor isobaric heat capacity [J/(kg K)]
  double rho_liquid_ref = 750.0;   ///< liquid density at p_ref [kg/m^3]
  double drho_liquid_dp = 8.0e-7;  ///< liquid density slope vs p [kg/(m^3 Pa)]
  double antoine_a = 23.7810;      ///< ln(p_sat[Pa]) = a - b/(T[K] + c)
  double antoine_b = 3782.89;      ///< [K]
  double antoine_c = -42.85;       ///< [K]
  double dh_vap_ref = 8.5e5;       ///< latent-heat anchor at p_ref [J/kg]
  double p_ref = 101325.0;         ///< enthalpy/entropy datum pressure [Pa]
  double p_valid_min = 0.5e5;      ///< hard validity window [Pa]
  double p_valid_max = 4.0e6;

  // Derived constants, filled by finalize().
  double T_datum = 0.0;    ///< T_sat(p_ref) [K]
  double cc_lambda = 0.0;  ///< dh_vap_ref / (Clausius-Clapeyron shape at p_ref)
};

/// Saturation-line values and their pressure derivatives at one pressure.
/// `liq` quantities sit on the bubble line, `vap` on the dew line.
struct SaturationState {
  double p = 0.0;
  double T_sat = 0.0;
  double dT_sat_dp = 0.0;
  double rho_liq = 0.0;
  double rho_vap = 0.0;
  double drho_liq_dp = 0.0;
  double drho_vap_dp = 0.0;
  double h_liq = 0.0;
  double h_vap = 0.0;
  double dh_liq_dp = 0.0;
  double dh_vap_dp = 0.0;
  double s_liq = 0.0;
  double s_vap = 0.0;
  double dh_evap = 0.0;     ///< h_vap - h_liq [J/kg]
  double ddh_evap_dp = 0.0;
};

enum class Region { Liquid, TwoPhase, Vapor };

/// Single-phase or two-phase state resolved from (p, h), including the two
/// partial derivatives of density the moving-boundary balances need.
struct FluidState {
  double p = 0.0;
  double h = 0.0;
  double T = 0.0;
  double rho = 0.0;
  double s = 0.0;
  double x = 0.0;  ///< vapor quality; 0 below the dome, 1 above it
  Region region = Region::Liquid;
  double drho_dp_h = 0.0;  ///< (d rho / d p) at constant h
  double drho_dh_p = 0.0;  ///< (d rho / d h) at constant p
};

namespace detail {

inline void require_pressure_in_window(const FluidParams& f, double p,
                                       const char* where) {
  if (!(p >= f.p_valid_min && p <= f.p_valid_max)) {
    throw ModelError(std::string(where) + ": pressure " + std::to_string(p) +
                     " Pa outside the validity window [" +
                     std::to_string(f.p_valid_min) + ", " +
                     std::to_string(f.p_valid_max) + "] Pa");
  }
}

/// Liquid density; the liquid is h-independent by construction.
inline double rho_liquid(const FluidParams& f, double p) {
  return f.rho_liquid_ref + f.drho_liquid_dp * (p - f.p_ref);
}

/// Pressure-work integral of the liquid specific volume from p_ref to p,
/// so that h_liquid(T, p) = cp_l (T - T_datum) + pressure_work(p) satisfies
/// (dh/dp)|_s = v exactly.
inline double pressure_work(const FluidParams& f, double p) {
  const double k = f.drho_liquid_dp;
  if (k > 1e-18) {
    return std::log(rho_liquid(f, p) / f.rho_liquid_ref) / k;
  }
  return (p - f.p_ref) / f.rho_liquid_ref;
}

/// Clausius-Clapeyron shape g(p) = T_sat (v'' - v') dp/dT_sat and dg/dp.
/// The latent heat is cc_lambda * g(p).
inline void cc_shape(const FluidParams& f, double p, double* g, double* dg_dp) {
  const double D = f.antoine_a - std::log(p);
  const double T = f.antoine_b / D - f.antoine_c;
  const double dT_dp = f.antoine_b / (D * D * p);
  const double q = p * D * D / f.antoine_b;  // dp/dT_sat
  const double dq_dp = D * (D - 2.0) / f.antoine_b;
  const double rl = rho_liquid(f, p);
  const double v_l = 1.0 / rl;
  const double dv_l = -f.drho_liquid_dp / (rl * rl);
  const double v_v = f.R_vapor * T / p;
  const double dv_v = f.R_vapor * (dT_dp * p - T) / (p * p);
  const double dv = v_v - v_l;
  *g = T * dv * q;
  *dg_dp = dT_dp * dv * q + T * (dv_v - dv_l) * q + T * dv * dq_dp;
}

}  // namespace detail

/// Computes the derived constants and checks internal consistency. Must be
/// called once on any hand-built FluidParams before use; the config loader
/// does it automatically.
inline void finalize(FluidParams& f) {
  auto fail = [](const std::string& msg) { throw ConfigError("fluid: " + msg); };
  if (f.R_vapor <= 0 || f.cp_liquid <= 0 || f.cp_vapor <= 0 ||
      f.rho_liquid_ref <= 0 || f.antoine_b <= 0 || f.dh_vap_ref <= 0) {
    fail("R_vapor, cp_liquid, cp_vapor, rho_liquid_ref, antoine_b and "
         "dh_vap_ref must all be positive");
  }
  if (f.drho_liquid_dp < 0) fail("drho_liquid_dp must be non-negative");
  if (!(f.p_valid_min > 0 && f.p_valid_min < f.p_valid_max)) {
    fail("validity window must satisfy 0 < p_valid_min < p_valid_max");
  }
  if (!(f.p_ref >= f.p_valid_min && f.p_ref <= f.p_valid_max)) {
    fail("p_ref must lie inside the validity window");
  }
  const double D_hi = f.antoine_a - std::log(f.p_valid_max);
  if (D_hi <= 0.5) fail("Antoine curve degenerates below p_valid_max");
  for (double p : {f.p_valid_min, f.p_ref, f.p_valid_max}) {
    const double D = f.antoine_a - std::log(p);
    const double T = f.antoine_b / D - f.antoine_c;
    if (!(T > 150.0 && T < 1000.0)) {
      fail("T_sat(" + std::to_string(p) + " Pa) = " + std::to_string(T) +
           " K is outside a physically plausible range");
    }
    if (p / (f.R_vapor * T) >= detail::rho_liquid(f, p)) {
      fail("saturated vapor density exceeds liquid density at " +
           std::to_string(p) + " Pa");
    }
  }
  f.T_datum = f.antoine_b / (f.antoine_a - std::log(f.p_ref)) - f.antoine_c;
  double g = 0.0, dg = 0.0;
  detail::cc_shape(f, f.p_ref, &g, &dg);
  f.cc_lambda = f.dh_vap_ref / g;
  if (!(f.cc_lambda > 0.95 && f.cc_lambda < 1.05)) {
    fail("latent-heat anchor deviates more than 5% from the "
         "Clausius-Clapeyron value " +
         std::to_string(g) + " J/kg implied by the saturation curve");
  }
}

inline FluidParams default_fluid() {
  FluidParams f;
  finalize(f);
  return f;
}

/// Saturation-line state at pressure p, with all pressure derivatives.
inline SaturationState saturation(const FluidParams& f, double p) {
  detail::require_pressure_in_window(f, p, "saturation");
  SaturationState s;
  s.p = p;
  const double D = f.antoine_a - std::log(p);
  s.T_sat = f.antoine_b / D - f.antoine_c;
  s.dT_sat_dp = f.antoine_b / (D * D * p);
  s.rho_liq = detail::rho_liquid(f, p);
  s.drho_liq_dp = f.drho_liquid_dp;
  s.rho_vap = p / (f.R_vapor * s.T_sat);
  s.drho_vap_dp = s.rho_vap * (1.0 / p - s.dT_sat_dp / s.T_sat);
  double g = 0.0, dg = 0.0;
  detail::cc_shape(f, p, &g, &dg);
  s.dh_evap = f.cc_lambda * g;
  s.ddh_evap_dp = f.cc_lambda * dg;
  s.h_liq = f.cp_liquid * (s.T_sat - f.T_datum) + detail::pressure_work(f, p);
  s.dh_liq_dp = f.cp_liquid * s.dT_sat_dp + 1.0 / s.rho_liq;
  s.h_vap = s.h_liq + s.dh_evap;
  s.dh_vap_dp = s.dh_liq_dp + s.ddh_evap_dp;
  s.s_liq = f.cp_liquid * std::log(s.T_sat / f.T_datum);
  s.s_vap = s.s_liq + s.dh_evap / s.T_sat;
  return s;
}

/// Resolves temperature, density, entropy, quality, region and the density
/// partials from pressure and enthalpy.
inline FluidState state_from_ph(const FluidParams& f, double p, double h) {
  const SaturationState sat = saturation(f, p);
  FluidState st;
  st.p = p;
  st.h = h;
  if (h < sat.h_liq) {
    st.region = Region::Liquid;
    st.x = 0.0;
    st.T = f.T_datum + (h - detail::pressure_work(f, p)) / f.cp_liquid;
    if (!(st.T > 150.0)) {
      throw ModelError("state_from_ph: liquid temperature " +
                       std::to_string(st.T) + " K below the model floor");
    }
    st.rho = sat.rho_liq;
    st.s = f.cp_liquid * std::log(st.T / f.T_datum);
    st.drho_dp_h = f.drho_liquid_dp;
    st.drho_dh_p = 0.0;
  } else if (h <= sat.h_vap) {
    st.region = Region::TwoPhase;
    st.x = (h - sat.h_liq) / sat.dh_evap;
    st.T = sat.T_sat;
    const double v_l = 1.0 / sat.rho_liq;
    const double v_v = 1.0 / sat.rho_vap;
    const double dv = v_v - v_l;
    const double v = v_l + st.x * dv;
    st.rho = 1.0 / v;
    st.s = sat.s_liq + st.x * (sat.s_vap - sat.s_liq);
    const double dvl_dp = -sat.drho_liq_dp / (sat.rho_liq * sat.rho_liq);
    const double dvv_dp = -sat.drho_vap_dp / (sat.rho_vap * sat.rho_vap);
    const double dx_dp =
        -((1.0 - st.x) * sat.dh_liq_dp + st.x * sat.dh_vap_dp) / sat.dh_evap;
    const double dv_dp = dvl_dp + st.x * (dvv_dp - dvl_dp) + dx_dp * dv;
    st.drho_dp_h = -st.rho * st.rho * dv_dp;
    st.drho_dh_p = -st.rho * st.rho * dv / sat.dh_evap;
  } else {
    st.region = Region::Vapor;
    st.x = 1.0;
    st.T = sat.T_sat + (h - sat.h_vap) / f.cp_vapor;
    st.rho = p / (f.R_vapor * st.T);
    st.s = sat.s_vap + f.cp_vapor * std::log(st.T / sat.T_sat);
    const double dT_dp = sat.dT_sat_dp - sat.dh_vap_dp / f.cp_vapor;
    st.drho_dp_h =
        1.0 / (f.R_vapor * st.T) - p / (f.R_vapor * st.T * st.T) * dT_dp;
    st.drho_dh_p = -p / (f.R_vapor * st.T * st.T * f.cp_vapor);
  }
  return st;
}

/// (d rho / d p) at constant h.
inline double drho_dp_const_h(const FluidParams& f, double p, double h) {
  return state_from_ph(f, p, h).drho_dp_h;
}

/// (d rho / d h) at constant p.
inline double drho_dh_const_p(const FluidParams& f, double p, double h) {
  return state_from_ph(f, p, h).drho_dh_p;
}

inline double s_from_ph(const FluidParams& f, double p, double h) {
  return state_from_ph(f, p, h).s;
}

/// Inverse of s_from_ph at fixed pressure; closed form in all three regions
/// because entropy is strictly increasing in h.
inline double h_from_ps(const FluidParams& f, double p, double s) {
  const SaturationState sat = saturation(f, p);
  if (s <= sat.s_liq) {
    const double T = f.T_datum * std::exp(s / f.cp_liquid);
    return f.cp_liquid * (T - f.T_datum) + detail::pressure_work(f, p);
  }
  if (s < sat.s_vap) {
    return sat.h_liq + (s - sat.s_liq) * sat.T_sat;
  }
  const double T = sat.T_sat * std::exp((s - sat.s_vap) / f.cp_vapor);
  return sat.h_vap + f.cp_vapor * (T - sat.T_sat);
}

/// Exhaust-gas heat capacity as a quadratic in temperature, with a hard
/// temperature domain.
struct ExhaustGasParams {
  std::array<double, 3> cp_coeffs = {950.0, 0.2, 0.0};  ///< cp = c0 + c1 T + c2 T^2
  double T_min = 200.0;  ///< domain [K]
  double T_max = 1200.0;
};

inline void finalize(ExhaustGasParams& g) {
  if (!(g.T_min > 0 && g.T_min < g.T_max)) {
    throw ConfigError("exhaust_gas: temperature domain must satisfy "
                      "0 < T_min < T_max");
  }
  for (int i = 0; i <= 64; ++i) {
    const double T = g.T_min + (g.T_max - g.T_min) * i / 64.0;
    const double cp = g.cp_coeffs[0] + T * (g.cp_coeffs[1] + T * g.cp_coeffs[2]);
    const double slope = g.cp_coeffs[1] + 2.0 * T * g.cp_coeffs[2];
    if (cp <= 0) throw ConfigError("exhaust_gas: cp not positive on the domain");
    if (slope < 0) {
      throw ConfigError("exhaust_gas: cp must be non-decreasing on the domain");
    }
  }
}

inline ExhaustGasParams default_exhaust_gas() {
  ExhaustGasParams g;
  finalize(g);
  return g;
}

inline double exhaust_cp(const ExhaustGasParams& g, double T) {
  if (!(T >= g.T_min && T <= g.T_max)) {
    throw ModelError("exhaust_cp: temperature " + std::to_string(T) +
                     " K outside the domain [" + std::to_string(g.T_min) +
                     ", " + std::to_string(g.T_max) + "] K");
  }
  return g.cp_coeffs[0] + T * (g.cp_coeffs[1] + T * g.cp_coeffs[2]);
}

}  // namespace orc
