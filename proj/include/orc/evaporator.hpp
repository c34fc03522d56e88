#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>

#include "orc/errors.hpp"
#include "orc/fluid.hpp"

namespace orc {

using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat77 = Eigen::Matrix<double, 7, 7>;

/// Counter-current: exhaust enters at the working-fluid outlet end and
/// traverses zones 3 -> 2 -> 1. Co-current: enters at the feed end, 1 -> 3.
enum class FlowArrangement { Counter, Co };

struct EvapGeometry {
  double area_wf = 1.0e-3;      ///< working-fluid flow cross-section [m^2]
  double width_wf = 2.0;        ///< heat-transfer width, wall to WF [m]
  double width_exh = 2.5;       ///< heat-transfer width, exhaust to wall [m]
  double length = 2.0;          ///< total evaporator length [m]
  double area_wall = 1.8e-3;    ///< wall cross-section [m^2]
  double rho_wall = 7800.0;     ///< wall density [kg/m^3]
  double cp_wall = 500.0;       ///< wall specific heat [J/(kg K)]
  double perimeter_amb = 0.35;  ///< perimeter exposed to ambient [m]
  double min_zone_frac = 1e-4;  ///< zone-length guard, fraction of length
};

inline void finalize(EvapGeometry& g) {
  auto pos = [](double v, const char* n) {
    if (!(v > 0)) {
      throw ConfigError(std::string("evaporator geometry: ") + n +
                        " must be positive");
    }
  };
  pos(g.area_wf, "area_wf");
  pos(g.width_wf, "width_wf");
  pos(g.width_exh, "width_exh");
  pos(g.length, "length");
  pos(g.area_wall, "area_wall");
  pos(g.rho_wall, "rho_wall");
  pos(g.cp_wall, "cp_wall");
  if (g.perimeter_amb < 0) {
    throw ConfigError("evaporator geometry: perimeter_amb must be >= 0");
  }
  if (!(g.min_zone_frac > 0 && g.min_zone_frac < 0.1)) {
    throw ConfigError("evaporator geometry: min_zone_frac must be in (0, 0.1)");
  }
}

struct HeatTransferParams {
  double alpha_wf_liq = 800.0;         ///< wall -> subcooled liquid [W/(m^2 K)]
  double alpha_wf_two_phase = 4000.0;  ///< wall -> evaporating flow [W/(m^2 K)]
  double alpha_wf_vap = 400.0;         ///< wall -> superheated vapor [W/(m^2 K)]
  double alpha_exh = 120.0;            ///< exhaust -> wall [W/(m^2 K)]
  double alpha_amb = 5.0;              ///< wall -> ambient [W/(m^2 K)]
  double T_amb = 300.0;                ///< ambient temperature [K]
};

inline void finalize(HeatTransferParams& h) {
  if (!(h.alpha_wf_liq > 0 && h.alpha_wf_two_phase > 0 && h.alpha_wf_vap > 0 &&
        h.alpha_exh > 0)) {
    throw ConfigError(
        "evaporator heat transfer: film coefficients must be positive");
  }
  if (h.alpha_amb < 0 || !(h.T_amb > 0)) {
    throw ConfigError(
        "evaporator heat transfer: alpha_amb must be >= 0 and T_amb > 0");
  }
}

/// Differential states of the three-zone moving-boundary evaporator:
/// subcooled/two-phase boundary z1, two-phase/superheated boundary z2,
/// evaporation pressure p, outlet enthalpy h_out, and one lumped wall
/// temperature per zone.
struct EvapState {
  double z1 = 0.0;
  double z2 = 0.0;
  double p = 0.0;
  double h_out = 0.0;
  std::array<double, 3> T_w = {0.0, 0.0, 0.0};

  Vec7 to_vector() const {
    Vec7 v;
    v << z1, z2, p, h_out, T_w[0], T_w[1], T_w[2];
    return v;
  }
  static EvapState from_vector(const Vec7& v) {
    return EvapState{v[0], v[1], v[2], v[3], {v[4], v[5], v[6]}};
  }
};

struct EvapInputs {
  double mdot_wf_in = 0.0;   ///< working-fluid feed [kg/s]
  double h_wf_in = 0.0;      ///< feed enthalpy (subcooled) [J/kg]
  double mdot_exh = 0.0;     ///< exhaust flow reaching the evaporator [kg/s]
  double T_exh_in = 0.0;     ///< exhaust inlet temperature [K]
  double mdot_wf_out = 0.0;  ///< outlet flow drawn downstream [kg/s]
};

struct EvapOutputs {
  double mdot_wf_out = 0.0;
  double T_wf_out = 0.0;      ///< outlet temperature [K]
  double dT_superheat = 0.0;  ///< T_wf_out - T_sat(p) [K]
  double T_exh_out = 0.0;     ///< exhaust temperature leaving the unit [K]
  std::array<double, 3> Q_exh = {0, 0, 0};  ///< exhaust -> wall per zone [W]
  std::array<double, 3> Q_wf = {0, 0, 0};   ///< wall -> WF per zone [W]
  std::array<double, 3> Q_amb = {0, 0, 0};  ///< wall -> ambient per zone [W]
  std::array<double, 3> T_wf_mean = {0, 0, 0};
  std::array<double, 3> zone_len = {0, 0, 0};
  double mdot_12 = 0.0;  ///< interface flow, zone 1 -> 2 [kg/s]
  double mdot_23 = 0.0;  ///< interface flow, zone 2 -> 3 [kg/s]
};

/// Zone balances in linear-in-derivatives form A xdot = b with the two
/// interface flows eliminated, plus the solved derivative vector.
struct EvapDae {
  Mat77 A = Mat77::Zero();
  Vec7 b = Vec7::Zero();
  Vec7 xdot = Vec7::Zero();
  EvapOutputs out;
  double condition_estimate = 0.0;
};

/// Mean void fraction of the two-phase zone and its partial derivatives with
/// respect to the boundary enthalpies and (via the saturation line) pressure.
struct VoidFraction {
  double gamma = 0.0;
  double d_h0 = 0.0;
  double d_h2 = 0.0;
  double d_p = 0.0;  ///< at fixed h0, h2
};

namespace detail {

/// Mean of the homogeneous void fraction gamma(x) = x (1+u) / (1 + x u) over
/// x in [x0, x2], in reduced variables x (quality) and
/// u = (rho_liq - rho_vap) / rho_vap. Closed form with series and midpoint
/// fallbacks for the removable singularities u -> 0 and x2 -> x0.
struct GammaReduced {
  double value = 0.0;
  double d_x0 = 0.0;
  double d_x2 = 0.0;
  double d_u = 0.0;
};

inline GammaReduced gamma_pointwise(double xm, double u) {
  GammaReduced g;
  const double den = 1.0 + xm * u;
  g.value = xm * (1.0 + u) / den;
  const double d_xm = (1.0 + u) / (den * den);
  g.d_x0 = 0.5 * d_xm;
  g.d_x2 = 0.5 * d_xm;
  g.d_u = xm * (1.0 - xm) / (den * den);
  return g;
}

inline GammaReduced gamma_reduced(double x0, double x2, double u) {
  const double w = x2 - x0;
  if (std::abs(w) < 1e-12) {
    return gamma_pointwise(0.5 * (x0 + x2), u);
  }
  GammaReduced g;
  if (std::abs(u) < 1e-3) {
    // Nearly equal saturation densities. Power sums
    // s_m = sum_{j=0..m} x0^j x2^(m-j) give the exact series
    // gamma_bar = (1+u) * sum_k (-u)^k s_{k+1} / (k+2), truncated at O(u^6).
    double s[7], s_dx0[7], s_dx2[7];
    s[0] = 1.0;
    s_dx0[0] = 0.0;
    s_dx2[0] = 0.0;
    double x2pow_prev = 1.0;  // x2^(m-1)
    for (int m = 1; m <= 6; ++m) {
      // s_m = x0 s_{m-1} + x2^m, hence d/dx2 s_m = x0 d/dx2 s_{m-1} + m x2^(m-1).
      s[m] = x0 * s[m - 1] + x2pow_prev * x2;
      s_dx0[m] = s[m - 1] + x0 * s_dx0[m - 1];
      s_dx2[m] = x0 * s_dx2[m - 1] + m * x2pow_prev;
      x2pow_prev *= x2;
    }
    double value = 0.0, d_x0 = 0.0, d_x2 = 0.0, d_u_inner = 0.0;
    double uk = 1.0;        // (-u)^k
    double uk_dm1 = 0.0;    // d/du of (-u)^k
    for (int k = 0; k <= 5; ++k) {
      const double c = 1.0 / (k + 2);
      value += c * uk * s[k + 1];
      d_x0 += c * uk * s_dx0[k + 1];
      d_x2 += c * uk * s_dx2[k + 1];
      d_u_inner += c * uk_dm1 * s[k + 1];
      uk_dm1 = -(uk + u * uk_dm1);  // d/du (-u)^(k+1) = -( (-u)^k + u d/du(-u)^k )
      uk *= -u;
    }
    g.value = (1.0 + u) * value;
    g.d_x0 = (1.0 + u) * d_x0;
    g.d_x2 = (1.0 + u) * d_x2;
    g.d_u = value + (1.0 + u) * d_u_inner;
    return g;
  }
  const double a0 = 1.0 + x0 * u;
  const double a2 = 1.0 + x2 * u;
  if (!(a0 > 0.0) || !(a2 > 0.0)) {
    throw ModelError("mean void fraction: quality outside the admissible "
                     "range of the homogeneous profile");
  }
  const double Lg = std::log1p(w * u / a0);
  const double A = (1.0 + u) / u;
  const double B = 1.0 - Lg / (u * w);
  g.value = A * B;
  g.d_x0 = -(1.0 + u) / (u * u) * (Lg - u * w / a0) / (w * w);
  g.d_x2 = -(1.0 + u) / (u * u) * (u * w / a2 - Lg) / (w * w);
  const double dLg_du = x2 / a2 - x0 / a0;
  g.d_u = (-1.0 / (u * u)) * B + A * (-(dLg_du * u - Lg) / (u * u * w));
  return g;
}

}  // namespace detail

/// Mean void fraction over a two-phase region whose end enthalpies are h0 and
/// h2, both inside the dome at the saturation state's pressure. The enthalpy
/// profile between the ends is taken as linear.
inline VoidFraction mean_void_fraction_derivatives(const SaturationState& sat,
                                                   double h0, double h2) {
  const double dh = sat.h_vap - sat.h_liq;
  if (!(dh > 0)) {
    throw ModelError("mean void fraction: degenerate saturation dome");
  }
  const double slack = 1e-7 * dh;
  auto to_quality = [&](double h, const char* which) {
    if (h < sat.h_liq - slack || h > sat.h_vap + slack) {
      throw ModelError(std::string("mean void fraction: ") + which +
                       " enthalpy outside the dome");
    }
    const double x = (h - sat.h_liq) / dh;
    return std::min(1.0, std::max(0.0, x));
  };
  const double x0 = to_quality(h0, "lower");
  const double x2 = to_quality(h2, "upper");
  if (!(sat.rho_liq > sat.rho_vap) || !(sat.rho_vap > 0)) {
    throw ModelError("mean void fraction: saturation densities must satisfy "
                     "rho_liq > rho_vap > 0");
  }
  const double u = (sat.rho_liq - sat.rho_vap) / sat.rho_vap;

  const detail::GammaReduced g =
      (std::abs(h2 - h0) < 1.0) ? detail::gamma_pointwise(0.5 * (x0 + x2), u)
                                : detail::gamma_reduced(x0, x2, u);

  VoidFraction vf;
  vf.gamma = g.value;
  vf.d_h0 = g.d_x0 / dh;
  vf.d_h2 = g.d_x2 / dh;
  // Pressure moves the dome: x0, x2 shift through h_liq(p), h_vap(p), and u
  // shifts through the saturation densities.
  const double dx0_dp =
      ((x0 - 1.0) * sat.dh_liq_dp - x0 * sat.dh_vap_dp) / dh;
  const double dx2_dp =
      ((x2 - 1.0) * sat.dh_liq_dp - x2 * sat.dh_vap_dp) / dh;
  const double du_dp = sat.drho_liq_dp / sat.rho_vap -
                       (1.0 + u) * sat.drho_vap_dp / sat.rho_vap;
  vf.d_p = g.d_x0 * dx0_dp + g.d_x2 * dx2_dp + g.d_u * du_dp;
  return vf;
}

inline VoidFraction mean_void_fraction_derivatives(const FluidParams& f,
                                                   double p, double h0,
                                                   double h2) {
  return mean_void_fraction_derivatives(saturation(f, p), h0, h2);
}

inline double mean_void_fraction(const FluidParams& f, double p, double h0,
                                 double h2) {
  return mean_void_fraction_derivatives(f, p, h0, h2).gamma;
}

/// Temperature of the wall at the boundary between two adjacent zones, from
/// linear interpolation between the zone-centred lumped temperatures. The
/// boundary sits l_i/2 from the centre of zone i and l_j/2 from the centre of
/// zone j, so the thinner zone's temperature dominates.
inline double wall_boundary_temperature(double T_i, double T_j, double l_i,
                                        double l_j) {
  const double span = l_i + l_j;
  if (!(span > 0)) {
    throw ModelError("wall boundary temperature: non-positive zone lengths");
  }
  return (l_j * T_i + l_i * T_j) / span;
}

/// One exhaust-side element over a wall segment at uniform temperature T_wall.
/// The gas cools exponentially along the segment; cp is evaluated at the
/// element inlet temperature. Returns the gas exit temperature and the heat
/// given to the wall.
struct ExhaustElement {
  double T_out = 0.0;
  double Q_dot = 0.0;
};

inline ExhaustElement exhaust_element(const ExhaustGasParams& gas,
                                      double mdot_exh, double T_in,
                                      double T_wall, double alpha_exh,
                                      double width_exh, double length) {
  if (!(length >= 0) || !(width_exh > 0) || !(alpha_exh > 0)) {
    throw ModelError("exhaust element: invalid geometry or film coefficient");
  }
  ExhaustElement e;
  if (!(mdot_exh > 1e-9)) {
    // Stagnant gas equilibrates with the wall and carries no heat.
    e.T_out = T_wall;
    e.Q_dot = 0.0;
    return e;
  }
  const double cp = exhaust_cp(gas, T_in);
  const double ntu = alpha_exh * width_exh * length / (mdot_exh * cp);
  e.T_out = T_wall + (T_in - T_wall) * std::exp(-ntu);
  e.Q_dot = mdot_exh * cp * (T_in - e.T_out);
  return e;
}

namespace detail {

/// Intermediate quantities shared by the balance assembly and the
/// conservation-closure helpers.
struct ZoneThermo {
  SaturationState sat;
  double l1 = 0, l2 = 0, l3 = 0;
  double h_mean1 = 0, h_mean3 = 0;
  double rho_mean1 = 0;               ///< liquid density (h-independent)
  FluidState state3;                  ///< vapor state at (p, h_mean3)
  double T_mean1 = 0, T_mean3 = 0;
  VoidFraction vf;                    ///< at (p, h_liq, h_vap)
  double rho_mean2 = 0;               ///< gamma-weighted two-phase density
  double sigma2 = 0;                  ///< gamma-weighted rho*h
  double dgamma_dp_total = 0;         ///< d gamma / dp with h0=h'(p), h2=h''(p)
  double drho_mean2_dp = 0;
  double dsigma2_dp = 0;
};

inline ZoneThermo zone_thermo(const FluidParams& f, const EvapGeometry& geom,
                              const EvapState& s, double h_wf_in) {
  ZoneThermo zt;
  zt.sat = saturation(f, s.p);
  const double l_min = geom.min_zone_frac * geom.length;
  zt.l1 = s.z1;
  zt.l2 = s.z2 - s.z1;
  zt.l3 = geom.length - s.z2;
  if (!(zt.l1 >= l_min) || !(zt.l2 >= l_min) || !(zt.l3 >= l_min)) {
    throw ModelError("evaporator: a zone shrank below the guard length; the "
                     "three-zone description no longer applies");
  }
  if (!(h_wf_in < zt.sat.h_liq)) {
    throw ModelError("evaporator: feed must be subcooled liquid");
  }
  if (!(s.h_out > zt.sat.h_vap)) {
    throw ModelError("evaporator: outlet must be superheated vapor");
  }
  zt.h_mean1 = 0.5 * (h_wf_in + zt.sat.h_liq);
  zt.h_mean3 = 0.5 * (zt.sat.h_vap + s.h_out);
  zt.rho_mean1 = rho_liquid(f, s.p);
  const FluidState st1 = state_from_ph(f, s.p, zt.h_mean1);
  zt.T_mean1 = st1.T;
  zt.state3 = state_from_ph(f, s.p, zt.h_mean3);
  zt.T_mean3 = zt.state3.T;

  zt.vf = mean_void_fraction_derivatives(zt.sat, zt.sat.h_liq, zt.sat.h_vap);
  const double g = zt.vf.gamma;
  zt.rho_mean2 = g * zt.sat.rho_vap + (1.0 - g) * zt.sat.rho_liq;
  zt.sigma2 = g * zt.sat.rho_vap * zt.sat.h_vap +
              (1.0 - g) * zt.sat.rho_liq * zt.sat.h_liq;
  zt.dgamma_dp_total = zt.vf.d_p + zt.vf.d_h0 * zt.sat.dh_liq_dp +
                       zt.vf.d_h2 * zt.sat.dh_vap_dp;
  zt.drho_mean2_dp =
      zt.dgamma_dp_total * (zt.sat.rho_vap - zt.sat.rho_liq) +
      g * zt.sat.drho_vap_dp + (1.0 - g) * zt.sat.drho_liq_dp;
  zt.dsigma2_dp =
      zt.dgamma_dp_total *
          (zt.sat.rho_vap * zt.sat.h_vap - zt.sat.rho_liq * zt.sat.h_liq) +
      g * (zt.sat.drho_vap_dp * zt.sat.h_vap +
           zt.sat.rho_vap * zt.sat.dh_vap_dp) +
      (1.0 - g) * (zt.sat.drho_liq_dp * zt.sat.h_liq +
                   zt.sat.rho_liq * zt.sat.dh_liq_dp);
  return zt;
}

}  // namespace detail

/// Working-fluid mass held in the evaporator, consistent with the balance
/// equations' zone-mean densities.
inline double wf_mass(const FluidParams& f, const EvapGeometry& geom,
                      const EvapState& s, double h_wf_in) {
  const detail::ZoneThermo zt = detail::zone_thermo(f, geom, s, h_wf_in);
  const double rho_mean3 = zt.state3.rho;
  return geom.area_wf *
         (zt.rho_mean1 * zt.l1 + zt.rho_mean2 * zt.l2 + rho_mean3 * zt.l3);
}

/// Working-fluid internal energy held in the evaporator (rho h - p form),
/// consistent with the balance equations.
inline double wf_energy(const FluidParams& f, const EvapGeometry& geom,
                        const EvapState& s, double h_wf_in) {
  const detail::ZoneThermo zt = detail::zone_thermo(f, geom, s, h_wf_in);
  const double rho_h_1 = zt.rho_mean1 * zt.h_mean1;
  const double rho_h_3 = zt.state3.rho * zt.h_mean3;
  return geom.area_wf * (rho_h_1 * zt.l1 + zt.sigma2 * zt.l2 +
                         rho_h_3 * zt.l3 - geom.length * s.p);
}

/// Wall thermal energy relative to 0 K.
inline double wall_energy(const EvapGeometry& geom, const EvapState& s) {
  const double c_w = geom.area_wall * geom.rho_wall * geom.cp_wall;
  const double l1 = s.z1;
  const double l2 = s.z2 - s.z1;
  const double l3 = geom.length - s.z2;
  return c_w * (l1 * s.T_w[0] + l2 * s.T_w[1] + l3 * s.T_w[2]);
}

/// Assembles and solves the nine balance equations (mass and energy for each
/// zone, energy for each wall segment) for the seven state derivatives and
/// the two interface flows, and reduces them to the 7x7 form A xdot = b.
inline EvapDae assemble_dae(const FluidParams& f, const ExhaustGasParams& gas,
                            const EvapGeometry& geom,
                            const HeatTransferParams& htc,
                            FlowArrangement arrangement, const EvapState& s,
                            const EvapInputs& in) {
  if (!(in.mdot_wf_in >= 0) || !(in.mdot_wf_out >= 0) || !(in.mdot_exh >= 0)) {
    throw ModelError("evaporator: negative mass flow input");
  }
  const detail::ZoneThermo zt = detail::zone_thermo(f, geom, s, in.h_wf_in);
  const SaturationState& sat = zt.sat;
  const double A_c = geom.area_wf;
  const double k_liq = f.drho_liquid_dp;
  const double c_w = geom.area_wall * geom.rho_wall * geom.cp_wall;

  // Wall temperatures at the zone boundaries (thin-zone weighted).
  const double T_b12 =
      wall_boundary_temperature(s.T_w[0], s.T_w[1], zt.l1, zt.l2);
  const double T_b23 =
      wall_boundary_temperature(s.T_w[1], s.T_w[2], zt.l2, zt.l3);

  // Exhaust side: three elements in series.
  const std::array<double, 3> zone_len = {zt.l1, zt.l2, zt.l3};
  std::array<double, 3> Q_exh = {0, 0, 0};
  double T_gas = in.T_exh_in;
  if (arrangement == FlowArrangement::Counter) {
    for (int i = 2; i >= 0; --i) {
      const ExhaustElement e =
          exhaust_element(gas, in.mdot_exh, T_gas, s.T_w[size_t(i)],
                          htc.alpha_exh, geom.width_exh, zone_len[size_t(i)]);
      Q_exh[size_t(i)] = e.Q_dot;
      T_gas = e.T_out;
    }
  } else {
    for (int i = 0; i <= 2; ++i) {
      const ExhaustElement e =
          exhaust_element(gas, in.mdot_exh, T_gas, s.T_w[size_t(i)],
                          htc.alpha_exh, geom.width_exh, zone_len[size_t(i)]);
      Q_exh[size_t(i)] = e.Q_dot;
      T_gas = e.T_out;
    }
  }

  // Working-fluid-side and ambient heat flows.
  const double T_sat = sat.T_sat;
  const std::array<double, 3> T_wf_mean = {zt.T_mean1, T_sat, zt.T_mean3};
  const std::array<double, 3> alpha_wf = {htc.alpha_wf_liq,
                                          htc.alpha_wf_two_phase,
                                          htc.alpha_wf_vap};
  std::array<double, 3> Q_wf, Q_amb;
  for (size_t i = 0; i < 3; ++i) {
    Q_wf[i] = alpha_wf[i] * geom.width_wf * zone_len[i] *
              (s.T_w[i] - T_wf_mean[i]);
    Q_amb[i] = htc.alpha_amb * geom.perimeter_amb * zone_len[i] *
               (s.T_w[i] - htc.T_amb);
  }

  // Unknowns: [z1dot, z2dot, pdot, h_out_dot, Tw1dot, Tw2dot, Tw3dot,
  //            mdot_12, mdot_23].
  enum { iz1 = 0, iz2 = 1, ip = 2, ih = 3, iw1 = 4, iw2 = 5, iw3 = 6,
         im12 = 7, im23 = 8 };
  Eigen::Matrix<double, 9, 9> M = Eigen::Matrix<double, 9, 9>::Zero();
  Eigen::Matrix<double, 9, 1> r = Eigen::Matrix<double, 9, 1>::Zero();

  const double rho1 = zt.rho_mean1;
  const double h1 = zt.h_mean1;
  const double rho3 = zt.state3.rho;
  const double h3 = zt.h_mean3;
  const double drho3_dp = zt.state3.drho_dp_h;
  const double drho3_dh = zt.state3.drho_dh_p;

  // Zone 1 (subcooled) mass balance.
  M(0, iz1) = A_c * (rho1 - sat.rho_liq);
  M(0, ip) = A_c * s.z1 * k_liq;
  M(0, im12) = 1.0;
  r(0) = in.mdot_wf_in;

  // Zone 1 energy balance.
  M(1, iz1) = A_c * (rho1 * h1 - sat.rho_liq * sat.h_liq);
  M(1, ip) =
      A_c * s.z1 * (0.5 * rho1 * sat.dh_liq_dp + h1 * k_liq - 1.0);
  M(1, im12) = sat.h_liq;
  r(1) = in.mdot_wf_in * in.h_wf_in + Q_wf[0];

  // Zone 2 (two-phase) mass balance.
  M(2, iz1) = A_c * (sat.rho_liq - zt.rho_mean2);
  M(2, iz2) = A_c * (zt.rho_mean2 - sat.rho_vap);
  M(2, ip) = A_c * zt.l2 * zt.drho_mean2_dp;
  M(2, im12) = -1.0;
  M(2, im23) = 1.0;
  r(2) = 0.0;

  // Zone 2 energy balance.
  M(3, iz1) = A_c * (sat.rho_liq * sat.h_liq - zt.sigma2);
  M(3, iz2) = A_c * (zt.sigma2 - sat.rho_vap * sat.h_vap);
  M(3, ip) = A_c * zt.l2 * (zt.dsigma2_dp - 1.0);
  M(3, im12) = -sat.h_liq;
  M(3, im23) = sat.h_vap;
  r(3) = Q_wf[1];

  // Zone 3 (superheated) mass balance.
  M(4, iz2) = A_c * (sat.rho_vap - rho3);
  M(4, ip) = A_c * zt.l3 * (drho3_dp + 0.5 * drho3_dh * sat.dh_vap_dp);
  M(4, ih) = A_c * zt.l3 * 0.5 * drho3_dh;
  M(4, im23) = -1.0;
  r(4) = -in.mdot_wf_out;

  // Zone 3 energy balance.
  M(5, iz2) = A_c * (sat.rho_vap * sat.h_vap - rho3 * h3);
  M(5, ip) = A_c * zt.l3 *
             (0.5 * rho3 * sat.dh_vap_dp +
              h3 * (drho3_dp + 0.5 * drho3_dh * sat.dh_vap_dp) - 1.0);
  M(5, ih) = A_c * zt.l3 * (0.5 * rho3 + 0.5 * h3 * drho3_dh);
  M(5, im23) = -sat.h_vap;
  r(5) = -in.mdot_wf_out * s.h_out + Q_wf[2];

  // Wall energy balances; the advective terms exchange energy between
  // neighbouring segments as the boundaries sweep material across.
  M(6, iw1) = c_w * zt.l1;
  M(6, iz1) = c_w * (s.T_w[0] - T_b12);
  r(6) = Q_exh[0] - Q_wf[0] - Q_amb[0];

  M(7, iw2) = c_w * zt.l2;
  M(7, iz1) = c_w * (T_b12 - s.T_w[1]);
  M(7, iz2) = c_w * (s.T_w[1] - T_b23);
  r(7) = Q_exh[1] - Q_wf[1] - Q_amb[1];

  M(8, iw3) = c_w * zt.l3;
  M(8, iz2) = c_w * (T_b23 - s.T_w[2]);
  r(8) = Q_exh[2] - Q_wf[2] - Q_amb[2];

  // Equilibrate before solving and estimating conditioning: column scales
  // from the physical magnitude of each unknown, then row normalisation.
  Eigen::Matrix<double, 9, 1> col_scale;
  col_scale << geom.length, geom.length, 1e6, 1e6, 100.0, 100.0, 100.0, 0.1,
      0.1;
  Eigen::Matrix<double, 9, 9> Ms = M * col_scale.asDiagonal();
  Eigen::Matrix<double, 9, 1> rs = r;
  for (int i = 0; i < 9; ++i) {
    const double row_max = Ms.row(i).cwiseAbs().maxCoeff();
    if (!(row_max > 0) || !std::isfinite(row_max)) {
      throw ModelError("evaporator: balance matrix is singular");
    }
    Ms.row(i) /= row_max;
    rs(i) /= row_max;
  }
  const Eigen::PartialPivLU<Eigen::Matrix<double, 9, 9>> lu(Ms);
  const Eigen::Matrix<double, 9, 9> inv = lu.inverse();
  const double cond = Ms.cwiseAbs().rowwise().sum().maxCoeff() *
                      inv.cwiseAbs().rowwise().sum().maxCoeff();
  if (!std::isfinite(cond) || cond > 1e12) {
    throw ModelError("evaporator: balance matrix is near-singular "
                     "(condition estimate " +
                     std::to_string(cond) + ")");
  }
  const Eigen::Matrix<double, 9, 1> y = lu.solve(rs);
  const Eigen::Matrix<double, 9, 1> wfull = col_scale.asDiagonal() * y;

  EvapDae dae;
  dae.condition_estimate = cond;
  dae.xdot = wfull.head<7>();

  // Reduce to 7 equations: rows 0 and 4 define the interface flows (their
  // flow coefficients are exactly +1 and -1); substitute into the rest.
  const Eigen::Matrix<double, 1, 7> m0 = M.row(0).head<7>();
  const Eigen::Matrix<double, 1, 7> m4 = M.row(4).head<7>();
  const int keep[7] = {1, 2, 3, 5, 6, 7, 8};
  for (int out_row = 0; out_row < 7; ++out_row) {
    const int i = keep[out_row];
    Eigen::Matrix<double, 1, 7> row = M.row(i).head<7>();
    double rhs = r(i);
    const double c12 = M(i, im12);
    if (c12 != 0.0) {
      // mdot_12 = r0 - m0 . xdot
      row -= c12 * m0;
      rhs -= c12 * r(0);
    }
    const double c23 = M(i, im23);
    if (c23 != 0.0) {
      // mdot_23 = m4 . xdot - r4
      row += c23 * m4;
      rhs += c23 * r(4);
    }
    dae.A.row(out_row) = row;
    dae.b(out_row) = rhs;
  }

  EvapOutputs& o = dae.out;
  o.mdot_wf_out = in.mdot_wf_out;
  o.T_wf_out = state_from_ph(f, s.p, s.h_out).T;
  o.dT_superheat = o.T_wf_out - T_sat;
  o.T_exh_out = T_gas;
  o.Q_exh = Q_exh;
  o.Q_wf = Q_wf;
  o.Q_amb = Q_amb;
  o.T_wf_mean = T_wf_mean;
  o.zone_len = zone_len;
  o.mdot_12 = wfull(im12);
  o.mdot_23 = wfull(im23);
  return dae;
}

}  // namespace orc
