#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "orc/cycle.hpp"

namespace {

const orc::FluidParams& fluid() {
  static const orc::FluidParams f = orc::default_fluid();
  return f;
}

/// Factored form of the aerodynamic efficiency hill, used as the reference
/// for the expanded coefficient matrix.
double eta_is_reference(double pi, double n_star) {
  const double x = pi / 20.0 - 0.85;
  const double d = n_star - 0.95;
  const double f_pi = 1.0 - 0.8 * x * x - 0.5 * x * x * x;
  const double g_n = 1.0 - 3.2 * d * d + 1.5 * d * d * d - 8.0 * d * d * d * d +
                     3.0 * d * d * d * d * d;
  return 0.78 * f_pi * g_n;
}

double eta_mech_reference(double n_star, double m_star) {
  const double d = n_star - 0.95;
  const double mu = m_star - 0.6;
  return 0.95 * (1.0 - 0.25 * d * d) *
         (1.0 - 0.12 * mu * mu + 0.02 * mu * mu * mu * mu * mu);
}

}  // namespace

TEST_CASE("pump isentropic rise equals the liquid pressure-work integral") {
  const auto& f = fluid();
  orc::PumpParams pp;
  orc::finalize(pp);
  for (const auto& [p1, p2] : {std::pair<double, double>{1.01325e5, 1.0e6},
                               {1.2e5, 2.4e6},
                               {3.0e5, 3.5e6}}) {
    const double h_in = -f.cp_liquid * 4.0;  // a few kelvin of subcooling
    const orc::PumpResult r = orc::pump_state(f, pp, p1, h_in, p2, 0.014);
    const double work_ref = oracle::integrate(
        [&](double p) {
          return 1.0 / (f.rho_liquid_ref + f.drho_liquid_dp * (p - f.p_ref));
        },
        p1, p2, 1e-13);
    CHECK(r.dh_is == doctest::Approx(work_ref).epsilon(1e-10));
    CHECK(r.h_out == doctest::Approx(h_in + r.dh_is / pp.eta_is));
    CHECK(r.power ==
          doctest::Approx(0.014 * r.dh_is / (pp.eta_is * pp.eta_mech)));
    CHECK(r.h_out > h_in);
  }
  CHECK_THROWS_AS(orc::pump_state(f, pp, 1.0e6, 0.0, 5.0e5, 0.01),
                  orc::ModelError);
  CHECK_THROWS_AS(orc::pump_state(f, pp, 1.0e5, 0.0, 1.0e6, -0.01),
                  orc::ModelError);
}

TEST_CASE("turbine admission follows the elliptic pressure-ratio law") {
  orc::TurbineParams t;
  orc::finalize(t);
  // Hand-evaluated point: C_t p sqrt(1 - r^2) / sqrt(T).
  const double m = orc::turbine_admission(t, 1.0e6, 430.0, 1.01325e5);
  CHECK(m == doctest::Approx(0.0143928).epsilon(1e-4));

  // No flow without a forward pressure gradient.
  CHECK(orc::turbine_admission(t, 1.0e6, 430.0, 1.0e6) == 0.0);
  CHECK(orc::turbine_admission(t, 1.0e6, 430.0, 1.2e6) == 0.0);

  // Monotone in supply pressure, decreasing in supply temperature.
  double prev = 0.0;
  for (double p : {3.0e5, 6.0e5, 1.0e6, 1.5e6, 2.0e6}) {
    const double mi = orc::turbine_admission(t, p, 430.0, 1.01325e5);
    CHECK(mi > prev);
    prev = mi;
  }
  CHECK(orc::turbine_admission(t, 1.0e6, 470.0, 1.01325e5) <
        orc::turbine_admission(t, 1.0e6, 430.0, 1.01325e5));

  CHECK_THROWS_AS(orc::turbine_admission(t, 1.0e6, -1.0, 1.0e5),
                  orc::ModelError);
}

TEST_CASE("expanded turbine maps reproduce their factored construction") {
  const orc::TurbineMap map = orc::default_turbine_map();
  for (double pi : {6.0, 12.0, 20.0, 24.0, 28.0}) {
    for (double n : {0.73, 0.85, 0.95, 1.0, 1.09}) {
      CHECK(orc::eval_eta_is(map, pi, n) ==
            doctest::Approx(eta_is_reference(pi, n)).epsilon(1e-12));
    }
  }
  for (double n : {0.73, 0.9, 0.95, 1.09}) {
    for (double ms : {0.0, 0.1, 0.6, 1.2}) {
      CHECK(orc::eval_eta_mech(map, n, ms) ==
            doctest::Approx(eta_mech_reference(n, ms)).epsilon(1e-12));
    }
  }
}

TEST_CASE("aerodynamic efficiency peaks at the design speed ratio") {
  const orc::TurbineMap map = orc::default_turbine_map();
  const double n_peak = oracle::golden_max(
      [&](double n) { return orc::eval_eta_is(map, 20.0, n); }, 0.8, 1.05,
      1e-12);
  CHECK(n_peak == doctest::Approx(0.95).epsilon(1e-6));
  CHECK(orc::eval_eta_is(map, 20.0, 0.95) ==
        doctest::Approx(0.78 * 0.9803125).epsilon(1e-12));
  // The mechanical map peaks at the same speed ratio for fixed torque.
  const double n_peak_mech = oracle::golden_max(
      [&](double n) { return orc::eval_eta_mech(map, n, 0.6); }, 0.8, 1.05,
      1e-12);
  CHECK(n_peak_mech == doctest::Approx(0.95).epsilon(1e-6));
  CHECK(orc::eval_eta_mech(map, 0.95, 0.6) == doctest::Approx(0.95));
}

TEST_CASE("turbine expansion is consistent with an isentropic oracle") {
  const auto& f = fluid();
  orc::TurbineParams t;
  orc::finalize(t);
  const double p_in = 1.2e6;
  const double p_out = 1.01325e5;
  const orc::SaturationState sat = orc::saturation(f, p_in);
  const double h_in = sat.h_vap + f.cp_vapor * 30.0;
  const double mdot = 0.014;
  const orc::TurbineResult r =
      orc::turbine_power(f, t, mdot, p_in, h_in, p_out, 0.95);

  // Isentropic drop from a bisection oracle on the entropy residual.
  const double s_in = orc::s_from_ph(f, p_in, h_in);
  const double h_is_ref = oracle::bisect(
      [&](double h) { return orc::s_from_ph(f, p_out, h) - s_in; },
      orc::saturation(f, p_out).h_liq, h_in, 1e-14);
  CHECK(r.dh_is == doctest::Approx(h_in - h_is_ref).epsilon(1e-9));
  CHECK(r.dh_is > 0);

  // Power, torque and enthalpy bookkeeping.
  CHECK(r.P_aero == doctest::Approx(mdot * r.eta_is * r.dh_is));
  CHECK(r.P_shaft == doctest::Approx(r.eta_mech * r.P_aero));
  CHECK(r.torque * 2.0 * M_PI * 0.95 * t.n_scale ==
        doctest::Approx(r.P_aero));
  CHECK(r.h_out == doctest::Approx(h_in - r.eta_is * r.dh_is));
  CHECK(r.eta_is > 0.5);
  CHECK(r.eta_is < 1.0);
  CHECK(r.eta_mech > 0.8);
  CHECK(r.eta_mech < 1.0);
  CHECK(r.P_shaft > 0);
  CHECK(r.P_shaft < mdot * r.dh_is);

  // Losses keep the delivered state hotter than the isentropic one.
  CHECK(r.h_out > h_is_ref);

  // Zero admission produces zero power and torque but stays well defined.
  const orc::TurbineResult idle =
      orc::turbine_power(f, t, 0.0, p_in, h_in, p_out, 0.95);
  CHECK(idle.P_shaft == 0.0);
  CHECK(idle.torque == 0.0);
}

TEST_CASE("turbine rejects states outside its envelope") {
  const auto& f = fluid();
  orc::TurbineParams t;
  orc::finalize(t);
  const orc::SaturationState sat = orc::saturation(f, 1.2e6);
  const double h_wet = 0.5 * (sat.h_liq + sat.h_vap);
  CHECK_THROWS_AS(
      orc::turbine_power(f, t, 0.01, 1.2e6, h_wet, 1.01325e5, 0.95),
      orc::ModelError);
  const double h_in = sat.h_vap + f.cp_vapor * 30.0;
  CHECK_THROWS_AS(orc::turbine_power(f, t, 0.01, 1.2e6, h_in, 1.3e6, 0.95),
                  orc::ModelError);
  CHECK_THROWS_AS(orc::turbine_power(f, t, 0.01, 1.2e6, h_in, 1.01325e5, 0.0),
                  orc::ModelError);
  // Pressure ratio far beyond the fitted hill trips the map guard.
  CHECK_THROWS_AS(orc::eval_eta_is(t.map, 60.0, 0.95), orc::ModelError);
}

TEST_CASE("condenser delivers subcooled liquid at its fixed pressure") {
  const auto& f = fluid();
  orc::CondenserParams c;
  orc::finalize(f, c);
  const orc::SaturationState sat = orc::saturation(f, c.p_cond);
  const double h_in = sat.h_vap + f.cp_vapor * 20.0;  // hot vapor from turbine
  const orc::CondenserResult r = orc::condenser_outlet(f, c, 0.014, h_in);
  CHECK(r.T_out == doctest::Approx(sat.T_sat - 5.0));
  const orc::FluidState out = orc::state_from_ph(f, c.p_cond, r.h_out);
  CHECK(out.region == orc::Region::Liquid);
  CHECK(out.T == doctest::Approx(r.T_out).epsilon(1e-12));
  CHECK(r.Q_dot == doctest::Approx(0.014 * (h_in - r.h_out)));
  CHECK(r.Q_dot > 0);
  CHECK_THROWS_AS(orc::condenser_outlet(f, c, 0.014, r.h_out - 1.0e4),
                  orc::ModelError);
}

TEST_CASE("bypass valve splits the exhaust stream conservatively") {
  const orc::BypassSplit full = orc::bypass_split(0.201, 1.0);
  CHECK(full.mdot_evap == doctest::Approx(0.201));
  CHECK(full.mdot_bypass == doctest::Approx(0.0));
  const orc::BypassSplit half = orc::bypass_split(0.201, 0.35);
  CHECK(half.mdot_evap == doctest::Approx(0.35 * 0.201));
  CHECK(half.mdot_evap + half.mdot_bypass == doctest::Approx(0.201));
  CHECK_THROWS_AS(orc::bypass_split(0.2, 1.2), orc::ModelError);
  CHECK_THROWS_AS(orc::bypass_split(-0.1, 0.5), orc::ModelError);
}
