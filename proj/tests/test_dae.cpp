#include <doctest.h>

#include <cmath>

#include "orc/controls.hpp"
#include "orc/evaporator.hpp"
#include "orc/integrate.hpp"
#include "orc/steady_state.hpp"
#include "orc/system.hpp"
#include "oracles.hpp"

namespace {

orc::IntegratorOptions tight() {
  orc::IntegratorOptions o;
  o.rtol = 1e-9;
  o.atol = 1e-12;
  return o;
}

const Eigen::Vector2d kExhaustRef(0.201, 0.967);

}  // namespace

TEST_CASE("integrator reproduces a stiff linear decay") {
  // x' = -lambda (x - cos t) - sin t has the exact solution x = cos t for
  // x(0) = 1, with a fast transient toward it from any other start.
  const double lambda = 2000.0;
  orc::OdeSystem sys;
  sys.dim = 1;
  sys.f = [&](double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    d[0] = -lambda * (x[0] - std::cos(t)) - std::sin(t);
    return d;
  };
  Eigen::VectorXd x0(1);
  x0[0] = 1.0;
  const orc::Trajectory tr = orc::integrate_ode(sys, 0.0, 5.0, x0, tight());
  CHECK(tr.nodes.back().x[0] == doctest::Approx(std::cos(5.0)).epsilon(1e-7));
  // Stiffness must not force steps at the fast time scale.
  CHECK(tr.n_steps < 2000);

  // Off-manifold start: the transient is resolved, then steps grow.
  x0[0] = 3.0;
  const orc::Trajectory tr2 = orc::integrate_ode(sys, 0.0, 5.0, x0, tight());
  CHECK(tr2.nodes.back().x[0] ==
        doctest::Approx(std::cos(5.0)).epsilon(1e-6));
}

TEST_CASE("integrator matches closed forms on smooth nonlinear problems") {
  // x' = -x^2, x(0) = 1 -> x = 1/(1+t).
  orc::OdeSystem sys;
  sys.dim = 1;
  sys.f = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    d[0] = -x[0] * x[0];
    return d;
  };
  Eigen::VectorXd x0(1);
  x0[0] = 1.0;
  const orc::Trajectory tr = orc::integrate_ode(sys, 0.0, 9.0, x0, tight());
  CHECK(tr.nodes.back().x[0] == doctest::Approx(0.1).epsilon(1e-6));

  // Loosening the tolerance must not break the result badly, and the
  // tighter run must be closer to the truth.
  orc::IntegratorOptions loose;
  loose.rtol = 1e-5;
  loose.atol = 1e-8;
  const orc::Trajectory tl = orc::integrate_ode(sys, 0.0, 9.0, x0, loose);
  const double err_tight = std::abs(tr.nodes.back().x[0] - 0.1);
  const double err_loose = std::abs(tl.nodes.back().x[0] - 0.1);
  CHECK(err_tight < err_loose);
  CHECK(tl.n_steps < tr.n_steps);
}

TEST_CASE("integrator agrees with a fine RK4 oracle on a coupled system") {
  // Van der Pol with mild damping: smooth, nonlinear, non-autonomous-free.
  auto rhs = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(2);
    d[0] = x[1];
    d[1] = 2.0 * (1.0 - x[0] * x[0]) * x[1] - x[0];
    return d;
  };
  orc::OdeSystem sys;
  sys.dim = 2;
  sys.f = rhs;
  Eigen::VectorXd x0(2);
  x0 << 2.0, 0.0;
  const orc::Trajectory tr = orc::integrate_ode(sys, 0.0, 8.0, x0, tight());

  const std::vector<double> ref = oracle::rk4_vec(
      [&](double t, const std::vector<double>& y) {
        Eigen::VectorXd xe(2);
        xe << y[0], y[1];
        const Eigen::VectorXd d = rhs(t, xe);
        return std::vector<double>{d[0], d[1]};
      },
      0.0, {2.0, 0.0}, 8.0, 200000);
  CHECK(tr.nodes.back().x[0] == doctest::Approx(ref[0]).epsilon(1e-6));
  CHECK(tr.nodes.back().x[1] == doctest::Approx(ref[1]).epsilon(1e-6));
}

TEST_CASE("dense output interpolates between accepted steps") {
  orc::OdeSystem sys;
  sys.dim = 1;
  sys.f = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    d[0] = -0.7 * x[0];
    return d;
  };
  Eigen::VectorXd x0(1);
  x0[0] = 2.0;
  const orc::Trajectory tr = orc::integrate_ode(sys, 0.0, 4.0, x0, tight());
  // Global error accumulates over hundreds of steps, so the dense values
  // sit an order or two above the per-step tolerance.
  for (double t : {0.13, 0.77, 1.93, 2.41, 3.99}) {
    CHECK(tr.eval(t)[0] ==
          doctest::Approx(2.0 * std::exp(-0.7 * t)).epsilon(1e-6));
  }
  // Clamped outside the span.
  CHECK(tr.eval(-1.0)[0] == tr.nodes.front().x[0]);
  CHECK(tr.eval(99.0)[0] == tr.nodes.back().x[0]);
}

TEST_CASE("mandatory times are hit exactly and kinks are isolated") {
  // Continuous RHS whose time derivative jumps at t = 1.5, the shape a
  // piecewise linear control move produces. The mandatory point pins a
  // step boundary on the kink so each step sees smooth dynamics.
  orc::OdeSystem sys;
  sys.dim = 1;
  sys.f = [](double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    d[0] = 1.0 - x[0] - ((t < 1.5) ? 0.0 : 3.0 * (t - 1.5));
    return d;
  };
  Eigen::VectorXd x0(1);
  x0[0] = 0.0;
  const std::vector<double> stops = {0.5, 1.5, 2.5};
  const orc::Trajectory tr =
      orc::integrate_ode(sys, 0.0, 3.0, x0, tight(), stops);
  for (double s : stops) {
    const orc::TrajectoryNode& node = tr.node_at(s);
    CHECK(node.t == doctest::Approx(s).epsilon(1e-12));
  }
  CHECK_THROWS_AS(tr.node_at(1.23456), orc::NumericsError);

  // Exact solution: x = 1 - e^{-t} up to the kink; afterwards, with
  // s = t - 1.5, x = (x_kink - 4) e^{-s} + 4 - 3 s.
  const double x_kink = 1.0 - std::exp(-1.5);
  const double x_end = (x_kink - 4.0) * std::exp(-1.5) - 0.5;
  CHECK(tr.node_at(1.5).x[0] == doctest::Approx(x_kink).epsilon(1e-6));
  CHECK(tr.nodes.back().x[0] == doctest::Approx(x_end).epsilon(1e-6));
}

TEST_CASE("integration is deterministic across reruns") {
  orc::OdeSystem sys;
  sys.dim = 2;
  sys.f = [](double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(2);
    d[0] = x[1];
    d[1] = -std::sin(x[0]) - 0.1 * x[1] + 0.2 * std::cos(t);
    return d;
  };
  Eigen::VectorXd x0(2);
  x0 << 1.0, 0.0;
  const orc::Trajectory a = orc::integrate_ode(sys, 0.0, 20.0, x0, tight());
  const orc::Trajectory b = orc::integrate_ode(sys, 0.0, 20.0, x0, tight());
  REQUIRE(a.nodes.size() == b.nodes.size());
  for (size_t i = 0; i < a.nodes.size(); ++i) {
    CHECK(a.nodes[i].t == b.nodes[i].t);
    CHECK(a.nodes[i].x[0] == b.nodes[i].x[0]);
    CHECK(a.nodes[i].x[1] == b.nodes[i].x[1]);
  }
  CHECK(a.n_rhs_evals == b.n_rhs_evals);
}

TEST_CASE("integrator failure modes raise numerics errors") {
  orc::OdeSystem sys;
  sys.dim = 1;
  sys.f = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    d[0] = -x[0];
    return d;
  };
  Eigen::VectorXd x0(1);
  x0[0] = 1.0;

  orc::IntegratorOptions opt = tight();
  opt.max_steps = 3;
  opt.h_init = 1e-6;
  opt.h_max = 1e-6;
  CHECK_THROWS_AS(orc::integrate_ode(sys, 0.0, 1.0, x0, opt),
                  orc::NumericsError);

  // A model barrier the trajectory must cross: the step size collapses and
  // the integration reports failure instead of looping.
  orc::OdeSystem blocked;
  blocked.dim = 1;
  blocked.f = [](double t, const Eigen::VectorXd& x) {
    if (t > 0.5) throw orc::ModelError("region ends");
    Eigen::VectorXd d(1);
    d[0] = 1.0;
    return d;
  };
  CHECK_THROWS_AS(orc::integrate_ode(blocked, 0.0, 1.0, x0, tight()),
                  orc::NumericsError);
}

TEST_CASE("forward sensitivities match finite differences of the flow") {
  // x0' = th0 * x0 + th1, x1' = x0 * x1, sensitivities w.r.t. (th0, th1).
  const double th0 = -0.8, th1 = 0.35;
  auto make = [&](double a, double b) {
    orc::OdeSystem sys;
    sys.dim = 2;
    sys.np = 2;
    sys.f = [a, b](double, const Eigen::VectorXd& x) {
      Eigen::VectorXd d(2);
      d[0] = a * x[0] + b;
      d[1] = x[0] * x[1];
      return d;
    };
    sys.df_dtheta = [](double, const Eigen::VectorXd& x) {
      Eigen::MatrixXd G(2, 2);
      G << x[0], 1.0, 0.0, 0.0;
      return G;
    };
    return sys;
  };
  Eigen::VectorXd x0(2);
  x0 << 1.2, 0.7;
  const orc::Trajectory tr =
      orc::integrate_ode(make(th0, th1), 0.0, 3.0, x0, tight());
  const Eigen::MatrixXd S = tr.nodes.back().S;
  REQUIRE(S.rows() == 2);
  REQUIRE(S.cols() == 2);

  auto endpoint = [&](double a, double b, int comp) {
    orc::OdeSystem sys = make(a, b);
    sys.np = 0;
    sys.df_dtheta = nullptr;
    return orc::integrate_ode(sys, 0.0, 3.0, x0, tight()).nodes.back().x[comp];
  };
  for (int comp = 0; comp < 2; ++comp) {
    const double d_th0 = oracle::fd_derivative(
        [&](double a) { return endpoint(a, th1, comp); }, th0);
    const double d_th1 = oracle::fd_derivative(
        [&](double b) { return endpoint(th0, b, comp); }, th1);
    CHECK(S(comp, 0) == doctest::Approx(d_th0).epsilon(2e-5));
    CHECK(S(comp, 1) == doctest::Approx(d_th1).epsilon(2e-5));
  }
}

TEST_CASE("closed loop holds a solved steady state") {
  const orc::SystemParams P = orc::default_system();
  const Eigen::Vector3d u(0.012, 0.95, 1.0);
  const orc::SteadyStateResult ss =
      orc::solve_steady_state(P, u, kExhaustRef);

  // Fixed point in scaled units.
  CHECK(ss.residual < 1e-9);
  const orc::SystemEval ev = orc::evaluate_system(P, ss.x, u, kExhaustRef);
  const orc::Vec7 scales = orc::internal_state_scales(P.geometry);
  CHECK(ev.xdot.cwiseQuotient(scales).lpNorm<Eigen::Infinity>() < 1e-9);

  // Steady flows balance and the unit makes power.
  CHECK(ev.out.mdot_wf_out ==
        doctest::Approx(ev.out.mdot_wf_in).epsilon(1e-9));
  CHECK(ev.out.P_net > 0.0);
  CHECK(ev.out.P_turb > ev.out.P_pump);
  CHECK(ev.out.dT_superheat > 0.0);
  CHECK(ev.out.T_exh_out < ev.out.T_exh_in);
  CHECK(ss.x[0] > 0.0);
  CHECK(ss.x[1] > ss.x[0]);
  CHECK(ss.x[1] < P.geometry.length);

  // Energy books balance across the loop at steady state: exhaust heat in
  // minus ambient loss equals enthalpy pickup of the working fluid.
  const double H_in = ev.out.mdot_wf_in * ev.out.h_feed;
  const double H_out = ev.out.mdot_wf_out * ss.x[3];
  CHECK(ev.out.Q_exh_total - ev.out.Q_amb_total ==
        doctest::Approx(H_out - H_in).epsilon(1e-8));

  // Scaled magnitudes stay in a sane window at the default operating point.
  const Eigen::VectorXd y = ss.x.cwiseQuotient(scales);
  for (int i = 0; i < 7; ++i) {
    CHECK(std::abs(y[i]) > 1e-3);
    CHECK(std::abs(y[i]) < 1e3);
  }
}

TEST_CASE("steady solves cover the manifold and fail past the collapse") {
  const orc::SystemParams P = orc::default_system();
  double prev_power = 0.0;
  for (double m : {0.0073, 0.010, 0.013, 0.0139}) {
    const Eigen::Vector3d u(m, 0.95, 1.0);
    const orc::SteadyStateResult ss =
        orc::solve_steady_state(P, u, kExhaustRef);
    CHECK(ss.out.dT_superheat > 0.0);
    CHECK(ss.out.P_net_star > prev_power);
    prev_power = ss.out.P_net_star;
  }
  // Past the superheat collapse there is no three-zone steady state.
  CHECK_THROWS_AS(orc::solve_steady_state(
                      P, Eigen::Vector3d(0.0185, 0.95, 1.0), kExhaustRef),
                  orc::NumericsError);
}

TEST_CASE("transient conserves mass and energy over 300 s") {
  const orc::SystemParams P = orc::default_system();
  const Eigen::Vector3d u0(0.012, 0.95, 1.0);
  const orc::SteadyStateResult ss =
      orc::solve_steady_state(P, u0, kExhaustRef);

  // Piecewise-linear control moves: feed flow ramps up 6%, speed dips,
  // bypass partially closes, all within the move set of later scenarios.
  orc::ControlSchedule sched;
  sched.mdot_wf_star.t = {0.0, 50.0, 80.0, 300.0};
  sched.mdot_wf_star.v = {0.012, 0.012, 0.01272, 0.01272};
  sched.n_star.t = {0.0, 120.0, 150.0, 300.0};
  sched.n_star.v = {0.95, 0.95, 0.90, 0.90};
  sched.x_bpv.t = {0.0, 200.0, 230.0, 300.0};
  sched.x_bpv.v = {1.0, 1.0, 0.93, 0.93};
  sched.validate();

  // Augmented states: integrated mass and energy fluxes ride along so the
  // closure comparison sees exactly what the integrator resolved.
  orc::OdeSystem sys;
  sys.dim = 9;
  sys.f = [&](double t, const Eigen::VectorXd& xa) {
    const orc::Vec7 x = xa.head<7>();
    const Eigen::Vector3d u = sched.eval(t);
    const orc::SystemEval ev = orc::evaluate_system(P, x, u, kExhaustRef);
    Eigen::VectorXd d(9);
    d.head<7>() = ev.xdot;
    d[7] = ev.out.mdot_wf_in - ev.out.mdot_wf_out;
    d[8] = ev.out.mdot_wf_in * ev.out.h_feed -
           ev.out.mdot_wf_out * x[3] + ev.out.Q_exh_total -
           ev.out.Q_amb_total;
    return d;
  };

  Eigen::VectorXd xa0(9);
  xa0.head<7>() = ss.x;
  xa0[7] = 0.0;
  xa0[8] = 0.0;

  orc::IntegratorOptions opt;
  opt.rtol = 1e-8;
  opt.atol = 1e-10;
  const orc::Trajectory tr = orc::integrate_ode(
      sys, 0.0, 300.0, xa0, opt, sched.breakpoints());

  const orc::EvapState s_begin = orc::EvapState::from_vector(ss.x);
  const orc::EvapState s_end =
      orc::EvapState::from_vector(tr.nodes.back().x.head<7>());
  const double h_feed_begin =
      orc::evaluate_system(P, ss.x, sched.eval(0.0), kExhaustRef)
          .out.h_feed;
  const double h_feed_end =
      orc::evaluate_system(P, orc::Vec7(tr.nodes.back().x.head<7>()),
                           sched.eval(300.0), kExhaustRef)
          .out.h_feed;

  const double mass_begin =
      orc::wf_mass(P.fluid, P.geometry, s_begin, h_feed_begin);
  const double mass_end =
      orc::wf_mass(P.fluid, P.geometry, s_end, h_feed_end);
  const double mass_flux = tr.nodes.back().x[7];
  const double mass_err =
      std::abs(mass_end - mass_begin - mass_flux) / std::abs(mass_begin);
  CHECK(mass_err < 1e-5);

  const double energy_begin =
      orc::wf_energy(P.fluid, P.geometry, s_begin, h_feed_begin) +
      orc::wall_energy(P.geometry, s_begin);
  const double energy_end =
      orc::wf_energy(P.fluid, P.geometry, s_end, h_feed_end) +
      orc::wall_energy(P.geometry, s_end);
  const double energy_flux = tr.nodes.back().x[8];
  const double energy_err =
      std::abs(energy_end - energy_begin - energy_flux) /
      std::abs(energy_begin);
  CHECK(energy_err < 1e-4);

  // The moves actually moved the plant.
  CHECK(std::abs(s_end.p - s_begin.p) > 1e3);
}

TEST_CASE("scaling config is a pure change of units") {
  orc::SystemParams P1 = orc::default_system();
  orc::SystemParams P2 = orc::default_system();
  P2.scaling.p_scale = 1.0e6;
  P2.scaling.T_scale = 250.0;
  P2.scaling.mdot_scale = 0.5;
  P2.scaling.n_scale = 500.0;
  P2.scaling.P_scale = 1.0e4;
  orc::finalize(P2);

  // The same physical controls expressed in both unit systems. The halved
  // scales make the starred values exactly representable.
  const Eigen::Vector3d u1(0.012, 0.95, 1.0);
  const Eigen::Vector3d u2(0.024, 1.90, 1.0);
  const Eigen::Vector2d d1 = kExhaustRef;
  const Eigen::Vector2d d2(0.402, 1.934);

  const orc::SteadyStateResult s1 = orc::solve_steady_state(P1, u1, d1);
  const orc::SteadyStateResult s2 = orc::solve_steady_state(P2, u2, d2);
  for (int i = 0; i < 7; ++i) {
    CHECK(s1.x[i] == doctest::Approx(s2.x[i]).epsilon(1e-9));
  }
  CHECK(s1.out.P_net == doctest::Approx(s2.out.P_net).epsilon(1e-9));

  // Starred outputs convert by the scale ratio.
  CHECK(s2.out.P_net_star ==
        doctest::Approx(s1.out.P_net_star * 2.0).epsilon(1e-9));
  CHECK(s2.out.T_wf_out_star ==
        doctest::Approx(s1.out.T_wf_out_star * 2.0).epsilon(1e-9));
}
