#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "orc/nlp.hpp"

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

orc::NlpProblem unconstrained(int n,
                              std::function<double(const Eigen::VectorXd&,
                                                   Eigen::VectorXd&)> fg) {
  orc::NlpProblem p;
  p.n = n;
  p.m = 0;
  p.lower = Eigen::VectorXd::Constant(n, -kInf);
  p.upper = Eigen::VectorXd::Constant(n, kInf);
  p.eval = [fg](const Eigen::VectorXd& th, double& f, Eigen::VectorXd& gf,
                Eigen::VectorXd& c, Eigen::MatrixXd& jc) {
    f = fg(th, gf);
    c.resize(0);
    jc.resize(0, th.size());
    return true;
  };
  return p;
}

}  // namespace

TEST_CASE("nlp solves the rosenbrock valley") {
  auto p = unconstrained(2, [](const Eigen::VectorXd& th, Eigen::VectorXd& g) {
    const double a = th[0], b = th[1];
    g.resize(2);
    g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
    g[1] = 200.0 * (b - a * a);
    return (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a);
  });
  Eigen::VectorXd th0(2);
  th0 << -1.2, 1.0;
  const orc::NlpResult r = orc::solve_nlp(p, th0);
  CHECK(r.converged);
  CHECK(r.kkt <= 1e-6);
  CHECK(r.theta[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.theta[1] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.objective == doctest::Approx(0.0).epsilon(1e-10).scale(1.0));
}

TEST_CASE("nlp pins active box bounds") {
  auto p = unconstrained(2, [](const Eigen::VectorXd& th, Eigen::VectorXd& g) {
    g.resize(2);
    g[0] = 2.0 * (th[0] - 2.0);
    g[1] = 8.0 * (th[1] - 3.0);
    return (th[0] - 2.0) * (th[0] - 2.0) +
           4.0 * (th[1] - 3.0) * (th[1] - 3.0);
  });
  p.lower = Eigen::Vector2d(0.0, 0.0);
  p.upper = Eigen::Vector2d(1.0, 1.0);
  Eigen::VectorXd th0 = Eigen::Vector2d(0.2, 0.4);
  const orc::NlpResult r = orc::solve_nlp(p, th0);
  CHECK(r.converged);
  // The unconstrained minimum (2, 3) lies outside the box; the projected
  // gradient vanishes exactly at the corner (1, 1).
  CHECK(r.theta[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.theta[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.kkt <= 1e-6);
}

TEST_CASE("nlp satisfies an active inequality with correct multiplier") {
  // min th0 + th1 subject to th0^2 + th1^2 <= 1: optimum at
  // (-1/sqrt2, -1/sqrt2) with multiplier 1/sqrt2.
  orc::NlpProblem p;
  p.n = 2;
  p.m = 2;
  p.lower = Eigen::VectorXd::Constant(2, -kInf);
  p.upper = Eigen::VectorXd::Constant(2, kInf);
  p.eval = [](const Eigen::VectorXd& th, double& f, Eigen::VectorXd& gf,
              Eigen::VectorXd& c, Eigen::MatrixXd& jc) {
    f = th[0] + th[1];
    gf = Eigen::Vector2d(1.0, 1.0);
    c.resize(2);
    c[0] = th.squaredNorm() - 1.0;
    c[1] = th[0] - 5.0;  // inactive at the optimum
    jc.resize(2, 2);
    jc.row(0) = 2.0 * th.transpose();
    jc.row(1) << 1.0, 0.0;
    return true;
  };
  const Eigen::VectorXd th0 = Eigen::VectorXd::Zero(2);
  const orc::NlpResult r = orc::solve_nlp(p, th0);
  const double s = -1.0 / std::sqrt(2.0);
  CHECK(r.converged);
  CHECK(r.theta[0] == doctest::Approx(s).epsilon(1e-5));
  CHECK(r.theta[1] == doctest::Approx(s).epsilon(1e-5));
  CHECK(r.max_violation <= 1e-4);
  CHECK(r.kkt <= 1e-6);
  CHECK(r.multipliers[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-3));
  CHECK(r.multipliers[1] == doctest::Approx(0.0).epsilon(1e-8).scale(1.0));
}

TEST_CASE("nlp backs away from unevaluable regions and reports no proof") {
  // Minimum at -3 lies behind a wall at +1 where the model stops being
  // evaluable; the solver must park at the wall without claiming optimality.
  orc::NlpProblem p;
  p.n = 1;
  p.m = 0;
  p.lower = Eigen::VectorXd::Constant(1, -kInf);
  p.upper = Eigen::VectorXd::Constant(1, kInf);
  p.eval = [](const Eigen::VectorXd& th, double& f, Eigen::VectorXd& gf,
              Eigen::VectorXd& c, Eigen::MatrixXd& jc) {
    if (th[0] < 1.0) {
      return false;
    }
    f = (th[0] + 3.0) * (th[0] + 3.0);
    gf = Eigen::VectorXd::Constant(1, 2.0 * (th[0] + 3.0));
    c.resize(0);
    jc.resize(0, 1);
    return true;
  };
  Eigen::VectorXd th0 = Eigen::VectorXd::Constant(1, 2.0);
  const orc::NlpResult r = orc::solve_nlp(p, th0);
  CHECK_FALSE(r.converged);
  CHECK(r.theta[0] >= 1.0);
  CHECK(r.theta[0] <= 1.0 + 1e-6);
}

TEST_CASE("nlp respects the iteration budget and flags it") {
  auto p = unconstrained(2, [](const Eigen::VectorXd& th, Eigen::VectorXd& g) {
    const double a = th[0], b = th[1];
    g.resize(2);
    g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
    g[1] = 200.0 * (b - a * a);
    return (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a);
  });
  Eigen::VectorXd th0(2);
  th0 << -1.2, 1.0;
  orc::NlpOptions opt;
  opt.max_iterations = 3;
  const orc::NlpResult r = orc::solve_nlp(p, th0, opt);
  CHECK_FALSE(r.converged);
  CHECK(r.inner_iterations == 3);
}

TEST_CASE("nlp is deterministic") {
  orc::NlpProblem p;
  p.n = 2;
  p.m = 1;
  p.lower = Eigen::VectorXd::Constant(2, -kInf);
  p.upper = Eigen::VectorXd::Constant(2, kInf);
  p.eval = [](const Eigen::VectorXd& th, double& f, Eigen::VectorXd& gf,
              Eigen::VectorXd& c, Eigen::MatrixXd& jc) {
    f = th[0] + th[1];
    gf = Eigen::Vector2d(1.0, 1.0);
    c = Eigen::VectorXd::Constant(1, th.squaredNorm() - 1.0);
    jc = 2.0 * th.transpose();
    return true;
  };
  const Eigen::VectorXd th0 = Eigen::VectorXd::Zero(2);
  const orc::NlpResult a = orc::solve_nlp(p, th0);
  const orc::NlpResult b = orc::solve_nlp(p, th0);
  REQUIRE(a.theta.size() == b.theta.size());
  CHECK(std::memcmp(a.theta.data(), b.theta.data(),
                    sizeof(double) * size_t(a.theta.size())) == 0);
  CHECK(a.n_evals == b.n_evals);
}
