#pragma once

// Independent numerical oracles used by the test suite: finite differences,
// adaptive quadrature, scalar root bracketing, golden-section search and a
// fixed-step RK4 integrator. They deliberately share no code with the library
// beyond the functions under test.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

/// Fourth-order central finite difference of a scalar function.
inline double fd_derivative(const std::function<double(double)>& f, double x,
                            double scale = 0.0) {
  const double base = std::max(std::abs(x), scale > 0 ? scale : 1.0);
  const double h = 1.6e-3 * base;
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) /
         (12 * h);
}

/// Adaptive Simpson quadrature with absolute/relative tolerance.
inline double simpson_rec(const std::function<double(double)>& f, double a,
                          double b, double fa, double fm, double fb,
                          double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a,
                        double b, double rel_tol = 1e-12) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
  const double tol = rel_tol * std::max(1.0, std::abs(whole));
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40);
}

/// Bisection on a bracketing interval; f(lo) and f(hi) must differ in sign.
inline double bisect(const std::function<double(double)>& f, double lo,
                     double hi, double tol = 1e-13) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if ((flo > 0) == (fhi > 0)) {
    throw std::runtime_error("bisect: endpoints do not bracket a root");
  }
  for (int i = 0; i < 200 && (hi - lo) > tol * std::max(1.0, std::abs(lo)); ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = f(mid);
    if (fmid == 0) return mid;
    if ((fmid > 0) == (flo > 0)) {
      lo = mid;
      flo = fmid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Golden-section maximization of a unimodal function on [a, b].
inline double golden_max(const std::function<double(double)>& f, double a,
                         double b, double tol = 1e-10) {
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Fixed-step classical RK4 for a scalar ODE dy/dx = f(x, y).
inline double rk4(const std::function<double(double, double)>& f, double x0,
                  double y0, double x1, int steps) {
  const double h = (x1 - x0) / steps;
  double x = x0, y = y0;
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(x, y);
    const double k2 = f(x + 0.5 * h, y + 0.5 * h * k1);
    const double k3 = f(x + 0.5 * h, y + 0.5 * h * k2);
    const double k4 = f(x + h, y + h * k3);
    y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    x += h;
  }
  return y;
}

/// Fixed-step RK4 for a vector ODE.
inline std::vector<double> rk4_vec(
    const std::function<std::vector<double>(double, const std::vector<double>&)>& f,
    double x0, std::vector<double> y, double x1, int steps) {
  const double h = (x1 - x0) / steps;
  double x = x0;
  const auto axpy = [](std::vector<double> a, double c,
                       const std::vector<double>& b) {
    for (size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
    return a;
  };
  for (int i = 0; i < steps; ++i) {
    const auto k1 = f(x, y);
    const auto k2 = f(x + 0.5 * h, axpy(y, 0.5 * h, k1));
    const auto k3 = f(x + 0.5 * h, axpy(y, 0.5 * h, k2));
    const auto k4 = f(x + h, axpy(y, h, k3));
    for (size_t j = 0; j < y.size(); ++j) {
      y[j] += h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
    }
    x += h;
  }
  return y;
}

}  // namespace oracle
