#pragma once

// Reference solutions written independently of the library code paths.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

// Closed-form excited-state population of a resonantly driven two-level
// system starting in the ground state. Exact for T2 = 2 T1; the overdamped
// branch follows from the complex continuation of xi.
inline double rabi_closed_form(double t, double omega, double t1, double t2) {
  const double g = 1.0 / t1 + 1.0 / t2;
  const double d = 1.0 / t2 - 1.0 / t1;
  const std::complex<double> xi = std::sqrt(std::complex<double>(omega * omega - d * d / 4.0, 0.0));
  std::complex<double> osc;
  if (std::abs(xi) < 1e-12) osc = 1.0 + g * t / 2.0;
  else osc = std::cos(xi * t) + g / (2.0 * xi) * std::sin(xi * t);
  const double amp = (omega * omega / 2.0) / (omega * omega + 1.0 / (t1 * t2));
  return amp * (1.0 - osc.real() * std::exp(-g * t / 2.0));
}

// Optical Bloch equations for (rho_ee, Re rho_eg, Im rho_eg, 1) under
// H = (Omega/2) sigma_x, solved by matrix exponential. Valid for any T2.
inline double bloch_population(double t, double omega, double t1, double t2) {
  Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
  a(0, 0) = -1.0 / t1;
  a(0, 2) = -omega;
  a(1, 1) = -1.0 / t2;
  a(2, 0) = omega;
  a(2, 2) = -1.0 / t2;
  a(2, 3) = -omega / 2.0;
  const Eigen::Matrix4d m = (a * t).exp();
  return m(0, 3);
}

inline double steady_population(double omega, double t1, double t2) {
  return (omega * omega / 2.0) / (omega * omega + 1.0 / (t1 * t2));
}

// Resonant CW two-level g2 from the Bloch equations: regression theorem
// with the collapsed state |g><g|, normalized by the steady population.
inline double cw_g2_bloch(double tau, double omega, double t1) {
  return bloch_population(tau, omega, t1, 2.0 * t1) / steady_population(omega, t1, 2.0 * t1);
}

// Composite Simpson rule.
template <class F>
double simpson(F f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

// Random density matrix A A^dagger / Tr, dimension n.
inline Eigen::MatrixXcd random_state(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  Eigen::MatrixXcd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = {g(rng), g(rng)};
  Eigen::MatrixXcd r = a * a.adjoint();
  return r / r.trace().real();
}

}  // namespace oracle
