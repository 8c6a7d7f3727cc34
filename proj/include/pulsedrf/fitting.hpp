#pragma once

// Nonlinear least squares and the decay, Rabi and beat estimators built on it.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pulsedrf/drive.hpp"
#include "pulsedrf/integrator.hpp"

namespace pulsedrf {

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> values;
  /// 1-sigma uncertainties; empty unless the fit converged.
  std::vector<double> sigmas;
  double rss = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;

  double value(const std::string& name) const;
  /// Throws std::logic_error when the fit did not converge.
  double sigma(const std::string& name) const;
};

using ResidualFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct LeastSquaresOptions {
  int max_iterations = 200;
  /// Relative step and cost tolerances.
  double x_tolerance = 1e-12;
  double f_tolerance = 1e-15;
  /// Indices of parameters that must stay strictly positive.
  std::vector<int> positive;
  /// Residuals are already divided by known data sigmas: the covariance is
  /// (J^T J)^-1 instead of being rescaled by the reduced chi-square.
  bool absolute_sigma = false;
};

/// Levenberg-Marquardt with central-difference Jacobians. Never throws for
/// non-convergence; the result is flagged instead.
FitResult levenberg_marquardt(const ResidualFunction& residuals, const Eigen::VectorXd& start,
                              std::vector<std::string> names, const LeastSquaresOptions& options = {});

/// y = amplitude * exp(-t / T1). Needs >= 10 points; the result is flagged
/// when the data span fewer than 2 fitted decay constants. `sigma` (per
/// point, optional) switches to weighted residuals with absolute errors.
FitResult fit_exponential(std::span<const double> t, std::span<const double> y,
                          std::span<const double> sigma = {});

/// Fits the emission intensity of a trajectory for t >= t_from.
FitResult fit_exponential(const Trajectory& trajectory, double t_from);

/// Excited-state population of a resonantly driven two-level system
/// starting in the ground state. With chirp, Omega is replaced by
/// Omega * sqrt(q(t) / p0), q(t) = p0 + p1 t + p2 t^2.
double rabi_population(double t, double omega, double t1, double t2,
                       const std::optional<ChirpCoefficients>& chirp = std::nullopt);

struct RabiFitOptions {
  /// Lifetime; held fixed unless fit_t1.
  double t1 = 0.8;
  bool fit_t1 = false;
  /// Free overall scale multiplying the population (detection efficiency).
  bool fit_scale = false;
  std::optional<ChirpCoefficients> chirp;
  /// Starting values; 0 selects data-driven guesses.
  double omega_guess = 0.0;
  double t2_guess = 0.0;
  std::span<const double> sigma;
};

/// Parameters: omega, t2 [, t1] [, scale] plus the derived "t2_over_t1".
/// Throws std::invalid_argument when the data cover fewer than 2 Rabi periods.
FitResult fit_rabi(std::span<const double> t, std::span<const double> y, const RabiFitOptions& options);

struct BeatResult {
  bool found = false;
  double frequency_ghz = 0.0;
  /// Peak periodogram power over the median power.
  double power_ratio = 0.0;
  /// Oscillation amplitude relative to the exponential envelope.
  double relative_amplitude = 0.0;
  std::string message;
};

/// Dominant oscillation of the decay residual I / envelope - 1 (Hann
/// windowed periodogram with parabolic peak refinement). Reports none-found
/// when the peak is below 5x the median power or negligibly small.
BeatResult beat_frequency(std::span<const double> t, std::span<const double> intensity);
BeatResult beat_frequency(const Trajectory& trajectory, double t_from);

}  // namespace pulsedrf
