#pragma once

// Two-time intensity correlations of the emitted field: regression-theorem
// integration, pulsed peak normalization, detector-jitter convolution,
// histogram ingestion and an independent quantum-jump Monte Carlo estimate.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pulsedrf/drive.hpp"
#include "pulsedrf/emitter.hpp"
#include "pulsedrf/integrator.hpp"

namespace pulsedrf {

/// One integrated correlation peak at delay tau_n = n T.
struct PeakEntry {
  int n = 0;
  double tau = 0.0;
  double area = 0.0;
  /// area / mean side-peak area.
  double g2 = 0.0;
  /// Poisson-propagated uncertainty of g2 (histograms only; 0 otherwise).
  double sigma = 0.0;
};

struct PeakTable {
  std::vector<PeakEntry> entries;
  double mean_side_area = 0.0;
  /// Mean of the side-peak maxima; normalizes the continuous g2(tau).
  double mean_side_maximum = 0.0;
  /// Inter-peak minimum above 20% of the peak maximum.
  bool quasi_cw = false;

  const PeakEntry& at(int n) const;
  double g2_zero() const { return at(0).g2; }
};

struct CorrelationRecord {
  /// Symmetric uniform delay grid containing tau = 0, ns.
  std::vector<double> tau;
  /// Unnormalized intensity correlation integrated over one drive cycle.
  std::vector<double> raw;
  /// raw / mean side-peak maximum.
  std::vector<double> g2;
  PeakTable peaks;
  double period = std::numeric_limits<double>::infinity();
  std::size_t n_side = 0;
  /// Detector-jitter FWHM applied, ns; 0 when unconvolved.
  double irf_fwhm = 0.0;
  /// Integration step and t1 spacing used.
  double step = 0.0;
  double t1_spacing = 0.0;
  /// Integral of Tr[D^dagger D rho] over the t1 window and the number of
  /// pulses fired inside it.
  double intensity_integral = 0.0;
  std::size_t pulses_in_window = 1;

  double g2_zero() const { return peaks.g2_zero(); }
  std::size_t zero_index() const;
};

struct HistogramData {
  std::vector<double> bin_center;
  std::vector<std::int64_t> counts;
  double bin_width = 0.0;
  /// Acquisition time in s (informational).
  double acquisition_time = 0.0;

  /// Validates non-negative counts and uniform bins; throws
  /// std::invalid_argument otherwise.
  void validate() const;
};

/// Reads CSV rows `bin_center_ns,counts` (header optional).
HistogramData read_histogram_csv(const std::filesystem::path& path, double acquisition_time = 0.0);

struct CorrelationOptions {
  /// Integration step h, ns; 0 selects default_step().
  double step = 0.0;
  /// t1 (and tau) spacing in units of h.
  std::size_t t1_stride = 4;
  std::size_t n_side = 6;
  std::size_t warmup_periods = 5;
  /// Single pulse: emission window after the pulse, ns; 0 selects 30 T1.
  double decay_tail = 0.0;
  unsigned threads = 1;
  /// Explicit state at t = 0; the warmup is skipped when set.
  std::optional<DensityMatrix> initial_state;
};

/// Regression-theorem correlation of the detected field.
///
/// For every t1 on a grid spanning one steady drive cycle (or the whole
/// emission window of a single pulse) the state is collapsed to
/// D rho(t1) D^dagger, propagated by tau under the same master equation and
/// Tr[D^dagger D rho] is accumulated as a function of tau. Peaks are
/// normalized by normalize_pulsed(); a single pulse is normalized by the
/// uncorrelated product (integral of the intensity)^2.
///
/// Throws std::invalid_argument for a continuous drive or empty grids and
/// NumericalGuardError when the t1 spacing exceeds w / 10.
CorrelationRecord two_time_correlation(const EmitterModel& model, const DriveEnvelope& env,
                                       const CorrelationOptions& options = {});

/// Wraps sampled (tau, raw) data, e.g. an external or synthetic correlation,
/// as a record normalized like a simulated one. An infinite period treats the
/// data as a single peak normalized by its own maximum.
CorrelationRecord record_from_samples(std::vector<double> tau, std::vector<double> raw, double period,
                                      std::size_t n_side);

/// Integrates each peak over [nT - T/2, nT + T/2] and divides by the mean of
/// the n_side peaks on each side of zero delay.
PeakTable normalize_pulsed(std::span<const double> tau, std::span<const double> raw, double period,
                           std::size_t n_side);
PeakTable normalize_pulsed(const CorrelationRecord& record, double period, std::size_t n_side);
/// Histogram variant with Poisson uncertainties from the raw counts.
PeakTable normalize_pulsed(const HistogramData& histogram, double period, std::size_t n_side);

/// Normalized g2 at exactly tau = 0. Requires an unconvolved record.
double continuous_g2_center(const CorrelationRecord& record);

/// Gaussian convolution along tau; peak areas are preserved. Throws
/// NumericalGuardError when the tau spacing exceeds fwhm / 10.
CorrelationRecord convolve_irf(const CorrelationRecord& record, double fwhm);

/// Closed-form resonant two-level g2(tau) without pure dephasing; the
/// overdamped regime uses the hyperbolic continuation.
double cw_g2_analytic(double omega, double t1, double tau);

struct CwCorrelation {
  std::vector<double> tau;
  std::vector<double> g2;
  double steady_intensity = 0.0;
};

/// Continuous-drive g2(tau) from the steady state via the regression theorem
/// with RK4 propagation.
CwCorrelation cw_correlation(const EmitterModel& model, double omega, double tau_max, double h);

/// Steady state of the master equation for a constant drive.
Operator steady_state(const EmitterModel& model, double omega);

struct JumpOracleOptions {
  double step = 0.0;
  unsigned threads = 1;
  /// Single pulse: simulated window after the pulse, ns; 0 selects 30 T1.
  double decay_tail = 0.0;
};

struct JumpOracleResult {
  std::size_t trajectories = 0;
  double mean_photons = 0.0;
  double g2_zero = 0.0;
  double sigma = 0.0;
  /// False when no photon was detected and g2(0) is undefined.
  bool defined = false;
  std::string flag;
  /// Photon-number histogram (index = photons per cycle).
  std::vector<std::size_t> photon_counts;
};

/// Quantum-jump unraveling of the same master equation over one drive cycle
/// starting from the ground state; g2(0) = <n(n-1)> / <n>^2 of the detected
/// photon number, with a delta-method standard error. Deterministic for a
/// given seed regardless of thread count.
JumpOracleResult jump_oracle(const EmitterModel& model, const DriveEnvelope& env,
                             std::size_t trajectories, std::uint64_t seed,
                             const JumpOracleOptions& options = {});

}  // namespace pulsedrf
