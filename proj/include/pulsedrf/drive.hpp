#pragma once

// Time-dependent Rabi amplitude Omega(t) for single pulses and periodic
// pulse trains.

#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pulsedrf {

enum class PulseShape { Rectangular, Gaussian, Lognormal, ChirpedFlat, Continuous };

/// |Omega(t)|^2 proportional to p0 + p1 x + p2 x^2, x = time since pulse start (ns).
struct ChirpCoefficients {
  double p0 = 1.0;
  double p1 = 0.0;
  double p2 = 0.0;
};

struct EnvelopeParameters {
  PulseShape shape = PulseShape::Gaussian;
  /// Intensity (Omega^2) FWHM for Gaussian and Lognormal; duration for
  /// Rectangular and ChirpedFlat. ns.
  double width = 0.1;
  /// Integral of Omega(t) over one pulse, rad.
  double area = std::numbers::pi;
  /// Pulse period in ns; infinity for a single pulse.
  double period = std::numeric_limits<double>::infinity();
  /// Bits select which periods fire, cycled: pulse k uses pattern[k mod size].
  std::string pattern = "1";
  /// Off-state intensity relative to the pulse peak (1e-3 is -30 dB).
  double extinction_floor = 1e-3;
  /// Start of pulse 0, ns.
  double delay = 0.0;
  ChirpCoefficients chirp;
  /// Constant Rabi amplitude for the Continuous shape, rad/ns.
  double cw_amplitude = 0.0;
};

/// Peak amplitude Omega_0 for which one isolated pulse integrates to
/// `params.area`. Throws std::invalid_argument for invalid or
/// non-normalizable envelopes.
double calibrate_amplitude(const EnvelopeParameters& params);

/// Calibrated, immutable drive envelope.
class DriveEnvelope {
 public:
  explicit DriveEnvelope(EnvelopeParameters params);

  /// Constant drive Omega(t) = omega; omega = 0 gives an undriven emitter.
  static DriveEnvelope continuous(double omega);

  const EnvelopeParameters& parameters() const { return params_; }
  PulseShape shape() const { return params_.shape; }
  double peak_amplitude() const { return amplitude_; }
  double floor_amplitude() const { return floor_amplitude_; }
  bool periodic() const;
  bool pulsed() const { return params_.shape != PulseShape::Continuous; }

  /// Omega(t) in rad/ns.
  double operator()(double t) const;

  /// Unit-peak amplitude profile of one pulse at time x after its start;
  /// zero outside support().
  double profile(double x) const;
  /// [begin, end) of one pulse relative to its start.
  std::pair<double, double> support() const { return support_; }
  /// Start time of pulse k.
  double pulse_start(long long k) const;
  bool fires(long long k) const;
  /// Time after which Omega(t) stays at its floor value; +inf for trains
  /// and continuous drive.
  double quiet_after() const;

 private:
  EnvelopeParameters params_;
  double amplitude_ = 0.0;
  double floor_amplitude_ = 0.0;
  std::pair<double, double> support_{0.0, 0.0};
  double chirp_peak_ = 1.0;
};

inline double envelope_at(const DriveEnvelope& env, double t) { return env(t); }

/// Amplitude standard deviation of a Gaussian pulse with intensity FWHM `width`.
double gaussian_amplitude_sigma(double width);

/// (m, s) of the lognormal intensity profile exp(-(ln x - m)^2 / (2 s^2)):
/// mode at width / 2 and intensity FWHM equal to `width`.
std::pair<double, double> lognormal_parameters(double width);

struct PulseSpectrum {
  std::vector<double> frequency_ghz;
  /// |FT Omega|^2 normalized to unit peak.
  std::vector<double> intensity;
  double fwhm_ghz = 0.0;
};

/// Power spectrum of a single pulse sampled on `frequency_ghz` (GHz).
/// Throws std::invalid_argument when the grid cannot resolve the FWHM.
PulseSpectrum pulse_spectrum(const DriveEnvelope& env, std::span<const double> frequency_ghz);

/// Full width at half maximum of a unit-peak sampled curve, by linear
/// interpolation of the half-maximum crossings.
double half_maximum_width(std::span<const double> x, std::span<const double> y);

std::string to_string(PulseShape shape);
PulseShape parse_pulse_shape(const std::string& name);

}  // namespace pulsedrf
