#pragma once

// Configuration-driven experiments: scenario schema, parameter sweeps and the
// artifact writer behind the command-line front end.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pulsedrf/config.hpp"
#include "pulsedrf/correlation.hpp"
#include "pulsedrf/drive.hpp"
#include "pulsedrf/emitter.hpp"
#include "pulsedrf/metrics.hpp"

namespace pulsedrf {

enum class ScenarioKind { Decay, RabiScan, HBT, WidthSweep, FrequencySweep, Visibility, Spectrum };
enum class SweepAxis { Width, Frequency, Power, T1 };

std::string to_string(ScenarioKind kind);
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct EmitterSettings {
  EmitterKind kind = EmitterKind::TwoLevel;
  double t1 = 0.8;
  double t2 = 1.6;
  double detuning = 0.0;
  /// rad/ns.
  double splitting = two_pi * 3.3;
  double theta = std::numbers::pi / 4;
  double phi = std::numbers::pi / 4;

  EmitterModel build() const;
};

struct NumericsSettings {
  /// 0 selects the default step.
  double step = 0.0;
  std::size_t t1_stride = 4;
  std::size_t n_side = 6;
  std::size_t warmup_periods = 5;
  double decay_tail = 0.0;
  /// Trajectory end for Decay and RabiScan; 0 selects an automatic value.
  double t_end = 0.0;
  std::size_t record_every = 1;
  /// Detector jitter for HBT output; 0 disables the convolution.
  double irf_fwhm = 0.0;
  /// Quantum-jump trajectories for HBT cross-checks; 0 disables.
  std::size_t trajectories = 0;
  /// Relative Gaussian noise added to synthetic RabiScan data.
  double noise = 0.0;
};

struct GridSettings {
  std::vector<double> widths_ns;
  std::vector<double> frequencies_mhz;
  std::vector<double> powers;
  std::vector<double> t1_ns;
  double spectrum_min_ghz = -10.0;
  double spectrum_max_ghz = 10.0;
  std::size_t spectrum_points = 2001;
};

struct DataSettings {
  std::filesystem::path histogram;
  double acquisition_s = 0.0;
  std::optional<Measured> g2_perp;
  std::optional<Measured> g2_par;
  std::optional<Measured> g2_hbt;
  /// Detected photons per emitted photon (per trigger for a pi pulse).
  double overall_efficiency = 0.0036;
  std::optional<double> trigger_mhz;
  std::optional<double> detected_mhz;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::HBT;
  std::string name = "scenario";
  std::uint64_t seed = 1;
  /// 0 selects the default thread count.
  unsigned threads = 0;
  EmitterSettings emitter;
  EnvelopeParameters envelope;
  NumericsSettings numerics;
  GridSettings grids;
  DataSettings data;
  std::filesystem::path output_dir;
  std::string source_path;
  std::string source_text;
};

/// Validates against the schema; throws ConfigError with the offending line.
Scenario parse_scenario(const Config& config);
Scenario load_scenario(const std::string& path);

/// One sweep point: a pulsed correlation evaluated at the swept value.
struct SweepRow {
  double value = 0.0;
  bool ok = false;
  double g2_zero = 0.0;
  double g2_center = 0.0;
  bool quasi_cw = false;
  /// Detected-mode photons emitted per firing pulse.
  double photons_per_pulse = 0.0;
  std::string message;
};

/// Applies a swept value to a copy of the base scenario: width (ns),
/// frequency (MHz, period = 1000 / f), power (area = pi sqrt(P)) or T1 (ns,
/// with T2 / T1 kept).
Scenario apply_sweep_value(const Scenario& base, SweepAxis axis, double value);

/// The correlation underlying every sweep row.
SweepRow evaluate_point(const Scenario& scenario, double value);

/// Rows ordered as `values`; a point failing a guard is marked failed and
/// the sweep continues.
std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> values, const Scenario& base, unsigned threads);

struct RunOptions {
  std::filesystem::path out_dir;
  unsigned threads = 1;
};

struct RunReport {
  std::vector<std::filesystem::path> files;
  std::vector<std::pair<std::string, std::string>> summary;
  double runtime_s = 0.0;
};

/// Executes the scenario and writes its CSV files, manifest.json and
/// summary.txt. Numerical guard failures propagate as NumericalGuardError.
RunReport run_scenario(const Scenario& scenario, const RunOptions& options);

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace pulsedrf
