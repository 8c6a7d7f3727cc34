#pragma once

// Two-photon interference visibility and detection-efficiency accounting.

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pulsedrf {

/// A value with its 1-sigma uncertainty.
struct Measured {
  double value = 0.0;
  double sigma = 0.0;
};

struct VisibilityResult {
  double raw = 0.0;
  double raw_sigma = 0.0;
  /// Present when an HBT G2(0) was supplied.
  std::optional<double> corrected;
  std::optional<double> corrected_sigma;
};

/// v = (G2_perp - G2_par) / G2_perp; the corrected value replaces G2_par by
/// G2_par - G2_hbt. First-order error propagation, inputs independent.
/// Throws std::invalid_argument when G2_perp <= 0.
VisibilityResult tpi_visibility(Measured g2_perp, Measured g2_par, std::optional<Measured> g2_hbt = std::nullopt);

/// Optics and detector stages between the first lens and the counter.
class EfficiencyChain {
 public:
  /// Throws std::invalid_argument when a stage lies outside [0, 1].
  void add(std::string name, double efficiency);
  /// `count` identical passes of one element (e.g. beamsplitter surfaces).
  void add(std::string name, double efficiency, int count);

  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }
  double product() const;

  /// Fiber 31.4%, polarizer 43%, 4 beamsplitter surfaces at 96%, SPAD 30%.
  static EfficiencyChain reference_setup();

 private:
  std::vector<std::pair<std::string, double>> stages_;
};

struct EfficiencyReport {
  double trigger_mhz = 0.0;
  double detected_mhz = 0.0;
  double g2_zero = 0.0;
  /// Detected rate x (1 - G2(0) / 2).
  double single_photon_mhz = 0.0;
  /// Detected counts per trigger.
  double overall_efficiency = 0.0;
  /// Single-photon counts per trigger.
  double single_photon_efficiency = 0.0;
  double optics_efficiency = 0.0;
  /// overall_efficiency / optics_efficiency.
  double extraction_efficiency = 0.0;
  std::vector<std::pair<std::string, double>> stages;

  /// key,value lines.
  std::string to_csv() const;
};

/// Throws std::invalid_argument when f <= 0, the rate is negative or the
/// chain product is 0.
EfficiencyReport efficiency_report(const EfficiencyChain& chain, double trigger_mhz, double detected_mhz,
                                   double g2_zero);

/// Detected rate expected from an extraction efficiency at trigger rate f
/// with no detector dead time: f x extraction x optics.
double predicted_detected_rate(const EfficiencyChain& chain, double trigger_mhz, double extraction);

}  // namespace pulsedrf
