#include "pulsedrf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pulsedrf/format.hpp"

namespace pulsedrf {

VisibilityResult tpi_visibility(Measured g2_perp, Measured g2_par, std::optional<Measured> g2_hbt) {
  if (!(g2_perp.value > 0.0)) throw std::invalid_argument("G2_perp must be positive");
  auto visibility = [&](double par, double par_sigma, double& sigma) {
    const double v = (g2_perp.value - par) / g2_perp.value;
    // dv/dperp = par / perp^2, dv/dpar = -1 / perp
    const double a = par / (g2_perp.value * g2_perp.value) * g2_perp.sigma;
    const double b = par_sigma / g2_perp.value;
    sigma = std::sqrt(a * a + b * b);
    return v;
  };
  VisibilityResult out;
  out.raw = visibility(g2_par.value, g2_par.sigma, out.raw_sigma);
  if (g2_hbt) {
    double s = 0.0;
    const double par = g2_par.value - g2_hbt->value;
    const double par_sigma = std::hypot(g2_par.sigma, g2_hbt->sigma);
    out.corrected = visibility(par, par_sigma, s);
    out.corrected_sigma = s;
  }
  return out;
}

void EfficiencyChain::add(std::string name, double efficiency) {
  if (!(efficiency >= 0.0 && efficiency <= 1.0))
    throw std::invalid_argument("stage '" + name + "' efficiency must lie in [0, 1]");
  stages_.emplace_back(std::move(name), efficiency);
}

void EfficiencyChain::add(std::string name, double efficiency, int count) {
  if (count < 0) throw std::invalid_argument("stage count must be non-negative");
  for (int i = 0; i < count; ++i) add(name + "_" + std::to_string(i + 1), efficiency);
}

double EfficiencyChain::product() const {
  // Multiplying in sorted order makes the result independent of stage order.
  std::vector<double> v;
  v.reserve(stages_.size());
  for (const auto& s : stages_) v.push_back(s.second);
  std::sort(v.begin(), v.end());
  double p = 1.0;
  for (double e : v) p *= e;
  return p;
}

EfficiencyChain EfficiencyChain::reference_setup() {
  EfficiencyChain c;
  c.add("fiber_coupling", 0.314);
  c.add("polarizer", 0.43);
  c.add("beamsplitter_surface", 0.96, 4);
  c.add("detector", 0.30);
  return c;
}

EfficiencyReport efficiency_report(const EfficiencyChain& chain, double trigger_mhz, double detected_mhz,
                                   double g2_zero) {
  if (!(trigger_mhz > 0.0)) throw std::invalid_argument("trigger frequency must be positive");
  if (!(detected_mhz >= 0.0)) throw std::invalid_argument("detected rate must be non-negative");
  const double optics = chain.product();
  if (!(optics > 0.0)) throw std::invalid_argument("efficiency chain product is zero");
  EfficiencyReport r;
  r.trigger_mhz = trigger_mhz;
  r.detected_mhz = detected_mhz;
  r.g2_zero = g2_zero;
  r.single_photon_mhz = detected_mhz * (1.0 - 0.5 * g2_zero);
  r.overall_efficiency = detected_mhz / trigger_mhz;
  r.single_photon_efficiency = r.single_photon_mhz / trigger_mhz;
  r.optics_efficiency = optics;
  r.extraction_efficiency = r.overall_efficiency / optics;
  r.stages = chain.stages();
  return r;
}

double predicted_detected_rate(const EfficiencyChain& chain, double trigger_mhz, double extraction) {
  if (!(trigger_mhz > 0.0)) throw std::invalid_argument("trigger frequency must be positive");
  return trigger_mhz * extraction * chain.product();
}

std::string EfficiencyReport::to_csv() const {
  std::ostringstream out;
  out << "key,value\n";
  auto row = [&](const std::string& k, double v) { out << k << ',' << format_number(v) << '\n'; };
  for (const auto& [name, eff] : stages) row("stage_" + name, eff);
  row("optics_efficiency", optics_efficiency);
  row("trigger_mhz", trigger_mhz);
  row("detected_mhz", detected_mhz);
  row("g2_zero", g2_zero);
  row("single_photon_mhz", single_photon_mhz);
  row("overall_efficiency", overall_efficiency);
  row("single_photon_efficiency", single_photon_efficiency);
  row("extraction_efficiency", extraction_efficiency);
  return out.str();
}

}  // namespace pulsedrf
