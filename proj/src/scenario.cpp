#include "pulsedrf/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <random>
#include <sstream>

#include <Eigen/Core>
#include <json.hpp>
#include <openssl/evp.h>

#include "pulsedrf/fitting.hpp"
#include "pulsedrf/format.hpp"
#include "pulsedrf/integrator.hpp"
#include "pulsedrf/parallel.hpp"

#ifndef PULSEDRF_VERSION
#define PULSEDRF_VERSION "0.0.0"
#endif

namespace pulsedrf {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"scenario", {"kind", "name", "seed", "threads"}},
      {"emitter", {"model", "t1_ns", "t2_ns", "t2_over_t1", "detuning_rad_ns", "splitting_ghz", "theta_rad", "phi_rad"}},
      {"envelope",
       {"shape", "width_ns", "area_pi", "period_ns", "frequency_mhz", "pattern", "extinction_floor", "delay_ns",
        "chirp_p0", "chirp_p1", "chirp_p2", "rabi_rad_ns"}},
      {"numerics",
       {"step_ns", "t1_stride", "n_side", "warmup_periods", "decay_tail_ns", "t_end_ns", "record_every",
        "irf_fwhm_ns", "trajectories", "noise"}},
      {"grids",
       {"widths_ns", "frequencies_mhz", "powers", "t1_ns", "spectrum_min_ghz", "spectrum_max_ghz",
        "spectrum_points"}},
      {"data",
       {"histogram", "acquisition_s", "g2_perp", "g2_perp_sigma", "g2_par", "g2_par_sigma", "g2_hbt",
        "g2_hbt_sigma", "overall_efficiency", "trigger_mhz", "detected_mhz"}},
      {"output", {"dir"}},
  };
  return s;
}

ScenarioKind parse_kind(const Config& c) {
  const auto t = c.text("scenario", "kind");
  if (!t) c.fail("scenario", "kind", "missing required key");
  for (auto k : {ScenarioKind::Decay, ScenarioKind::RabiScan, ScenarioKind::HBT, ScenarioKind::WidthSweep,
                 ScenarioKind::FrequencySweep, ScenarioKind::Visibility, ScenarioKind::Spectrum})
    if (to_string(k) == *t) return k;
  c.fail("scenario", "kind",
         "unknown kind '" + *t + "' (Decay, RabiScan, HBT, WidthSweep, FrequencySweep, Visibility, Spectrum)");
}

double positive(const Config& c, const std::string& section, const std::string& key, double fallback) {
  const auto v = c.number(section, key);
  if (!v) return fallback;
  if (!(*v > 0.0) || !std::isfinite(*v)) c.fail(section, key, "must be positive and finite");
  return *v;
}

double non_negative(const Config& c, const std::string& section, const std::string& key, double fallback) {
  const auto v = c.number(section, key);
  if (!v) return fallback;
  if (!(*v >= 0.0) || !std::isfinite(*v)) c.fail(section, key, "must be non-negative and finite");
  return *v;
}

std::size_t count(const Config& c, const std::string& section, const std::string& key, std::size_t fallback,
                  long long minimum) {
  const auto v = c.integer(section, key);
  if (!v) return fallback;
  if (*v < minimum) c.fail(section, key, "must be >= " + std::to_string(minimum));
  return static_cast<std::size_t>(*v);
}

std::vector<double> grid(const Config& c, const std::string& key, bool allow_zero) {
  const auto v = c.numbers("grids", key);
  if (!v) return {};
  if (v->empty()) c.fail("grids", key, "grid must not be empty");
  for (double x : *v)
    if (!(allow_zero ? x >= 0.0 : x > 0.0) || !std::isfinite(x))
      c.fail("grids", key, allow_zero ? "values must be non-negative" : "values must be positive");
  return *v;
}

std::optional<Measured> measured(const Config& c, const std::string& key) {
  const auto v = c.number("data", key);
  if (!v) {
    if (c.has("data", key + "_sigma")) c.fail("data", key + "_sigma", "given without '" + key + "'");
    return std::nullopt;
  }
  return Measured{*v, non_negative(c, "data", key + "_sigma", 0.0)};
}

// Key used to anchor a grid error: the key when present, else the section.
[[noreturn]] void missing_grid(const Config& c, const std::string& key, const std::string& why) {
  if (c.has("grids", key)) c.fail("grids", key, why);
  if (c.has_section("grids")) c.fail("grids", "", "missing '" + key + "': " + why);
  throw ConfigError(c.source(), c.line_of("scenario", "kind"), "missing [grids] " + key + ": " + why);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  std::string str() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << '\n';
    }
    return out.str();
  }
};

std::string num(double v) { return format_number(v); }
std::string num(std::size_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void write(const std::string& name, const std::string& body) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
    if (!out) throw std::runtime_error("failed writing " + path.string());
    files_.push_back(path);
    hashes_.push_back(sha256_hex(body));
  }
  void write(const std::string& name, const Table& t) { write(name, t.str()); }

  const std::vector<std::filesystem::path>& files() const { return files_; }
  const std::vector<std::string>& hashes() const { return hashes_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
  std::vector<std::string> hashes_;
};

using Summary = std::vector<std::pair<std::string, std::string>>;

Table fit_table(const FitResult& fit) {
  Table t{{"parameter", "value", "sigma"}, {}};
  for (std::size_t i = 0; i < fit.names.size(); ++i)
    t.add({fit.names[i], num(fit.values[i]), fit.converged ? num(fit.sigmas[i]) : "nan"});
  t.add({"rss", num(fit.rss), ""});
  t.add({"converged", fit.converged ? "1" : "0", ""});
  t.add({"iterations", num(fit.iterations), ""});
  return t;
}

Table peak_table(const PeakTable& p) {
  Table t{{"n", "tau_ns", "area", "g2", "sigma"}, {}};
  for (const auto& e : p.entries) t.add({num(e.n), num(e.tau), num(e.area), num(e.g2), num(e.sigma)});
  return t;
}

Table record_table(const CorrelationRecord& r) {
  Table t{{"tau_ns", "raw", "g2"}, {}};
  for (std::size_t i = 0; i < r.tau.size(); ++i) t.add({num(r.tau[i]), num(r.raw[i]), num(r.g2[i])});
  return t;
}

CorrelationOptions correlation_options(const Scenario& s, unsigned threads) {
  CorrelationOptions o;
  o.step = s.numerics.step;
  o.t1_stride = s.numerics.t1_stride;
  o.n_side = s.numerics.n_side;
  o.warmup_periods = s.numerics.warmup_periods;
  o.decay_tail = s.numerics.decay_tail;
  o.threads = threads;
  return o;
}

EnvelopeParameters single_pulse(EnvelopeParameters p) {
  p.period = std::numeric_limits<double>::infinity();
  p.pattern = "1";
  return p;
}

double photons_per_pulse(const EmitterModel& m, const CorrelationRecord& r) {
  if (r.pulses_in_window == 0) return 0.0;
  return m.rates()(0, 1) * r.intensity_integral / static_cast<double>(r.pulses_in_window);
}

void run_decay(const Scenario& s, Writer& w, Summary& sum) {
  const EmitterModel model = s.emitter.build();
  const DriveEnvelope env(s.envelope);
  const double quiet = env.quiet_after();
  double t_end = s.numerics.t_end;
  if (!(t_end > 0.0)) {
    if (std::isfinite(quiet) && quiet > 0.0) t_end = quiet + 10.0 * model.t1();
    else if (env.periodic()) t_end = 3.0 * s.envelope.period;
    else t_end = 10.0 * model.t1();
  }
  const double h = s.numerics.step > 0.0 ? s.numerics.step : default_step(model, env);
  EvolveOptions eo;
  eo.record_every = s.numerics.record_every;
  const Trajectory traj = evolve(model, env, DensityMatrix::pure(model.dimension(), 0), 0.0, t_end, h, eo);

  Table t{{"time_ns", "intensity"}, {}};
  for (Eigen::Index k = 0; k < model.dimension(); ++k) t.header.push_back("rho_" + std::to_string(k) + std::to_string(k));
  for (std::size_t i = 0; i < traj.size(); ++i) {
    std::vector<std::string> row = {num(traj.times[i]), num(traj.intensity[i])};
    for (Eigen::Index k = 0; k < model.dimension(); ++k) row.push_back(num(traj.states[i](k, k).real()));
    t.add(std::move(row));
  }
  w.write("trajectory.csv", t);
  sum.emplace_back("step_ns", num(traj.step));
  sum.emplace_back("trace_drift", num(traj.trace_drift));

  const double t_from = std::isfinite(quiet) && quiet > 0.0 ? quiet : 0.0;
  if (!env.periodic() && env.floor_amplitude() == 0.0) {
    const FitResult fit = fit_exponential(traj, t_from);
    w.write("fit.csv", fit_table(fit));
    sum.emplace_back("fit_t1_ns", num(fit.value("t1")));
    sum.emplace_back("fit_converged", fit.converged ? "yes" : "no");
    if (model.kind() == EmitterKind::VType) {
      const BeatResult beat = beat_frequency(traj, t_from);
      Table b{{"key", "value"}, {}};
      b.add({"found", beat.found ? "1" : "0"});
      b.add({"frequency_ghz", num(beat.frequency_ghz)});
      b.add({"power_ratio", num(beat.power_ratio)});
      b.add({"relative_amplitude", num(beat.relative_amplitude)});
      w.write("beats.csv", b);
      sum.emplace_back("beat_frequency_ghz", beat.found ? num(beat.frequency_ghz) : "none found");
    }
  } else {
    sum.emplace_back("fit", "skipped (drive does not switch off)");
  }
}

void run_rabi(const Scenario& s, unsigned threads, Writer& w, Summary& sum) {
  const EmitterModel model = s.emitter.build();
  const DriveEnvelope env(single_pulse(s.envelope));
  const auto [s0, s1] = env.support();
  const double t0 = s.envelope.delay + s0;
  const double t_end = s.numerics.t_end > 0.0 ? s.numerics.t_end : s.envelope.delay + s1;
  const double h = s.numerics.step > 0.0 ? s.numerics.step : default_step(model, env);
  EvolveOptions eo;
  eo.record_every = s.numerics.record_every;
  const Trajectory traj = evolve(model, env, DensityMatrix::pure(model.dimension(), 0), 0.0, t_end, h, eo);

  std::vector<double> t, pop;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (traj.times[i] < t0 - 1e-12) continue;
    t.push_back(traj.times[i] - t0);
    pop.push_back(traj.states[i](1, 1).real());
  }
  std::vector<double> data = pop;
  if (s.numerics.noise > 0.0) {
    const double scale = s.numerics.noise * *std::max_element(pop.begin(), pop.end());
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> noise(0.0, scale);
    for (double& v : data) v += noise(rng);
  }
  Table tt{{"time_ns", "rho_ee", "data"}, {}};
  for (std::size_t i = 0; i < t.size(); ++i) tt.add({num(t[i]), num(pop[i]), num(data[i])});
  w.write("rabi_time.csv", tt);

  RabiFitOptions ro;
  ro.t1 = model.t1();
  if (s.envelope.shape == PulseShape::ChirpedFlat) ro.chirp = s.envelope.chirp;
  try {
    const FitResult fit = fit_rabi(t, data, ro);
    w.write("rabi_fit.csv", fit_table(fit));
    sum.emplace_back("fit_omega_rad_ns", num(fit.value("omega")));
    sum.emplace_back("fit_t2_over_t1", num(fit.value("t2_over_t1")));
    sum.emplace_back("fit_converged", fit.converged ? "yes" : "no");
  } catch (const std::invalid_argument& e) {
    sum.emplace_back("fit", std::string("skipped: ") + e.what());
  }

  if (!s.grids.powers.empty()) {
    std::vector<double> after(s.grids.powers.size());
    parallel_for(after.size(), threads, [&](std::size_t i) {
      EnvelopeParameters p = single_pulse(s.envelope);
      p.area = std::numbers::pi * std::sqrt(s.grids.powers[i]);
      const DriveEnvelope e(p);
      const double end = p.delay + e.support().second;
      const double hp = s.numerics.step > 0.0 ? s.numerics.step : default_step(model, e);
      after[i] = evolve_final(model, e, DensityMatrix::pure(model.dimension(), 0).entries(), 0.0, end, hp)(1, 1).real();
    });
    Table pt{{"power", "area_pi", "rho_ee_after_pulse"}, {}};
    for (std::size_t i = 0; i < after.size(); ++i)
      pt.add({num(s.grids.powers[i]), num(std::sqrt(s.grids.powers[i])), num(after[i])});
    w.write("rabi_power.csv", pt);
  }
}

void run_hbt(const Scenario& s, unsigned threads, Writer& w, Summary& sum) {
  const EmitterModel model = s.emitter.build();
  const DriveEnvelope env(s.envelope);
  const CorrelationRecord rec = two_time_correlation(model, env, correlation_options(s, threads));
  w.write("g2.csv", record_table(rec));
  w.write("peaks.csv", peak_table(rec.peaks));
  sum.emplace_back("G2_0", num(rec.g2_zero()));
  sum.emplace_back("g2_center", num(continuous_g2_center(rec)));
  sum.emplace_back("quasi_cw", rec.peaks.quasi_cw ? "yes" : "no");
  sum.emplace_back("photons_per_pulse", num(photons_per_pulse(model, rec)));
  sum.emplace_back("step_ns", num(rec.step));
  sum.emplace_back("t1_spacing_ns", num(rec.t1_spacing));

  if (s.numerics.irf_fwhm > 0.0) {
    const CorrelationRecord conv = convolve_irf(rec, s.numerics.irf_fwhm);
    w.write("g2_irf.csv", record_table(conv));
    w.write("peaks_irf.csv", peak_table(conv.peaks));
    sum.emplace_back("g2_center_irf", num(conv.g2[conv.zero_index()]));
    sum.emplace_back("G2_0_irf", num(conv.g2_zero()));
  }
  if (!s.data.histogram.empty()) {
    if (!env.periodic()) throw std::invalid_argument("histogram analysis needs a periodic envelope");
    const HistogramData hist = read_histogram_csv(s.data.histogram, s.data.acquisition_s);
    const PeakTable hp = normalize_pulsed(hist, s.envelope.period, s.numerics.n_side);
    w.write("histogram_peaks.csv", peak_table(hp));
    sum.emplace_back("histogram_G2_0", num(hp.g2_zero()) + " +- " + num(hp.at(0).sigma));
  }
  if (s.numerics.trajectories > 0) {
    JumpOracleOptions jo;
    jo.step = s.numerics.step;
    jo.threads = threads;
    jo.decay_tail = s.numerics.decay_tail;
    const JumpOracleResult j = jump_oracle(model, env, s.numerics.trajectories, s.seed, jo);
    Table t{{"key", "value"}, {}};
    t.add({"trajectories", num(j.trajectories)});
    t.add({"mean_photons", num(j.mean_photons)});
    t.add({"g2_zero", num(j.g2_zero)});
    t.add({"sigma", num(j.sigma)});
    t.add({"defined", j.defined ? "1" : "0"});
    for (std::size_t n = 0; n < j.photon_counts.size(); ++n) t.add({"photons_" + std::to_string(n), num(j.photon_counts[n])});
    w.write("oracle.csv", t);
    sum.emplace_back("oracle_G2_0", j.defined ? num(j.g2_zero) + " +- " + num(j.sigma) : j.flag);
  }
}

Table sweep_table(const std::string& axis_column, const std::vector<SweepRow>& rows, const std::string& prefix_name = "",
                  double prefix = 0.0) {
  Table t{{}, {}};
  if (!prefix_name.empty()) t.header.push_back(prefix_name);
  for (const char* h : {"status", "g2_zero", "g2_center", "quasi_cw", "photons_per_pulse", "message"}) t.header.push_back(h);
  t.header.insert(t.header.begin() + (prefix_name.empty() ? 0 : 1), axis_column);
  for (const auto& r : rows) {
    std::vector<std::string> row;
    if (!prefix_name.empty()) row.push_back(num(prefix));
    row.push_back(num(r.value));
    row.push_back(r.ok ? "ok" : "failed");
    row.push_back(r.ok ? num(r.g2_zero) : "nan");
    row.push_back(r.ok ? num(r.g2_center) : "nan");
    row.push_back(r.ok ? (r.quasi_cw ? "1" : "0") : "");
    row.push_back(r.ok ? num(r.photons_per_pulse) : "nan");
    std::string msg = r.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    row.push_back(msg);
    t.add(std::move(row));
  }
  return t;
}

void run_width_sweep(const Scenario& s, unsigned threads, Writer& w, Summary& sum) {
  const std::vector<double> t1s = s.grids.t1_ns.empty() ? std::vector<double>{s.emitter.t1} : s.grids.t1_ns;
  Table all;
  for (double t1 : t1s) {
    const Scenario base = apply_sweep_value(s, SweepAxis::T1, t1);
    const auto rows = sweep(SweepAxis::Width, s.grids.widths_ns, base, threads);
    Table part = sweep_table("width_ns", rows, "t1_ns", t1);
    if (all.header.empty()) all.header = part.header;
    for (auto& r : part.rows) all.rows.push_back(std::move(r));

    // Linear trend of G2(0) against width.
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& r : rows) {
      if (!r.ok) continue;
      n += 1;
      sx += r.value;
      sy += r.g2_zero;
      sxx += r.value * r.value;
      sxy += r.value * r.g2_zero;
    }
    const std::string key = "t1_" + num(t1) + "_ns";
    if (n >= 2) {
      const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
      sum.emplace_back(key + "_slope_per_ns", num(slope));
      sum.emplace_back(key + "_intercept", num((sy - slope * sx) / n));
    }
    const auto failed = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.ok; });
    sum.emplace_back(key + "_failed_points", std::to_string(failed));
  }
  w.write("width_sweep.csv", all);
}

void run_frequency_sweep(const Scenario& s, unsigned threads, Writer& w, Summary& sum) {
  const auto rows = sweep(SweepAxis::Frequency, s.grids.frequencies_mhz, s, threads);
  Table t = sweep_table("frequency_mhz", rows);
  t.header.insert(t.header.end() - 1, {"detected_mhz", "single_photon_mhz"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double detected = r.value * s.data.overall_efficiency * r.photons_per_pulse;
    t.rows[i].insert(t.rows[i].end() - 1, {r.ok ? num(detected) : "nan", r.ok ? num(detected * (1.0 - 0.5 * r.g2_zero)) : "nan"});
  }
  w.write("frequency_sweep.csv", t);

  const double trigger = s.data.trigger_mhz.value_or(*std::max_element(s.grids.frequencies_mhz.begin(), s.grids.frequencies_mhz.end()));
  const auto nearest = std::min_element(rows.begin(), rows.end(), [&](const SweepRow& a, const SweepRow& b) {
    return std::abs(a.value - trigger) < std::abs(b.value - trigger);
  });
  const double g2 = nearest->ok ? nearest->g2_zero : 0.0;
  const double detected = s.data.detected_mhz.value_or(trigger * s.data.overall_efficiency);
  const EfficiencyReport report = efficiency_report(EfficiencyChain::reference_setup(), trigger, detected, g2);
  w.write("efficiency.csv", report.to_csv());
  sum.emplace_back("optics_efficiency", num(report.optics_efficiency));
  sum.emplace_back("extraction_efficiency", num(report.extraction_efficiency));
  sum.emplace_back("single_photon_mhz_at_" + num(trigger) + "_mhz", num(report.single_photon_mhz));
  const auto quasi = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok && r.quasi_cw; });
  sum.emplace_back("quasi_cw_points", std::to_string(quasi));
}

void run_visibility(const Scenario& s, Writer& w, Summary& sum) {
  const VisibilityResult v = tpi_visibility(*s.data.g2_perp, *s.data.g2_par, s.data.g2_hbt);
  Table t{{"key", "value"}, {}};
  t.add({"raw", num(v.raw)});
  t.add({"raw_sigma", num(v.raw_sigma)});
  if (v.corrected) {
    t.add({"corrected", num(*v.corrected)});
    t.add({"corrected_sigma", num(*v.corrected_sigma)});
  }
  w.write("visibility.csv", t);
  sum.emplace_back("raw_visibility", num(v.raw) + " +- " + num(v.raw_sigma));
  if (v.corrected) sum.emplace_back("corrected_visibility", num(*v.corrected) + " +- " + num(*v.corrected_sigma));
}

void run_spectrum(const Scenario& s, Writer& w, Summary& sum) {
  const DriveEnvelope env(single_pulse(s.envelope));
  std::vector<double> f(s.grids.spectrum_points);
  const double a = s.grids.spectrum_min_ghz, b = s.grids.spectrum_max_ghz;
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(f.size() - 1);
  const PulseSpectrum spec = pulse_spectrum(env, f);
  Table t{{"frequency_ghz", "intensity"}, {}};
  for (std::size_t i = 0; i < f.size(); ++i) t.add({num(spec.frequency_ghz[i]), num(spec.intensity[i])});
  w.write("spectrum.csv", t);
  sum.emplace_back("spectral_fwhm_ghz", num(spec.fwhm_ghz));
  sum.emplace_back("time_bandwidth_product", num(spec.fwhm_ghz * s.envelope.width));
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Decay: return "Decay";
    case ScenarioKind::RabiScan: return "RabiScan";
    case ScenarioKind::HBT: return "HBT";
    case ScenarioKind::WidthSweep: return "WidthSweep";
    case ScenarioKind::FrequencySweep: return "FrequencySweep";
    case ScenarioKind::Visibility: return "Visibility";
    case ScenarioKind::Spectrum: return "Spectrum";
  }
  return "?";
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Width: return "width";
    case SweepAxis::Frequency: return "frequency";
    case SweepAxis::Power: return "power";
    case SweepAxis::T1: return "T1";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (auto a : {SweepAxis::Width, SweepAxis::Frequency, SweepAxis::Power, SweepAxis::T1})
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (width, frequency, power, T1)");
}

EmitterModel EmitterSettings::build() const {
  if (kind == EmitterKind::TwoLevel) return EmitterModel::two_level(t1, t2, detuning);
  return EmitterModel::v_type(t1, t2, splitting, theta, phi, detuning);
}

Scenario parse_scenario(const Config& c) {
  c.reject_unknown(schema());
  Scenario s;
  s.source_path = c.source();
  s.kind = parse_kind(c);
  s.name = c.text("scenario", "name").value_or(to_string(s.kind));
  if (s.name.empty()) c.fail("scenario", "name", "must not be empty");
  if (const auto seed = c.integer("scenario", "seed")) {
    if (*seed < 0) c.fail("scenario", "seed", "must be non-negative");
    s.seed = static_cast<std::uint64_t>(*seed);
  }
  s.threads = static_cast<unsigned>(count(c, "scenario", "threads", 0, 0));

  // [emitter]
  if (const auto m = c.text("emitter", "model")) {
    if (*m == "two_level") s.emitter.kind = EmitterKind::TwoLevel;
    else if (*m == "v_type") s.emitter.kind = EmitterKind::VType;
    else c.fail("emitter", "model", "expected two_level or v_type, got '" + *m + "'");
  }
  s.emitter.t1 = positive(c, "emitter", "t1_ns", s.emitter.t1);
  if (c.has("emitter", "t2_ns") && c.has("emitter", "t2_over_t1"))
    c.fail("emitter", "t2_over_t1", "give either t2_ns or t2_over_t1, not both");
  s.emitter.t2 = positive(c, "emitter", "t2_ns", 2.0 * s.emitter.t1);
  if (c.has("emitter", "t2_over_t1")) s.emitter.t2 = s.emitter.t1 * positive(c, "emitter", "t2_over_t1", 2.0);
  s.emitter.detuning = c.number("emitter", "detuning_rad_ns").value_or(0.0);
  s.emitter.splitting = two_pi * c.number("emitter", "splitting_ghz").value_or(3.3);
  s.emitter.theta = c.number("emitter", "theta_rad").value_or(s.emitter.theta);
  s.emitter.phi = c.number("emitter", "phi_rad").value_or(s.emitter.phi);
  try {
    (void)s.emitter.build();
  } catch (const std::invalid_argument& e) {
    c.fail("emitter", c.has("emitter", "t2_ns") ? "t2_ns" : "", e.what());
  }

  // [envelope]
  EnvelopeParameters& p = s.envelope;
  if (const auto shape = c.text("envelope", "shape")) {
    try {
      p.shape = parse_pulse_shape(*shape);
    } catch (const std::invalid_argument& e) {
      c.fail("envelope", "shape", e.what());
    }
  }
  p.width = positive(c, "envelope", "width_ns", p.width);
  if (const auto a = c.number("envelope", "area_pi")) {
    if (!(*a >= 0.0)) c.fail("envelope", "area_pi", "must be non-negative");
    p.area = *a * std::numbers::pi;
  }
  if (c.has("envelope", "period_ns") && c.has("envelope", "frequency_mhz"))
    c.fail("envelope", "frequency_mhz", "give either period_ns or frequency_mhz, not both");
  if (c.has("envelope", "period_ns")) p.period = positive(c, "envelope", "period_ns", 0.0);
  if (c.has("envelope", "frequency_mhz")) p.period = 1000.0 / positive(c, "envelope", "frequency_mhz", 0.0);
  if (const auto pat = c.text("envelope", "pattern")) {
    if (pat->empty() || pat->find_first_not_of("01") != std::string::npos)
      c.fail("envelope", "pattern", "expected a non-empty string of 0 and 1");
    p.pattern = *pat;
  }
  if (const auto f = c.number("envelope", "extinction_floor")) {
    if (!(*f >= 0.0 && *f < 1.0)) c.fail("envelope", "extinction_floor", "must lie in [0, 1)");
    p.extinction_floor = *f;
  }
  p.delay = non_negative(c, "envelope", "delay_ns", 0.0);
  p.chirp.p0 = c.number("envelope", "chirp_p0").value_or(1.0);
  p.chirp.p1 = c.number("envelope", "chirp_p1").value_or(0.0);
  p.chirp.p2 = c.number("envelope", "chirp_p2").value_or(0.0);
  p.cw_amplitude = non_negative(c, "envelope", "rabi_rad_ns", 0.0);
  try {
    (void)DriveEnvelope(p);
  } catch (const std::invalid_argument& e) {
    c.fail("envelope", "", e.what());
  }

  // [numerics]
  NumericsSettings& n = s.numerics;
  n.step = non_negative(c, "numerics", "step_ns", 0.0);
  n.t1_stride = count(c, "numerics", "t1_stride", n.t1_stride, 1);
  n.n_side = count(c, "numerics", "n_side", n.n_side, 1);
  n.warmup_periods = count(c, "numerics", "warmup_periods", n.warmup_periods, 0);
  n.decay_tail = non_negative(c, "numerics", "decay_tail_ns", 0.0);
  n.t_end = non_negative(c, "numerics", "t_end_ns", 0.0);
  n.record_every = count(c, "numerics", "record_every", 1, 1);
  n.irf_fwhm = non_negative(c, "numerics", "irf_fwhm_ns", 0.0);
  n.trajectories = count(c, "numerics", "trajectories", 0, 0);
  n.noise = non_negative(c, "numerics", "noise", 0.0);

  // [grids]
  s.grids.widths_ns = grid(c, "widths_ns", false);
  s.grids.frequencies_mhz = grid(c, "frequencies_mhz", false);
  s.grids.powers = grid(c, "powers", true);
  s.grids.t1_ns = grid(c, "t1_ns", false);
  s.grids.spectrum_min_ghz = c.number("grids", "spectrum_min_ghz").value_or(s.grids.spectrum_min_ghz);
  s.grids.spectrum_max_ghz = c.number("grids", "spectrum_max_ghz").value_or(s.grids.spectrum_max_ghz);
  if (!(s.grids.spectrum_max_ghz > s.grids.spectrum_min_ghz))
    c.fail("grids", c.has("grids", "spectrum_max_ghz") ? "spectrum_max_ghz" : "", "spectrum range is empty");
  s.grids.spectrum_points = count(c, "grids", "spectrum_points", s.grids.spectrum_points, 3);

  // [data]
  const std::filesystem::path base = std::filesystem::path(c.source()).parent_path();
  if (const auto h = c.text("data", "histogram")) {
    if (h->empty()) c.fail("data", "histogram", "path must not be empty");
    const std::filesystem::path hp(*h);
    s.data.histogram = hp.is_absolute() ? hp : base / hp;
    if (!std::filesystem::exists(s.data.histogram))
      c.fail("data", "histogram", "file not found: " + s.data.histogram.string());
  }
  s.data.acquisition_s = non_negative(c, "data", "acquisition_s", 0.0);
  s.data.g2_perp = measured(c, "g2_perp");
  s.data.g2_par = measured(c, "g2_par");
  s.data.g2_hbt = measured(c, "g2_hbt");
  s.data.overall_efficiency = positive(c, "data", "overall_efficiency", s.data.overall_efficiency);
  if (s.data.overall_efficiency > 1.0) c.fail("data", "overall_efficiency", "must not exceed 1");
  if (c.has("data", "trigger_mhz")) s.data.trigger_mhz = positive(c, "data", "trigger_mhz", 0.0);
  if (c.has("data", "detected_mhz")) s.data.detected_mhz = non_negative(c, "data", "detected_mhz", 0.0);

  // [output]
  if (const auto d = c.text("output", "dir")) {
    if (d->empty()) c.fail("output", "dir", "must not be empty");
    s.output_dir = *d;
  }

  // Kind-specific requirements.
  const bool pulsed = p.shape != PulseShape::Continuous;
  switch (s.kind) {
    case ScenarioKind::HBT:
    case ScenarioKind::WidthSweep:
    case ScenarioKind::FrequencySweep:
    case ScenarioKind::Spectrum:
    case ScenarioKind::RabiScan:
      if (!pulsed) c.fail("envelope", "shape", to_string(s.kind) + " needs a pulsed envelope");
      break;
    default:
      break;
  }
  if (s.kind == ScenarioKind::WidthSweep && s.grids.widths_ns.empty())
    missing_grid(c, "widths_ns", "WidthSweep needs a non-empty width grid");
  if (s.kind == ScenarioKind::FrequencySweep && s.grids.frequencies_mhz.empty())
    missing_grid(c, "frequencies_mhz", "FrequencySweep needs a non-empty frequency grid");
  if (s.kind == ScenarioKind::FrequencySweep) {
    for (double f : s.grids.frequencies_mhz)
      if (1000.0 / f <= p.width) c.fail("grids", "frequencies_mhz", "period must exceed the pulse width");
  }
  if (s.kind == ScenarioKind::Visibility) {
    if (!s.data.g2_perp) c.fail("data", "g2_perp", "Visibility needs g2_perp");
    if (!s.data.g2_par) c.fail("data", "g2_par", "Visibility needs g2_par");
    if (!(s.data.g2_perp->value > 0.0)) c.fail("data", "g2_perp", "must be positive");
  }
  if (!s.data.histogram.empty() && !std::isfinite(p.period))
    c.fail("data", "histogram", "histogram analysis needs a periodic envelope");
  return s;
}

Scenario load_scenario(const std::string& path) {
  const Config c = Config::load(path);
  Scenario s = parse_scenario(c);
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  s.source_text = buf.str();
  return s;
}

Scenario apply_sweep_value(const Scenario& base, SweepAxis axis, double value) {
  Scenario s = base;
  switch (axis) {
    case SweepAxis::Width:
      if (!(value > 0.0)) throw std::invalid_argument("width must be positive");
      s.envelope.width = value;
      break;
    case SweepAxis::Frequency:
      if (!(value > 0.0)) throw std::invalid_argument("frequency must be positive");
      s.envelope.period = 1000.0 / value;
      break;
    case SweepAxis::Power:
      if (!(value >= 0.0)) throw std::invalid_argument("power must be non-negative");
      s.envelope.area = std::numbers::pi * std::sqrt(value);
      break;
    case SweepAxis::T1: {
      if (!(value > 0.0)) throw std::invalid_argument("T1 must be positive");
      const double ratio = base.emitter.t2 / base.emitter.t1;
      s.emitter.t1 = value;
      s.emitter.t2 = ratio * value;
      break;
    }
  }
  return s;
}

SweepRow evaluate_point(const Scenario& scenario, double value) {
  SweepRow row;
  row.value = value;
  const EmitterModel model = scenario.emitter.build();
  const DriveEnvelope env(scenario.envelope);
  const CorrelationRecord rec = two_time_correlation(model, env, correlation_options(scenario, 1));
  row.ok = true;
  row.g2_zero = rec.g2_zero();
  row.g2_center = continuous_g2_center(rec);
  row.quasi_cw = rec.peaks.quasi_cw;
  row.photons_per_pulse = photons_per_pulse(model, rec);
  return row;
}

std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> values, const Scenario& base, unsigned threads) {
  std::vector<SweepRow> rows(values.size());
  parallel_for(values.size(), threads, [&](std::size_t i) {
    try {
      rows[i] = evaluate_point(apply_sweep_value(base, axis, values[i]), values[i]);
    } catch (const NumericalGuardError& e) {
      rows[i] = SweepRow{values[i], false, 0.0, 0.0, false, 0.0, std::string("guard: ") + e.what()};
    } catch (const std::invalid_argument& e) {
      rows[i] = SweepRow{values[i], false, 0.0, 0.0, false, 0.0, e.what()};
    }
  });
  return rows;
}

RunReport run_scenario(const Scenario& s, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const unsigned threads = std::max(options.threads, 1u);
  Writer w(options.out_dir);
  Summary sum;
  sum.emplace_back("scenario", s.name);
  sum.emplace_back("kind", to_string(s.kind));
  switch (s.kind) {
    case ScenarioKind::Decay: run_decay(s, w, sum); break;
    case ScenarioKind::RabiScan: run_rabi(s, threads, w, sum); break;
    case ScenarioKind::HBT: run_hbt(s, threads, w, sum); break;
    case ScenarioKind::WidthSweep: run_width_sweep(s, threads, w, sum); break;
    case ScenarioKind::FrequencySweep: run_frequency_sweep(s, threads, w, sum); break;
    case ScenarioKind::Visibility: run_visibility(s, w, sum); break;
    case ScenarioKind::Spectrum: run_spectrum(s, w, sum); break;
  }
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  RunReport report;
  report.summary = sum;
  report.runtime_s = runtime;

  nlohmann::ordered_json m;
  m["tool"] = "pulsedrf";
  m["version"] = PULSEDRF_VERSION;
  m["scenario"] = s.name;
  m["kind"] = to_string(s.kind);
  m["config"] = s.source_path;
  m["config_sha256"] = sha256_hex(s.source_text);
  m["seed"] = s.seed;
  m["threads"] = threads;
  m["started_utc"] = started;
  m["runtime_s"] = runtime;
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  m["compiler"] = __VERSION__;
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < w.files().size(); ++i)
    outputs.push_back({{"file", w.files()[i].filename().string()}, {"sha256", w.hashes()[i]}});
  m["outputs"] = outputs;

  std::ostringstream text;
  text << "pulsedrf " << PULSEDRF_VERSION << " run summary\n";
  for (const auto& [k, v] : sum) text << k << ": " << v << '\n';
  text << "runtime_s: " << std::fixed << std::setprecision(3) << runtime << '\n';

  Writer meta(options.out_dir);
  meta.write("manifest.json", m.dump(2) + "\n");
  meta.write("summary.txt", text.str());
  report.files = w.files();
  report.files.insert(report.files.end(), meta.files().begin(), meta.files().end());
  return report;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("OpenSSL context allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-256 computation failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

}  // namespace pulsedrf
