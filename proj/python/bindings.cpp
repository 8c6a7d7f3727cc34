// Python bindings for the core simulation, correlation and inference calls.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pulsedrf/config.hpp"
#include "pulsedrf/correlation.hpp"
#include "pulsedrf/drive.hpp"
#include "pulsedrf/emitter.hpp"
#include "pulsedrf/fitting.hpp"
#include "pulsedrf/integrator.hpp"
#include "pulsedrf/metrics.hpp"
#include "pulsedrf/scenario.hpp"

namespace py = pybind11;
using namespace pulsedrf;

namespace {

py::array_t<double> array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<double> vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a one-dimensional array");
  return {a.data(), a.data() + a.size()};
}

py::dict fit_dict(const FitResult& f) {
  py::dict values, sigmas;
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    values[py::str(f.names[i])] = f.values[i];
    if (i < f.sigmas.size()) sigmas[py::str(f.names[i])] = f.sigmas[i];
  }
  py::dict d;
  d["values"] = values;
  d["sigmas"] = sigmas;
  d["rss"] = f.rss;
  d["converged"] = f.converged;
  d["iterations"] = f.iterations;
  d["message"] = f.message;
  return d;
}

py::list peak_list(const PeakTable& t) {
  py::list out;
  for (const auto& e : t.entries) {
    py::dict d;
    d["n"] = e.n;
    d["tau"] = e.tau;
    d["area"] = e.area;
    d["g2"] = e.g2;
    d["sigma"] = e.sigma;
    out.append(d);
  }
  return out;
}

Measured measured(const std::pair<double, double>& p) { return {p.first, p.second}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pulsed resonance fluorescence simulator";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<NumericalGuardError> guard_error(m, "NumericalGuardError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const NumericalGuardError& e) {
      guard_error(e.what());
    }
  });

  py::class_<EmitterModel>(m, "Emitter")
      .def_static("two_level", &EmitterModel::two_level, py::arg("t1"), py::arg("t2"), py::arg("detuning") = 0.0)
      .def_static("v_type", &EmitterModel::v_type, py::arg("t1"), py::arg("t2"), py::arg("splitting"),
                  py::arg("theta") = std::numbers::pi / 4, py::arg("phi") = std::numbers::pi / 4,
                  py::arg("detuning") = 0.0)
      .def_property_readonly("dimension", [](const EmitterModel& e) { return static_cast<int>(e.dimension()); })
      .def_property_readonly("t1", &EmitterModel::t1)
      .def_property_readonly("kind", [](const EmitterModel& e) {
        return e.kind() == EmitterKind::TwoLevel ? "two_level" : "v_type";
      });

  py::class_<DriveEnvelope>(m, "Envelope")
      .def(py::init([](const std::string& shape, double width, double area, double period, const std::string& pattern,
                       double extinction_floor, double delay, std::tuple<double, double, double> chirp) {
             EnvelopeParameters p;
             p.shape = parse_pulse_shape(shape);
             p.width = width;
             p.area = area;
             p.period = period;
             p.pattern = pattern;
             p.extinction_floor = extinction_floor;
             p.delay = delay;
             p.chirp = {std::get<0>(chirp), std::get<1>(chirp), std::get<2>(chirp)};
             return DriveEnvelope(p);
           }),
           py::arg("shape") = "Gaussian", py::arg("width") = 0.1, py::arg("area") = std::numbers::pi,
           py::arg("period") = std::numeric_limits<double>::infinity(), py::arg("pattern") = "1",
           py::arg("extinction_floor") = 1e-3, py::arg("delay") = 0.0,
           py::arg("chirp") = std::tuple<double, double, double>{1.0, 0.0, 0.0})
      .def_static("continuous", &DriveEnvelope::continuous, py::arg("omega"))
      .def_property_readonly("peak_amplitude", &DriveEnvelope::peak_amplitude)
      .def_property_readonly("periodic", &DriveEnvelope::periodic)
      .def("__call__", [](const DriveEnvelope& e, const py::array_t<double, py::array::c_style | py::array::forcecast>& t) {
        std::vector<double> out;
        for (double v : vec(t)) out.push_back(e(v));
        return array(out);
      });

  m.def(
      "evolve",
      [](const EmitterModel& model, const DriveEnvelope& env, double t_end, double t_start, double step, int initial_level,
         std::size_t record_every) {
        const double h = step > 0.0 ? step : default_step(model, env);
        const auto traj = evolve(model, env, DensityMatrix::pure(model.dimension(), initial_level), t_start, t_end, h,
                                 {record_every, true});
        py::array_t<double> pops({static_cast<py::ssize_t>(traj.size()), static_cast<py::ssize_t>(model.dimension())});
        auto w = pops.mutable_unchecked<2>();
        for (std::size_t i = 0; i < traj.size(); ++i)
          for (Eigen::Index k = 0; k < model.dimension(); ++k) w(i, k) = traj.states[i](k, k).real();
        py::dict d;
        d["times"] = array(traj.times);
        d["intensity"] = array(traj.intensity);
        d["populations"] = pops;
        d["step"] = traj.step;
        return d;
      },
      py::arg("emitter"), py::arg("envelope"), py::arg("t_end"), py::arg("t_start") = 0.0, py::arg("step") = 0.0,
      py::arg("initial_level") = 0, py::arg("record_every") = 1,
      "Fixed-step RK4 trajectory from a pure level. step = 0 selects the default step.");

  py::class_<CorrelationRecord>(m, "CorrelationRecord")
      .def_property_readonly("tau", [](const CorrelationRecord& r) { return array(r.tau); })
      .def_property_readonly("raw", [](const CorrelationRecord& r) { return array(r.raw); })
      .def_property_readonly("g2", [](const CorrelationRecord& r) { return array(r.g2); })
      .def_property_readonly("g2_zero", &CorrelationRecord::g2_zero)
      .def_property_readonly("g2_center", [](const CorrelationRecord& r) { return continuous_g2_center(r); })
      .def_property_readonly("quasi_cw", [](const CorrelationRecord& r) { return r.peaks.quasi_cw; })
      .def_property_readonly("peaks", [](const CorrelationRecord& r) { return peak_list(r.peaks); })
      .def_readonly("period", &CorrelationRecord::period)
      .def_readonly("step", &CorrelationRecord::step)
      .def_readonly("irf_fwhm", &CorrelationRecord::irf_fwhm)
      .def("convolve_irf", [](const CorrelationRecord& r, double fwhm) { return convolve_irf(r, fwhm); }, py::arg("fwhm"));

  m.def(
      "correlation",
      [](const EmitterModel& model, const DriveEnvelope& env, double step, std::size_t t1_stride, std::size_t n_side,
         std::size_t warmup_periods, double decay_tail, unsigned threads) {
        CorrelationOptions o;
        o.step = step;
        o.t1_stride = t1_stride;
        o.n_side = n_side;
        o.warmup_periods = warmup_periods;
        o.decay_tail = decay_tail;
        o.threads = threads;
        py::gil_scoped_release release;
        return two_time_correlation(model, env, o);
      },
      py::arg("emitter"), py::arg("envelope"), py::arg("step") = 0.0, py::arg("t1_stride") = 4, py::arg("n_side") = 6,
      py::arg("warmup_periods") = 5, py::arg("decay_tail") = 0.0, py::arg("threads") = 1,
      "Two-time intensity correlation via the quantum regression theorem.");

  m.def(
      "cw_correlation",
      [](const EmitterModel& model, double omega, double tau_max, double step) {
        const auto cw = cw_correlation(model, omega, tau_max, step);
        return py::make_tuple(array(cw.tau), array(cw.g2));
      },
      py::arg("emitter"), py::arg("omega"), py::arg("tau_max"), py::arg("step") = 1e-3);
  m.def("cw_g2_analytic", &cw_g2_analytic, py::arg("omega"), py::arg("t1"), py::arg("tau"));

  m.def(
      "jump_oracle",
      [](const EmitterModel& model, const DriveEnvelope& env, std::size_t trajectories, std::uint64_t seed, double step,
         unsigned threads, double decay_tail) {
        JumpOracleOptions o;
        o.step = step;
        o.threads = threads;
        o.decay_tail = decay_tail;
        JumpOracleResult r;
        {
          py::gil_scoped_release release;
          r = jump_oracle(model, env, trajectories, seed, o);
        }
        py::dict d;
        d["trajectories"] = r.trajectories;
        d["mean_photons"] = r.mean_photons;
        d["g2_zero"] = r.g2_zero;
        d["sigma"] = r.sigma;
        d["defined"] = r.defined;
        d["flag"] = r.flag;
        d["photon_counts"] = r.photon_counts;
        return d;
      },
      py::arg("emitter"), py::arg("envelope"), py::arg("trajectories"), py::arg("seed"), py::arg("step") = 0.0,
      py::arg("threads") = 1, py::arg("decay_tail") = 0.0,
      "Quantum-jump Monte Carlo photon statistics for the first pulse.");

  m.def(
      "fit_exponential",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
         std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>> sigma) {
        const auto tv = vec(t), yv = vec(y);
        const auto sv = sigma ? vec(*sigma) : std::vector<double>{};
        return fit_dict(fit_exponential(tv, yv, sv));
      },
      py::arg("t"), py::arg("y"), py::arg("sigma") = py::none());

  m.def(
      "fit_rabi",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& y, double t1, bool fit_t1, bool fit_scale,
         std::optional<std::tuple<double, double, double>> chirp,
         std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>> sigma) {
        const auto tv = vec(t), yv = vec(y);
        const auto sv = sigma ? vec(*sigma) : std::vector<double>{};
        RabiFitOptions o;
        o.t1 = t1;
        o.fit_t1 = fit_t1;
        o.fit_scale = fit_scale;
        if (chirp) o.chirp = ChirpCoefficients{std::get<0>(*chirp), std::get<1>(*chirp), std::get<2>(*chirp)};
        o.sigma = sv;
        return fit_dict(fit_rabi(tv, yv, o));
      },
      py::arg("t"), py::arg("y"), py::arg("t1"), py::arg("fit_t1") = false, py::arg("fit_scale") = false,
      py::arg("chirp") = py::none(), py::arg("sigma") = py::none());

  m.def(
      "beat_frequency",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& intensity) {
        const auto b = beat_frequency(vec(t), vec(intensity));
        py::dict d;
        d["found"] = b.found;
        d["frequency_ghz"] = b.frequency_ghz;
        d["power_ratio"] = b.power_ratio;
        d["relative_amplitude"] = b.relative_amplitude;
        d["message"] = b.message;
        return d;
      },
      py::arg("t"), py::arg("intensity"));

  m.def(
      "tpi_visibility",
      [](std::pair<double, double> perp, std::pair<double, double> par, std::optional<std::pair<double, double>> hbt) {
        std::optional<Measured> h;
        if (hbt) h = measured(*hbt);
        const auto v = tpi_visibility(measured(perp), measured(par), h);
        py::dict d;
        d["raw"] = v.raw;
        d["raw_sigma"] = v.raw_sigma;
        d["corrected"] = v.corrected ? py::cast(*v.corrected) : py::none();
        d["corrected_sigma"] = v.corrected_sigma ? py::cast(*v.corrected_sigma) : py::none();
        return d;
      },
      py::arg("g2_perp"), py::arg("g2_par"), py::arg("g2_hbt") = py::none(),
      "Visibility from (value, sigma) pairs.");

  m.def(
      "efficiency_report",
      [](double trigger_mhz, double detected_mhz, double g2_zero,
         std::optional<std::vector<std::pair<std::string, double>>> stages) {
        EfficiencyChain chain;
        if (stages)
          for (const auto& [name, e] : *stages) chain.add(name, e);
        else
          chain = EfficiencyChain::reference_setup();
        const auto r = efficiency_report(chain, trigger_mhz, detected_mhz, g2_zero);
        py::dict d;
        d["optics_efficiency"] = r.optics_efficiency;
        d["overall_efficiency"] = r.overall_efficiency;
        d["extraction_efficiency"] = r.extraction_efficiency;
        d["single_photon_mhz"] = r.single_photon_mhz;
        d["single_photon_efficiency"] = r.single_photon_efficiency;
        return d;
      },
      py::arg("trigger_mhz"), py::arg("detected_mhz"), py::arg("g2_zero"), py::arg("stages") = py::none(),
      "Efficiency bookkeeping; stages default to the reference setup.");

  m.def(
      "validate_config",
      [](const std::string& path) {
        const Scenario s = load_scenario(path);
        py::dict d;
        d["name"] = s.name;
        d["kind"] = to_string(s.kind);
        d["seed"] = s.seed;
        return d;
      },
      py::arg("path"), "Parses and validates a scenario file; raises ConfigError with the offending line.");

  m.def(
      "run_scenario",
      [](const std::string& path, const std::string& out_dir, unsigned threads) {
        const Scenario s = load_scenario(path);
        RunReport r;
        {
          py::gil_scoped_release release;
          r = run_scenario(s, {out_dir, threads});
        }
        std::vector<std::string> files;
        for (const auto& f : r.files) files.push_back(f.string());
        return files;
      },
      py::arg("path"), py::arg("out_dir"), py::arg("threads") = 1,
      "Runs a scenario file and returns the written paths.");
}
