#include "pulsedrf/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pulsedrf {

namespace {

// Hard limits: beyond these a run is aborted rather than repaired.
constexpr double trace_abort = 1e-6;
constexpr double hermiticity_abort = 1e-8;
constexpr double positivity_abort = -1e-6;

std::size_t step_count(double span, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("step must be positive and finite");
  if (!(span > 0.0)) throw std::invalid_argument("time span must be positive");
  const double n = span / h;
  const double rounded = std::round(n);
  if (rounded >= 1.0 && std::abs(n - rounded) <= 1e-9 * rounded) return static_cast<std::size_t>(rounded);
  return static_cast<std::size_t>(std::ceil(n));
}

void check_resolution(const DriveEnvelope& env, double h) {
  const double limit = resolution_limit(env);
  if (h > limit * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "step h = " << h << " ns violates the resolution guard; need h <= w/20 = " << limit << " ns";
    throw NumericalGuardError(msg.str());
  }
}

Operator rk4_step(const EmitterModel& model, const DriveEnvelope& env, const Operator& rho, double t,
                  double h) {
  const double o0 = env(t);
  const double o1 = env(t + 0.5 * h);
  const double o2 = env(t + h);
  const Operator k1 = master_rhs(model, o0, rho, t);
  const Operator k2 = master_rhs(model, o1, rho + 0.5 * h * k1, t + 0.5 * h);
  const Operator k3 = master_rhs(model, o1, rho + 0.5 * h * k2, t + 0.5 * h);
  const Operator k4 = master_rhs(model, o2, rho + h * k3, t + h);
  return rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

double frobenius(const Operator& m) { return std::sqrt(m.cwiseAbs2().sum()); }

}  // namespace

std::vector<double> Trajectory::population(Eigen::Index level) const {
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s(level, level).real());
  return out;
}

double default_step(const EmitterModel& model, const DriveEnvelope& env) {
  double h = model.t1() / 200.0;
  if (env.pulsed()) h = std::min(h, env.parameters().width / 50.0);
  return h;
}

double resolution_limit(const DriveEnvelope& env) {
  if (!env.pulsed()) return std::numeric_limits<double>::infinity();
  return env.parameters().width / 20.0;
}

Trajectory evolve(const EmitterModel& model, const DriveEnvelope& env, const DensityMatrix& rho0,
                  double t_start, double t_end, double h, const EvolveOptions& options) {
  if (rho0.dimension() != model.dimension())
    throw std::invalid_argument("evolve: initial state dimension does not match the model");
  check_resolution(env, h);
  const std::size_t n = step_count(t_end - t_start, h);
  h = (t_end - t_start) / static_cast<double>(n);
  const std::size_t every = std::max<std::size_t>(options.record_every, 1);
  const Operator intensity_op = model.intensity_operator();

  Trajectory traj;
  traj.step = h;
  const std::size_t stored = n / every + 2;
  traj.times.reserve(stored);
  traj.states.reserve(stored);

  auto record = [&](double t, const Operator& rho) {
    if (options.check_invariants) {
      const double drift = std::abs(rho.trace().real() - 1.0);
      traj.trace_drift = std::max(traj.trace_drift, drift);
      const double herm = hermiticity_error(rho);
      const double min_eig = min_eigenvalue(rho);
      if (drift > trace_abort || herm > hermiticity_abort || min_eig < positivity_abort) {
        std::ostringstream msg;
        msg << "density-matrix invariant breached at t = " << t << " ns (trace drift " << drift
            << ", hermiticity " << herm << ", min eigenvalue " << min_eig << ")";
        throw NumericalGuardError(msg.str());
      }
    }
    traj.times.push_back(t);
    traj.states.push_back(rho);
  };

  Operator rho = rho0.entries();
  record(t_start, rho);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t_start + h * static_cast<double>(i);
    rho = rk4_step(model, env, rho, t, h);
    if ((i + 1) % every == 0 || i + 1 == n) record(t_start + h * static_cast<double>(i + 1), rho);
  }

  if (traj.trace_drift > DensityMatrix::trace_tolerance) {
    for (auto& s : traj.states) s /= s.trace().real();
    traj.renormalized = true;
  }
  traj.intensity.reserve(traj.states.size());
  for (const auto& s : traj.states) traj.intensity.push_back((intensity_op * s).trace().real());
  return traj;
}

Operator evolve_final(const EmitterModel& model, const DriveEnvelope& env, const Operator& rho0,
                      double t_start, double t_end, double h) {
  check_resolution(env, h);
  const std::size_t n = step_count(t_end - t_start, h);
  h = (t_end - t_start) / static_cast<double>(n);
  Operator rho = rho0;
  for (std::size_t i = 0; i < n; ++i) rho = rk4_step(model, env, rho, t_start + h * static_cast<double>(i), h);
  return rho;
}

ConvergenceReport convergence_order(const EmitterModel& model, const DriveEnvelope& env,
                                    const DensityMatrix& rho0, double t_start, double t_end,
                                    std::span<const double> steps) {
  if (steps.size() < 4) throw std::invalid_argument("convergence_order needs at least 4 step sizes");
  std::vector<double> hs(steps.begin(), steps.end());
  std::sort(hs.begin(), hs.end(), std::greater<>());
  if (hs.back() <= 0.0) throw std::invalid_argument("step sizes must be positive");
  if (hs.front() / hs.back() < 8.0) throw std::invalid_argument("step sizes must span at least a factor of 8");

  const double h_min = hs.back();
  const Operator half = evolve_final(model, env, rho0.entries(), t_start, t_end, h_min / 2.0);
  const Operator quarter = evolve_final(model, env, rho0.entries(), t_start, t_end, h_min / 4.0);
  const Operator reference = quarter + (quarter - half) / 15.0;

  ConvergenceReport report;
  report.steps = hs;
  for (double h : hs) report.errors.push_back(frobenius(evolve_final(model, env, rho0.entries(), t_start, t_end, h) - reference));

  constexpr double roundoff_floor = 1e3 * std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < report.errors.size(); ++i) {
    if (report.errors[i] < roundoff_floor) {
      std::ostringstream msg;
      msg << "end-state error " << report.errors[i] << " at h = " << hs[i]
          << " ns is at the roundoff floor; use larger steps";
      throw NumericalGuardError(msg.str());
    }
    if (i > 0 && !(report.errors[i] < report.errors[i - 1])) {
      std::ostringstream msg;
      msg << "non-monotone error sequence at h = " << hs[i] << " ns (" << report.errors[i] << " >= "
          << report.errors[i - 1] << ")";
      throw NumericalGuardError(msg.str());
    }
  }

  const auto m = static_cast<double>(hs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double x = std::log(hs[i]);
    const double y = std::log(report.errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  report.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return report;
}

Superoperator rk4_step_map(const Liouvillian& l, double h, double omega_start, double omega_mid,
                           double omega_end) {
  const Eigen::Index n = l.drift.rows();
  const Superoperator id = Superoperator::Identity(n, n);
  const Superoperator la = l.at(omega_start);
  const Superoperator lb = l.at(omega_mid);
  const Superoperator lc = l.at(omega_end);
  const Superoperator k1 = la;
  const Superoperator k2 = lb * (id + 0.5 * h * k1);
  const Superoperator k3 = lb * (id + 0.5 * h * k2);
  const Superoperator k4 = lc * (id + h * k3);
  return id + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

BlockPropagator::BlockPropagator(const EmitterModel& model, const DriveEnvelope& env, double h,
                                 std::size_t steps_per_block, std::size_t block_count)
    : step_(h), steps_per_block_(steps_per_block) {
  if (!(h > 0.0)) throw std::invalid_argument("BlockPropagator: step must be positive");
  if (steps_per_block == 0) throw std::invalid_argument("BlockPropagator: steps_per_block must be >= 1");
  check_resolution(env, h);
  const double block = block_duration();
  std::size_t count = block_count;
  if (env.periodic()) {
    const double cycle = env.parameters().period * static_cast<double>(env.parameters().pattern.size());
    const double phases = cycle / block;
    const double rounded = std::round(phases);
    if (rounded >= 1.0 && std::abs(phases - rounded) <= 1e-9 * rounded) {
      wraps_ = true;
      count = static_cast<std::size_t>(rounded);
    }
  }
  if (count == 0) throw std::invalid_argument("BlockPropagator: no blocks requested");

  const Liouvillian l = build_liouvillian(model);
  const Eigen::Index n = l.drift.rows();
  blocks_.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    Superoperator acc = Superoperator::Identity(n, n);
    for (std::size_t s = 0; s < steps_per_block; ++s) {
      const double t = block * static_cast<double>(b) + h * static_cast<double>(s);
      const Superoperator m = rk4_step_map(l, h, env(t), env(t + 0.5 * h), env(t + h));
      acc = (m * acc).eval();
    }
    blocks_.push_back(std::move(acc));
  }
}

}  // namespace pulsedrf
