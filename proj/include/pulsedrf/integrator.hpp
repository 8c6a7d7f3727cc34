#pragma once

// Fixed-step fourth-order Runge-Kutta integration of the driven master
// equation.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulsedrf/drive.hpp"
#include "pulsedrf/emitter.hpp"

namespace pulsedrf {

/// A numerical guard (resolution, stability, invariant) was violated.
class NumericalGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  double step = 0.0;
  std::vector<double> times;
  std::vector<Operator> states;
  /// Tr[D^dagger D rho(t)].
  std::vector<double> intensity;
  /// Largest |Tr rho - 1| seen before renormalization.
  double trace_drift = 0.0;
  bool renormalized = false;

  std::size_t size() const { return times.size(); }
  std::vector<double> population(Eigen::Index level) const;
};

/// min(w / 50, T1 / 200); T1 / 200 for continuous drive.
double default_step(const EmitterModel& model, const DriveEnvelope& env);

/// Largest step accepted for a pulsed envelope (w / 20).
double resolution_limit(const DriveEnvelope& env);

struct EvolveOptions {
  /// Store every n-th step (the final step is always stored).
  std::size_t record_every = 1;
  bool check_invariants = true;
};

/// Classic RK4 on master_rhs over [t_start, t_end] with drive sampled at
/// t, t + h/2 and t + h. If (t_end - t_start) / h is not an integer the
/// step is shortened to the next commensurate value.
///
/// Throws NumericalGuardError when h exceeds the resolution guard or a
/// stored state breaks the density-matrix invariants beyond tolerance.
Trajectory evolve(const EmitterModel& model, const DriveEnvelope& env, const DensityMatrix& rho0,
                  double t_start, double t_end, double h, const EvolveOptions& options = {});

/// End state only, without invariant bookkeeping.
Operator evolve_final(const EmitterModel& model, const DriveEnvelope& env, const Operator& rho0,
                      double t_start, double t_end, double h);

struct ConvergenceReport {
  double slope = 0.0;
  std::vector<double> steps;
  std::vector<double> errors;
};

/// Log-log slope of the end-state error against a Richardson-extrapolated
/// reference (h_min / 2, h_min / 4). Needs >= 4 steps spanning at least a
/// factor 8; throws NumericalGuardError on a non-monotone error sequence or
/// errors at the roundoff floor.
ConvergenceReport convergence_order(const EmitterModel& model, const DriveEnvelope& env,
                                    const DensityMatrix& rho0, double t_start, double t_end,
                                    std::span<const double> steps);

/// One RK4 step of the linear equation d/dt x = (drift + Omega(t) drive) x
/// as a matrix, with stage drives Omega(t), Omega(t + h/2), Omega(t + h).
Superoperator rk4_step_map(const Liouvillian& l, double h, double omega_start,
                           double omega_mid, double omega_end);

/// Products of consecutive RK4 step maps over blocks of `steps_per_block`
/// steps. Block b covers [b * block_duration, (b + 1) * block_duration).
/// For a periodic envelope whose drive cycle (period x pattern length) is a
/// whole number of blocks only one cycle of blocks is stored and indices wrap.
class BlockPropagator {
 public:
  BlockPropagator(const EmitterModel& model, const DriveEnvelope& env, double h,
                  std::size_t steps_per_block, std::size_t block_count);

  double step() const { return step_; }
  double block_duration() const { return step_ * static_cast<double>(steps_per_block_); }
  std::size_t steps_per_block() const { return steps_per_block_; }
  std::size_t stored_blocks() const { return blocks_.size(); }
  bool wraps() const { return wraps_; }
  const Superoperator& block(std::size_t b) const {
    return blocks_[wraps_ ? b % blocks_.size() : b];
  }

 private:
  double step_;
  std::size_t steps_per_block_;
  bool wraps_ = false;
  std::vector<Superoperator> blocks_;
};

}  // namespace pulsedrf
