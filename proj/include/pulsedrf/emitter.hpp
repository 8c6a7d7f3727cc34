#pragma once

// Few-level emitter models: level structures, Hamiltonians, Lindblad
// dissipators and the master-equation right-hand side.
//
// Units: time in ns, angular frequencies in rad/ns, hbar = 1.

#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace pulsedrf {

using cplx = std::complex<double>;

/// Square complex operator on the emitter Hilbert space (dimension <= 3).
using Operator = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

/// Rate matrix: off-diagonal (i, j) is decay |j> -> |i>, diagonal (i, i) is
/// the pure dephasing rate of |i>. Units 1/ns.
using RateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

/// Real coordinates of a Hermitian operator: d diagonal entries followed by
/// (Re, Im) of each upper off-diagonal entry, row-major.
using HermitianVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 9, 1>;

/// Real-linear map acting on HermitianVector coordinates.
using Superoperator = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 9, 9>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

enum class EmitterKind { TwoLevel, VType };

/// Complex Hermitian, unit-trace, positive semidefinite state.
class DensityMatrix {
 public:
  static constexpr double hermiticity_tolerance = 1e-10;
  static constexpr double trace_tolerance = 1e-9;
  static constexpr double positivity_tolerance = 1e-8;

  /// Validates the invariants; throws std::invalid_argument on violation.
  explicit DensityMatrix(Operator entries);

  /// |level><level| in a space of the given dimension.
  static DensityMatrix pure(Eigen::Index dimension, Eigen::Index level);

  const Operator& entries() const { return entries_; }
  Eigen::Index dimension() const { return entries_.rows(); }
  double population(Eigen::Index level) const { return entries_(level, level).real(); }

 private:
  Operator entries_;
};

/// Largest element-wise deviation from Hermiticity.
double hermiticity_error(const Operator& m);
double min_eigenvalue(const Operator& m);

class EmitterModel {
 public:
  /// Two-level emitter from lifetime and total coherence time,
  /// T2 in (0, 2 T1]. Pure dephasing Gamma_gg = Gamma_ee = 1/T2 - 1/(2 T1).
  static EmitterModel two_level(double t1, double t2, double detuning = 0.0);

  /// V-type emitter {|0>, |->, |+>} with equal dipoles Gamma_0- = Gamma_0+ = 1/T1.
  /// `splitting` is delta_0 in rad/ns; `theta` the drive polarization angle,
  /// `phi` the analyzer angle of the detection dipole.
  static EmitterModel v_type(double t1, double t2, double splitting,
                             double theta = std::numbers::pi / 4,
                             double phi = std::numbers::pi / 4,
                             double detuning = 0.0);

  /// General constructor; rates must be non-negative and vanish on
  /// non-radiative transitions.
  EmitterModel(EmitterKind kind, RateMatrix rates, double detuning,
               double splitting, double theta, double phi);

  EmitterKind kind() const { return kind_; }
  Eigen::Index dimension() const { return kind_ == EmitterKind::TwoLevel ? 2 : 3; }
  double detuning() const { return detuning_; }
  double splitting() const { return splitting_; }
  double polarization_angle() const { return theta_; }
  double detection_angle() const { return phi_; }
  const RateMatrix& rates() const { return rates_; }

  /// Lifetime of the (first) excited level, 1 / Gamma_{0,1}.
  double t1() const;
  /// Coherence time of the ground/first-excited coherence.
  double t2() const;

  Operator hamiltonian(double omega) const;
  /// Detection dipole D; intensity is Tr[D^dagger D rho].
  Operator detection_operator() const;
  Operator intensity_operator() const;

 private:
  EmitterKind kind_;
  RateMatrix rates_;
  double detuning_;
  double splitting_;
  double theta_;
  double phi_;
};

/// (Delta/2)(|e><e| - |g><g|) + (Omega/2)(|g><e| + |e><g|), basis {|g>, |e>}.
Operator build_hamiltonian_two_level(double detuning, double omega);

/// Rotating-frame V-type Hamiltonian, basis {|0>, |->, |+>}.
Operator build_hamiltonian_vtype(double detuning, double splitting, double theta,
                                 double omega);

/// C rho C^dagger - (C^dagger C rho + rho C^dagger C) / 2.
/// Throws std::invalid_argument on a dimension mismatch.
Operator lindblad_dissipator(const Operator& collapse, const Operator& rho);

/// -i [rho, H(Omega_t)] + sum_ij Gamma_ij L(|i><j|) rho.
///
/// The commutator carries the ordering [rho, H]; for the real Hamiltonians
/// used here this yields the complex conjugate of the -i[H, rho] convention
/// and leaves every population and intensity unchanged.
Operator master_rhs(const EmitterModel& model, double omega_t, const Operator& rho,
                    double t = 0.0);

HermitianVector to_hermitian_vector(const Operator& m);
Operator from_hermitian_vector(const HermitianVector& v, Eigen::Index dimension);

/// Liouvillian split as L(Omega) = drift + Omega * drive in HermitianVector
/// coordinates.
struct Liouvillian {
  Superoperator drift;
  Superoperator drive;

  Superoperator at(double omega) const { return drift + omega * drive; }
};

Liouvillian build_liouvillian(const EmitterModel& model);

/// Row vector r such that r . to_hermitian_vector(rho) = Re Tr[A rho]
/// for Hermitian A.
Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, 9>
expectation_functional(const Operator& observable);

}  // namespace pulsedrf
