#include "pulsedrf/emitter.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pulsedrf {

namespace {

Operator hermitian_basis(Eigen::Index dimension, Eigen::Index k) {
  Operator e = Operator::Zero(dimension, dimension);
  if (k < dimension) {
    e(k, k) = 1.0;
    return e;
  }
  Eigen::Index slot = (k - dimension) / 2;
  const bool imaginary = (k - dimension) % 2 == 1;
  for (Eigen::Index i = 0; i < dimension; ++i) {
    for (Eigen::Index j = i + 1; j < dimension; ++j, --slot) {
      if (slot != 0) continue;
      if (imaginary) {
        e(i, j) = cplx(0.0, 1.0);
        e(j, i) = cplx(0.0, -1.0);
      } else {
        e(i, j) = 1.0;
        e(j, i) = 1.0;
      }
      return e;
    }
  }
  throw std::out_of_range("hermitian basis index out of range");
}

bool radiative(EmitterKind kind, Eigen::Index i, Eigen::Index j) {
  if (i == j) return true;  // pure dephasing
  // Decays only into the ground level |g> / |0> (index 0).
  if (kind == EmitterKind::TwoLevel) return i == 0 && j == 1;
  return i == 0 && (j == 1 || j == 2);
}

double pure_dephasing_rate(double t1, double t2) {
  if (!(t1 > 0.0) || !(t2 > 0.0)) throw std::invalid_argument("T1 and T2 must be positive");
  const double rate = 1.0 / t2 - 1.0 / (2.0 * t1);
  // T2 = 2 T1 exactly may leave a rounding residue of either sign.
  if (rate < -1e-12 / t1) throw std::invalid_argument("T2 must not exceed 2 T1");
  return std::max(rate, 0.0);
}

}  // namespace

DensityMatrix::DensityMatrix(Operator entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols() || entries_.rows() < 2)
    throw std::invalid_argument("density matrix must be square with dimension >= 2");
  if (hermiticity_error(entries_) > hermiticity_tolerance)
    throw std::invalid_argument("density matrix is not Hermitian");
  if (std::abs(entries_.trace().real() - 1.0) > trace_tolerance)
    throw std::invalid_argument("density matrix trace differs from 1");
  if (min_eigenvalue(entries_) < -positivity_tolerance)
    throw std::invalid_argument("density matrix has a negative eigenvalue");
}

DensityMatrix DensityMatrix::pure(Eigen::Index dimension, Eigen::Index level) {
  if (level < 0 || level >= dimension) throw std::invalid_argument("level out of range");
  Operator m = Operator::Zero(dimension, dimension);
  m(level, level) = 1.0;
  return DensityMatrix(std::move(m));
}

double hermiticity_error(const Operator& m) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

double min_eigenvalue(const Operator& m) {
  const Operator h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<Operator> solver(h, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

EmitterModel EmitterModel::two_level(double t1, double t2, double detuning) {
  const double pure = pure_dephasing_rate(t1, t2);
  RateMatrix rates = RateMatrix::Zero(2, 2);
  rates(0, 1) = 1.0 / t1;
  rates(0, 0) = pure;
  rates(1, 1) = pure;
  return EmitterModel(EmitterKind::TwoLevel, rates, detuning, 0.0, 0.0, 0.0);
}

EmitterModel EmitterModel::v_type(double t1, double t2, double splitting, double theta,
                                  double phi, double detuning) {
  const double pure = pure_dephasing_rate(t1, t2);
  RateMatrix rates = RateMatrix::Zero(3, 3);
  rates(0, 1) = 1.0 / t1;
  rates(0, 2) = 1.0 / t1;
  rates.diagonal().setConstant(pure);
  return EmitterModel(EmitterKind::VType, rates, detuning, splitting, theta, phi);
}

EmitterModel::EmitterModel(EmitterKind kind, RateMatrix rates, double detuning,
                           double splitting, double theta, double phi)
    : kind_(kind),
      rates_(std::move(rates)),
      detuning_(detuning),
      splitting_(splitting),
      theta_(theta),
      phi_(phi) {
  const Eigen::Index d = dimension();
  if (rates_.rows() != d || rates_.cols() != d)
    throw std::invalid_argument("rate matrix dimension does not match the emitter kind");
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double r = rates_(i, j);
      if (!std::isfinite(r) || r < 0.0) throw std::invalid_argument("rates must be finite and >= 0");
      if (r != 0.0 && !radiative(kind_, i, j))
        throw std::invalid_argument("non-zero rate on a non-radiative transition (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
  if (!(rates_(0, 1) > 0.0)) throw std::invalid_argument("excited-state decay rate must be positive");
  if (!std::isfinite(detuning_) || !std::isfinite(splitting_) || !std::isfinite(theta_) ||
      !std::isfinite(phi_))
    throw std::invalid_argument("emitter parameters must be finite");
}

double EmitterModel::t1() const { return 1.0 / rates_(0, 1); }

double EmitterModel::t2() const {
  return 1.0 / (0.5 * rates_(0, 1) + 0.5 * (rates_(0, 0) + rates_(1, 1)));
}

Operator EmitterModel::hamiltonian(double omega) const {
  if (kind_ == EmitterKind::TwoLevel) return build_hamiltonian_two_level(detuning_, omega);
  return build_hamiltonian_vtype(detuning_, splitting_, theta_, omega);
}

Operator EmitterModel::detection_operator() const {
  Operator d = Operator::Zero(dimension(), dimension());
  if (kind_ == EmitterKind::TwoLevel) {
    d(0, 1) = 1.0;
  } else {
    d(0, 1) = std::cos(phi_);
    d(0, 2) = std::sin(phi_);
  }
  return d;
}

Operator EmitterModel::intensity_operator() const {
  const Operator d = detection_operator();
  return d.adjoint() * d;
}

Operator build_hamiltonian_two_level(double detuning, double omega) {
  Operator h = Operator::Zero(2, 2);
  h(0, 0) = -detuning / 2.0;
  h(1, 1) = detuning / 2.0;
  h(0, 1) = omega / 2.0;
  h(1, 0) = omega / 2.0;
  return h;
}

Operator build_hamiltonian_vtype(double detuning, double splitting, double theta,
                                 double omega) {
  Operator h = Operator::Zero(3, 3);
  h(0, 0) = -detuning / 2.0;
  h(1, 1) = detuning / 2.0;
  h(2, 2) = detuning / 2.0 + splitting;
  const double minus = omega / 2.0 * std::cos(theta);
  const double plus = omega / 2.0 * std::sin(theta);
  h(0, 1) = minus;
  h(1, 0) = minus;
  h(0, 2) = plus;
  h(2, 0) = plus;
  return h;
}

Operator lindblad_dissipator(const Operator& collapse, const Operator& rho) {
  if (collapse.rows() != collapse.cols() || rho.rows() != rho.cols() ||
      collapse.rows() != rho.rows())
    throw std::invalid_argument("lindblad_dissipator: dimension mismatch");
  const Operator cdc = collapse.adjoint() * collapse;
  return collapse * rho * collapse.adjoint() - 0.5 * (cdc * rho + rho * cdc);
}

Operator master_rhs(const EmitterModel& model, double omega_t, const Operator& rho,
                    double /*t*/) {
  const Eigen::Index d = model.dimension();
  if (rho.rows() != d || rho.cols() != d)
    throw std::invalid_argument("master_rhs: state dimension does not match the model");
  const Operator h = model.hamiltonian(omega_t);
  Operator out = cplx(0.0, -1.0) * (rho * h - h * rho);
  const RateMatrix& rates = model.rates();
  // L(|i><j|) rho = rho_jj |i><i| - (|j><j| rho + rho |j><j|) / 2
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double g = rates(i, j);
      if (g == 0.0) continue;
      out(i, i) += g * rho(j, j);
      out.row(j) -= 0.5 * g * rho.row(j);
      out.col(j) -= 0.5 * g * rho.col(j);
    }
  }
  return out;
}

HermitianVector to_hermitian_vector(const Operator& m) {
  const Eigen::Index d = m.rows();
  HermitianVector v(d * d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = m(i, i).real();
  Eigen::Index k = d;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      v(k++) = m(i, j).real();
      v(k++) = m(i, j).imag();
    }
  }
  return v;
}

Operator from_hermitian_vector(const HermitianVector& v, Eigen::Index dimension) {
  if (v.size() != dimension * dimension)
    throw std::invalid_argument("from_hermitian_vector: size mismatch");
  Operator m(dimension, dimension);
  for (Eigen::Index i = 0; i < dimension; ++i) m(i, i) = v(i);
  Eigen::Index k = dimension;
  for (Eigen::Index i = 0; i < dimension; ++i) {
    for (Eigen::Index j = i + 1; j < dimension; ++j) {
      m(i, j) = cplx(v(k), v(k + 1));
      m(j, i) = cplx(v(k), -v(k + 1));
      k += 2;
    }
  }
  return m;
}

Liouvillian build_liouvillian(const EmitterModel& model) {
  const Eigen::Index d = model.dimension();
  const Eigen::Index n = d * d;
  Liouvillian l{Superoperator(n, n), Superoperator(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const Operator e = hermitian_basis(d, k);
    const HermitianVector free = to_hermitian_vector(master_rhs(model, 0.0, e));
    const HermitianVector driven = to_hermitian_vector(master_rhs(model, 1.0, e));
    l.drift.col(k) = free;
    l.drive.col(k) = driven - free;
  }
  return l;
}

Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, 9>
expectation_functional(const Operator& observable) {
  const Eigen::Index d = observable.rows();
  Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, 9> r(d * d);
  for (Eigen::Index k = 0; k < d * d; ++k)
    r(k) = (observable * hermitian_basis(d, k)).trace().real();
  return r;
}

}  // namespace pulsedrf
