#include "pulsedrf/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pulsedrf {

namespace {

Eigen::MatrixXd jacobian(const ResidualFunction& f, const Eigen::VectorXd& p, const std::vector<int>& positive) {
  const Eigen::VectorXd r0 = f(p);
  Eigen::MatrixXd j(r0.size(), p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    double step = 1e-6 * std::max(std::abs(p(k)), 1e-6);
    const bool pos = std::find(positive.begin(), positive.end(), static_cast<int>(k)) != positive.end();
    if (pos) step = std::min(step, 0.5 * p(k));
    Eigen::VectorXd hi = p, lo = p;
    hi(k) += step;
    lo(k) -= step;
    j.col(k) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return j;
}

bool admissible(const Eigen::VectorXd& p, const std::vector<int>& positive) {
  if (!p.allFinite()) return false;
  for (int k : positive)
    if (!(p(k) > 0.0)) return false;
  return true;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

double FitResult::value(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw std::out_of_range("fit has no parameter '" + name + "'");
}

double FitResult::sigma(const std::string& name) const {
  if (!converged || sigmas.empty()) throw std::logic_error("uncertainties are only reported for converged fits");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return sigmas[i];
  throw std::out_of_range("fit has no parameter '" + name + "'");
}

FitResult levenberg_marquardt(const ResidualFunction& residuals, const Eigen::VectorXd& start,
                              std::vector<std::string> names, const LeastSquaresOptions& options) {
  if (static_cast<Eigen::Index>(names.size()) != start.size())
    throw std::invalid_argument("parameter names and start vector differ in size");
  if (!admissible(start, options.positive)) throw std::invalid_argument("start point violates parameter bounds");

  FitResult result;
  result.names = std::move(names);
  Eigen::VectorXd p = start;
  Eigen::VectorXd r = residuals(p);
  const Eigen::Index n = r.size();
  const Eigen::Index m = p.size();
  if (n < m) throw std::invalid_argument("fewer data points than parameters");
  if (!r.allFinite()) throw std::invalid_argument("residuals are not finite at the start point");
  double cost = r.squaredNorm();
  double lambda = 1e-3;

  for (int it = 1; it <= options.max_iterations; ++it) {
    result.iterations = it;
    const Eigen::MatrixXd j = jacobian(residuals, p, options.positive);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= 1e-300) {
      result.converged = true;
      break;
    }
    bool accepted = false;
    bool small_step = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index k = 0; k < m; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      small_step = step.norm() <= options.x_tolerance * (p.norm() + options.x_tolerance);
      if (admissible(trial, options.positive)) {
        const Eigen::VectorXd rt = residuals(trial);
        const double ct = rt.allFinite() ? rt.squaredNorm() : std::numeric_limits<double>::infinity();
        if (ct <= cost) {
          const double drop = cost - ct;
          p = trial;
          r = rt;
          cost = ct;
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          if (drop <= options.f_tolerance * std::max(cost, 1e-300) || small_step) result.converged = true;
          break;
        }
      }
      if (small_step) break;
      lambda *= 4.0;
    }
    if (!accepted) {
      // No decrease possible: at a minimum to working precision.
      result.converged = small_step || lambda > 1e10;
      if (!result.converged) result.message = "step rejected repeatedly";
      break;
    }
    if (result.converged) break;
  }
  if (!result.converged && result.message.empty()) result.message = "iteration limit reached";

  result.values = to_std(p);
  result.rss = cost;
  if (result.converged) {
    const Eigen::MatrixXd j = jacobian(residuals, p, options.positive);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (!lu.isInvertible()) {
      result.converged = false;
      result.message = "singular normal matrix; parameters not identifiable";
    } else {
      Eigen::MatrixXd cov = lu.inverse();
      if (!options.absolute_sigma) cov *= n > m ? cost / static_cast<double>(n - m) : 0.0;
      for (Eigen::Index k = 0; k < m; ++k) result.sigmas.push_back(std::sqrt(std::max(cov(k, k), 0.0)));
    }
  }
  return result;
}

FitResult fit_exponential(std::span<const double> t, std::span<const double> y, std::span<const double> sigma) {
  if (t.size() != y.size()) throw std::invalid_argument("t and y sizes differ");
  if (t.size() < 10) throw std::invalid_argument("exponential fit needs at least 10 points");
  if (!sigma.empty() && sigma.size() != t.size()) throw std::invalid_argument("sigma size differs from data");

  // Log-linear start from the positive samples.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, cnt = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(y[i] > 0.0)) continue;
    const double ly = std::log(y[i]);
    sx += t[i];
    sy += ly;
    sxx += t[i] * t[i];
    sxy += t[i] * ly;
    cnt += 1;
  }
  double t1 = (t.back() - t.front()) / 3.0;
  double amp = *std::max_element(y.begin(), y.end());
  if (cnt >= 2) {
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    if (slope < 0.0 && std::isfinite(slope)) {
      t1 = -1.0 / slope;
      amp = std::exp((sy - slope * sx) / cnt);
    }
  }
  if (!(amp > 0.0)) amp = 1.0;

  const std::vector<double> tv(t.begin(), t.end()), yv(y.begin(), y.end()), sv(sigma.begin(), sigma.end());
  auto res = [tv, yv, sv](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(tv.size()));
    for (std::size_t i = 0; i < tv.size(); ++i) {
      const double d = p(0) * std::exp(-tv[i] / p(1)) - yv[i];
      r(static_cast<Eigen::Index>(i)) = sv.empty() ? d : d / sv[i];
    }
    return r;
  };
  LeastSquaresOptions opt;
  opt.positive = {1};
  opt.absolute_sigma = !sigma.empty();
  Eigen::VectorXd start(2);
  start << amp, t1;
  FitResult fit = levenberg_marquardt(res, start, {"amplitude", "t1"}, opt);
  if (fit.converged && t.back() - t.front() < 2.0 * fit.value("t1")) {
    fit.converged = false;
    fit.sigmas.clear();
    fit.message = "data span fewer than 2 decay constants";
  }
  return fit;
}

FitResult fit_exponential(const Trajectory& trajectory, double t_from) {
  std::vector<double> t, y;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (trajectory.times[i] < t_from) continue;
    t.push_back(trajectory.times[i] - t_from);
    y.push_back(trajectory.intensity[i]);
  }
  // Amplitude refers to the intensity at t_from.
  return fit_exponential(t, y);
}

double rabi_population(double t, double omega, double t1, double t2, const std::optional<ChirpCoefficients>& chirp) {
  if (chirp) {
    if (!(chirp->p0 > 0.0)) throw std::invalid_argument("chirp p0 must be positive");
    const double q = chirp->p0 + chirp->p1 * t + chirp->p2 * t * t;
    omega *= std::sqrt(std::max(q, 0.0) / chirp->p0);
  }
  const double g1 = 1.0 / t1;
  const double g2 = 1.0 / t2;
  const double a = 0.5 * (g1 + g2);
  const double xi2 = omega * omega - 0.25 * (g2 - g1) * (g2 - g1);
  double osc;
  if (xi2 > 0.0) {
    const double xi = std::sqrt(xi2);
    osc = std::cos(xi * t) + a / xi * std::sin(xi * t);
  } else if (xi2 < 0.0) {
    const double k = std::sqrt(-xi2);
    osc = std::cosh(k * t) + a / k * std::sinh(k * t);
  } else {
    osc = 1.0 + a * t;
  }
  const double plateau = 0.5 * omega * omega / (omega * omega + g1 * g2);
  return plateau * (1.0 - osc * std::exp(-a * t));
}

FitResult fit_rabi(std::span<const double> t, std::span<const double> y, const RabiFitOptions& options) {
  if (t.size() != y.size()) throw std::invalid_argument("t and y sizes differ");
  if (t.size() < 10) throw std::invalid_argument("Rabi fit needs at least 10 points");
  if (!options.sigma.empty() && options.sigma.size() != t.size())
    throw std::invalid_argument("sigma size differs from data");
  if (!(options.t1 > 0.0)) throw std::invalid_argument("T1 must be positive");

  const double span = t.back() - t.front();
  double omega = options.omega_guess;
  if (!(omega > 0.0)) {
    // Periodogram peak of the mean-removed data.
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    const double f_max = 0.5 * static_cast<double>(t.size() - 1) / span;
    const double df = 0.1 / span;
    double best = -1.0;
    for (double f = 0.5 / span; f <= f_max; f += df) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) acc += (y[i] - mean) * std::polar(1.0, -two_pi * f * t[i]);
      if (std::norm(acc) > best) {
        best = std::norm(acc);
        omega = two_pi * f;
      }
    }
  }
  if (omega * span / two_pi < 2.0)
    throw std::invalid_argument("Rabi data must cover at least 2 Rabi periods");
  const double t2 = options.t2_guess > 0.0 ? options.t2_guess : 1.5 * options.t1;

  std::vector<std::string> names = {"omega", "t2"};
  std::vector<double> start = {omega, t2};
  LeastSquaresOptions opt;
  opt.positive = {0, 1};
  int i_t1 = -1, i_scale = -1;
  if (options.fit_t1) {
    i_t1 = static_cast<int>(names.size());
    names.push_back("t1");
    start.push_back(options.t1);
    opt.positive.push_back(i_t1);
  }
  if (options.fit_scale) {
    i_scale = static_cast<int>(names.size());
    names.push_back("scale");
    double top = *std::max_element(y.begin(), y.end());
    start.push_back(top > 0.0 ? top / 0.5 : 1.0);
  }
  opt.absolute_sigma = !options.sigma.empty();

  const std::vector<double> tv(t.begin(), t.end()), yv(y.begin(), y.end());
  const std::vector<double> sv(options.sigma.begin(), options.sigma.end());
  const auto chirp = options.chirp;
  const double fixed_t1 = options.t1;
  auto res = [=](const Eigen::VectorXd& p) {
    const double t1v = i_t1 >= 0 ? p(i_t1) : fixed_t1;
    const double scale = i_scale >= 0 ? p(i_scale) : 1.0;
    Eigen::VectorXd r(static_cast<Eigen::Index>(tv.size()));
    for (std::size_t i = 0; i < tv.size(); ++i) {
      const double d = scale * rabi_population(tv[i], p(0), t1v, p(1), chirp) - yv[i];
      r(static_cast<Eigen::Index>(i)) = sv.empty() ? d : d / sv[i];
    }
    return r;
  };
  Eigen::VectorXd p0 = Eigen::Map<const Eigen::VectorXd>(start.data(), static_cast<Eigen::Index>(start.size()));
  FitResult fit = levenberg_marquardt(res, p0, names, opt);

  // Derived ratio T2 / T1 with first-order propagation.
  const double t1v = i_t1 >= 0 ? fit.values[static_cast<std::size_t>(i_t1)] : fixed_t1;
  const double ratio = fit.values[1] / t1v;
  fit.names.push_back("t2_over_t1");
  fit.values.push_back(ratio);
  if (fit.converged) {
    double s = fit.sigmas[1] / t1v;
    if (i_t1 >= 0) {
      // Recompute the covariance between t2 and t1.
      Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(fit.values.data(), static_cast<Eigen::Index>(names.size()));
      Eigen::MatrixXd j(static_cast<Eigen::Index>(tv.size()), p.size());
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        const double h = 1e-6 * std::max(std::abs(p(k)), 1e-6);
        Eigen::VectorXd hi = p, lo = p;
        hi(k) += h;
        lo(k) -= h;
        j.col(k) = (res(hi) - res(lo)) / (2.0 * h);
      }
      Eigen::MatrixXd cov = (j.transpose() * j).inverse();
      const auto n = static_cast<double>(tv.size());
      if (!opt.absolute_sigma) cov *= fit.rss / (n - static_cast<double>(p.size()));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.size());
      grad(1) = 1.0 / t1v;
      grad(i_t1) = -fit.values[1] / (t1v * t1v);
      s = std::sqrt(std::max(grad.dot(cov * grad), 0.0));
    }
    fit.sigmas.push_back(s);
  }
  return fit;
}

BeatResult beat_frequency(std::span<const double> t, std::span<const double> intensity) {
  if (t.size() != intensity.size()) throw std::invalid_argument("t and intensity sizes differ");
  BeatResult out;
  const FitResult envelope = fit_exponential(t, intensity);
  const double amp = envelope.value("amplitude");
  const double t1 = envelope.value("t1");
  if (!(amp > 0.0) || !(t1 > 0.0)) {
    out.message = "no exponential envelope";
    return out;
  }

  // Block-average long records; the beats sit far below the original Nyquist.
  const std::size_t block = (t.size() + 2047) / 2048;
  const std::size_t n = t.size() / block;
  if (n < 3) {
    out.message = "record too short to resolve any beat";
    return out;
  }
  std::vector<double> tb(n), residual(n), window(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ts = 0.0, rs = 0.0;
    for (std::size_t j = i * block; j < (i + 1) * block; ++j) {
      ts += t[j];
      rs += intensity[j] / (amp * std::exp(-t[j] / t1)) - 1.0;
    }
    tb[i] = ts / static_cast<double>(block);
    residual[i] = rs / static_cast<double>(block);
  }
  const double duration = tb.back() - tb.front();
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(i) / static_cast<double>(n - 1));
    wsum += window[i];
  }
  // Remove the windowed mean so the DC leakage does not dominate.
  double wmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) wmean += window[i] * residual[i];
  wmean /= wsum;

  const double dt = duration / static_cast<double>(n - 1);
  const double f_lo = 2.0 / duration;
  const double f_hi = 0.5 / dt;
  const double df = 1.0 / (16.0 * duration);
  if (!(f_hi > f_lo)) {
    out.message = "record too short to resolve any beat";
    return out;
  }
  std::vector<double> freq, power;
  for (double f = f_lo; f <= f_hi; f += df) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += window[i] * (residual[i] - wmean) * std::polar(1.0, -two_pi * f * tb[i]);
    freq.push_back(f);
    power.push_back(std::norm(acc));
  }
  const auto peak_it = std::max_element(power.begin(), power.end());
  const auto k = static_cast<std::size_t>(peak_it - power.begin());
  std::vector<double> sorted = power;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double f_peak = freq[k];
  if (k > 0 && k + 1 < power.size()) {
    const double a = power[k - 1], b = power[k], c = power[k + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) f_peak += 0.5 * (a - c) / denom * df;
  }
  out.power_ratio = median > 0.0 ? *peak_it / median : std::numeric_limits<double>::infinity();
  out.relative_amplitude = 2.0 * std::sqrt(*peak_it) / wsum;
  out.frequency_ghz = f_peak;
  out.found = out.power_ratio >= 5.0 && out.relative_amplitude >= 1e-4;
  if (!out.found) {
    out.message = "no significant periodogram peak";
    out.frequency_ghz = 0.0;
  }
  return out;
}

BeatResult beat_frequency(const Trajectory& trajectory, double t_from) {
  std::vector<double> t, y;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (trajectory.times[i] < t_from) continue;
    t.push_back(trajectory.times[i]);
    y.push_back(trajectory.intensity[i]);
  }
  return beat_frequency(t, y);
}

}  // namespace pulsedrf
