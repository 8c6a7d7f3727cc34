#include "pulsedrf/drive.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace pulsedrf {

namespace {

// Tails beyond these limits are below 1e-14 of the peak amplitude.
constexpr double gaussian_cut_sigmas = 8.0;
constexpr double lognormal_cut_sigmas = 10.0;

void validate(const EnvelopeParameters& p) {
  if (p.shape == PulseShape::Continuous) {
    if (!std::isfinite(p.cw_amplitude) || p.cw_amplitude < 0.0)
      throw std::invalid_argument("continuous amplitude must be finite and >= 0");
    return;
  }
  if (!(p.width > 0.0) || !std::isfinite(p.width)) throw std::invalid_argument("pulse width must be > 0");
  if (!(p.area >= 0.0) || !std::isfinite(p.area)) throw std::invalid_argument("pulse area must be >= 0");
  if (!(p.period > p.width)) throw std::invalid_argument("pulse period must exceed the pulse width");
  if (!(p.extinction_floor >= 0.0 && p.extinction_floor < 1.0))
    throw std::invalid_argument("extinction floor must lie in [0, 1)");
  if (!std::isfinite(p.delay)) throw std::invalid_argument("pulse delay must be finite");
  if (p.pattern.empty() || p.pattern.find_first_not_of("01") != std::string::npos)
    throw std::invalid_argument("pulse pattern must be a non-empty string of 0/1");
}

double chirp_quadratic(const ChirpCoefficients& c, double x) {
  return c.p0 + c.p1 * x + c.p2 * x * x;
}

double chirp_peak(const EnvelopeParameters& p) {
  double peak = std::max(chirp_quadratic(p.chirp, 0.0), chirp_quadratic(p.chirp, p.width));
  if (p.chirp.p2 != 0.0) {
    const double vertex = -p.chirp.p1 / (2.0 * p.chirp.p2);
    if (vertex > 0.0 && vertex < p.width) peak = std::max(peak, chirp_quadratic(p.chirp, vertex));
  }
  if (!(peak > 0.0)) throw std::invalid_argument("chirped envelope is not normalizable (P0 + P1 t + P2 t^2 <= 0)");
  return peak;
}

double unit_profile(const EnvelopeParameters& p, double chirp_max, double x) {
  switch (p.shape) {
    case PulseShape::Rectangular:
      return (x >= 0.0 && x < p.width) ? 1.0 : 0.0;
    case PulseShape::Gaussian: {
      const double sigma = gaussian_amplitude_sigma(p.width);
      const double u = (x - gaussian_cut_sigmas * sigma) / sigma;
      if (std::abs(u) > gaussian_cut_sigmas) return 0.0;
      return std::exp(-0.5 * u * u);
    }
    case PulseShape::Lognormal: {
      if (x <= 0.0) return 0.0;
      const auto [m, s] = lognormal_parameters(p.width);
      const double u = std::log(x) - m;
      if (std::abs(u) > lognormal_cut_sigmas * s) return 0.0;
      // Amplitude is the square root of the intensity profile.
      return std::exp(-u * u / (4.0 * s * s));
    }
    case PulseShape::ChirpedFlat: {
      if (x < 0.0 || x >= p.width) return 0.0;
      return std::sqrt(std::max(0.0, chirp_quadratic(p.chirp, x)) / chirp_max);
    }
    case PulseShape::Continuous:
      return 1.0;
  }
  return 0.0;
}

std::pair<double, double> profile_support(const EnvelopeParameters& p) {
  switch (p.shape) {
    case PulseShape::Gaussian:
      return {0.0, 2.0 * gaussian_cut_sigmas * gaussian_amplitude_sigma(p.width)};
    case PulseShape::Lognormal: {
      const auto [m, s] = lognormal_parameters(p.width);
      return {std::exp(m - lognormal_cut_sigmas * s), std::exp(m + lognormal_cut_sigmas * s)};
    }
    case PulseShape::Continuous:
      return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    default:
      return {0.0, p.width};
  }
}

long long floor_mod(long long a, long long n) {
  const long long r = a % n;
  return r < 0 ? r + n : r;
}

}  // namespace

double gaussian_amplitude_sigma(double width) {
  return width / (2.0 * std::sqrt(std::numbers::ln2));
}

std::pair<double, double> lognormal_parameters(double width) {
  // Half-maximum points sit at mode * exp(+-a), a = s sqrt(2 ln 2), so the
  // FWHM is width * sinh(a); FWHM = width fixes sinh(a) = 1.
  const double s = std::asinh(1.0) / std::sqrt(2.0 * std::numbers::ln2);
  return {std::log(width / 2.0), s};
}

double calibrate_amplitude(const EnvelopeParameters& params) {
  validate(params);
  const double w = params.width;
  double integral = 0.0;
  switch (params.shape) {
    case PulseShape::Continuous:
      return params.cw_amplitude;
    case PulseShape::Rectangular:
      integral = w;
      break;
    case PulseShape::Gaussian:
      integral = gaussian_amplitude_sigma(w) * std::sqrt(2.0 * std::numbers::pi);
      break;
    case PulseShape::Lognormal: {
      const auto [m, s] = lognormal_parameters(w);
      integral = std::exp(m + s * s) * 2.0 * s * std::sqrt(std::numbers::pi);
      break;
    }
    case PulseShape::ChirpedFlat: {
      const double peak = chirp_peak(params);
      auto f = [&](double x) { return std::sqrt(std::max(0.0, chirp_quadratic(params.chirp, x)) / peak); };
      integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, w, 20, 1e-13);
      break;
    }
  }
  if (!(integral > 0.0)) throw std::invalid_argument("envelope is not normalizable");
  return params.area / integral;
}

DriveEnvelope::DriveEnvelope(EnvelopeParameters params) : params_(std::move(params)) {
  amplitude_ = calibrate_amplitude(params_);
  if (params_.shape == PulseShape::ChirpedFlat) chirp_peak_ = chirp_peak(params_);
  floor_amplitude_ = pulsed() ? amplitude_ * std::sqrt(params_.extinction_floor) : 0.0;
  support_ = profile_support(params_);
}

DriveEnvelope DriveEnvelope::continuous(double omega) {
  EnvelopeParameters p;
  p.shape = PulseShape::Continuous;
  p.cw_amplitude = omega;
  return DriveEnvelope(p);
}

bool DriveEnvelope::periodic() const { return pulsed() && std::isfinite(params_.period); }

double DriveEnvelope::profile(double x) const { return unit_profile(params_, chirp_peak_, x); }

double DriveEnvelope::pulse_start(long long k) const {
  if (!periodic()) return params_.delay;
  return params_.delay + static_cast<double>(k) * params_.period;
}

bool DriveEnvelope::fires(long long k) const {
  if (!periodic()) return k == 0 && params_.pattern.front() == '1';
  const auto n = static_cast<long long>(params_.pattern.size());
  return params_.pattern[static_cast<std::size_t>(floor_mod(k, n))] == '1';
}

double DriveEnvelope::operator()(double t) const {
  if (!pulsed()) return amplitude_;
  double sum = 0.0;
  if (!periodic()) {
    if (fires(0)) sum = profile(t - params_.delay);
  } else {
    const double T = params_.period;
    const auto k_lo = static_cast<long long>(std::ceil((t - support_.second - params_.delay) / T));
    const auto k_hi = static_cast<long long>(std::floor((t - support_.first - params_.delay) / T));
    for (long long k = k_lo; k <= k_hi; ++k)
      if (fires(k)) sum += profile(t - pulse_start(k));
  }
  return std::max(amplitude_ * sum, floor_amplitude_);
}

double DriveEnvelope::quiet_after() const {
  if (!pulsed()) return amplitude_ == 0.0 ? -std::numeric_limits<double>::infinity()
                                          : std::numeric_limits<double>::infinity();
  if (periodic()) return std::numeric_limits<double>::infinity();
  return params_.delay + support_.second;
}

double half_maximum_width(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("half_maximum_width: need >= 3 samples");
  const auto peak_it = std::max_element(y.begin(), y.end());
  const std::size_t peak = static_cast<std::size_t>(peak_it - y.begin());
  const double half = 0.5 * *peak_it;
  std::size_t above = 0;
  for (double v : y) above += v > half ? 1 : 0;
  if (above < 3) throw std::invalid_argument("grid too coarse to resolve the FWHM (fewer than 3 samples above half maximum)");
  std::size_t lo = peak;
  while (lo > 0 && y[lo - 1] > half) --lo;
  std::size_t hi = peak;
  while (hi + 1 < y.size() && y[hi + 1] > half) ++hi;
  if (lo == 0 || hi + 1 == y.size())
    throw std::invalid_argument("grid does not reach the half-maximum on both sides of the peak");
  auto cross = [&](std::size_t a, std::size_t b) {
    return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a]);
  };
  return cross(hi, hi + 1) - cross(lo - 1, lo);
}

PulseSpectrum pulse_spectrum(const DriveEnvelope& env, std::span<const double> frequency_ghz) {
  if (!env.pulsed()) throw std::invalid_argument("pulse_spectrum requires a pulsed envelope");
  if (frequency_ghz.size() < 3) throw std::invalid_argument("pulse_spectrum: frequency grid too small");
  const double w = env.parameters().width;
  double f_max = 0.0;
  for (double f : frequency_ghz) f_max = std::max(f_max, std::abs(f));

  // Practical window: drop tails below 1e-9 of the peak amplitude.
  auto [x0, x1] = env.support();
  const double dx = std::min(w / 200.0, 1.0 / (40.0 * std::max(f_max, 1e-12)));
  const double coarse = (x1 - x0) / 2000.0;
  while (x1 - coarse > x0 && env.profile(x1 - coarse) < 1e-9) x1 -= coarse;
  // Midpoint rule: hard pulse edges fall on cell boundaries, never on nodes.
  const auto n = static_cast<std::size_t>(std::ceil((x1 - x0) / dx));
  const double step = (x1 - x0) / static_cast<double>(n);

  std::vector<double> samples(n);
  for (std::size_t i = 0; i < n; ++i) samples[i] = env.profile(x0 + step * (static_cast<double>(i) + 0.5));

  PulseSpectrum out;
  out.frequency_ghz.assign(frequency_ghz.begin(), frequency_ghz.end());
  out.intensity.resize(frequency_ghz.size());
  for (std::size_t k = 0; k < frequency_ghz.size(); ++k) {
    const double omega = 2.0 * std::numbers::pi * frequency_ghz[k];
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += samples[i] * std::polar(1.0, -omega * (x0 + step * (static_cast<double>(i) + 0.5)));
    out.intensity[k] = std::norm(acc * step);
  }
  const double peak = *std::max_element(out.intensity.begin(), out.intensity.end());
  if (!(peak > 0.0)) throw std::invalid_argument("pulse_spectrum: zero spectrum");
  for (double& v : out.intensity) v /= peak;
  out.fwhm_ghz = half_maximum_width(out.frequency_ghz, out.intensity);
  return out;
}

std::string to_string(PulseShape shape) {
  switch (shape) {
    case PulseShape::Rectangular: return "Rectangular";
    case PulseShape::Gaussian: return "Gaussian";
    case PulseShape::Lognormal: return "Lognormal";
    case PulseShape::ChirpedFlat: return "ChirpedFlat";
    case PulseShape::Continuous: return "Continuous";
  }
  return "?";
}

PulseShape parse_pulse_shape(const std::string& name) {
  auto lower = [](std::string v) {
    for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return v;
  };
  for (auto s : {PulseShape::Rectangular, PulseShape::Gaussian, PulseShape::Lognormal,
                 PulseShape::ChirpedFlat, PulseShape::Continuous})
    if (lower(to_string(s)) == lower(name)) return s;
  throw std::invalid_argument("unknown pulse shape '" + name + "'");
}

}  // namespace pulsedrf
