#include "pulsedrf/correlation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "pulsedrf/parallel.hpp"

namespace pulsedrf {

namespace {

// Fixed partition of the t1 loop; the reduction order never depends on the
// worker count.
constexpr std::size_t correlation_chunks = 16;

using Readout = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, 9>;

Superoperator collapse_map(const EmitterModel& model) {
  const Eigen::Index d = model.dimension();
  const Operator D = model.detection_operator();
  Superoperator j(d * d, d * d);
  for (Eigen::Index k = 0; k < d * d; ++k) {
    HermitianVector e = HermitianVector::Zero(d * d);
    e(k) = 1.0;
    const Operator b = from_hermitian_vector(e, d);
    j.col(k) = to_hermitian_vector(D * b * D.adjoint());
  }
  return j;
}

double uniform_spacing(std::span<const double> tau) {
  if (tau.size() < 2) throw std::invalid_argument("correlation grid needs at least two samples");
  const double d = (tau.back() - tau.front()) / static_cast<double>(tau.size() - 1);
  if (!(d > 0.0)) throw std::invalid_argument("correlation grid must be increasing");
  for (std::size_t i = 1; i < tau.size(); ++i)
    if (std::abs(tau[i] - tau[i - 1] - d) > 1e-6 * d)
      throw std::invalid_argument("correlation grid must be uniform");
  return d;
}

// tau-grid accumulation for one chunk of t1 values; N is the Liouville-space
// dimension (4 or 9).
template <int N>
void accumulate_chunk(const std::vector<Superoperator>& blocks_in, bool wraps, const Superoperator& jump_in,
                      const Readout& readout_in, const std::vector<HermitianVector>& states,
                      std::size_t first_block, std::size_t k_begin, std::size_t k_end,
                      std::size_t tau_count, bool triangular, std::vector<CompensatedSum>& acc) {
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;
  std::vector<Mat> blocks(blocks_in.size());
  for (std::size_t b = 0; b < blocks_in.size(); ++b) blocks[b] = blocks_in[b];
  const Mat jump = jump_in;
  const Eigen::Matrix<double, 1, N> readout = readout_in;
  const std::size_t stored = blocks.size();
  for (std::size_t k = k_begin; k < k_end; ++k) {
    Vec y = jump * Vec(states[k]);
    const std::size_t limit = triangular ? std::min(tau_count, states.size() - k) : tau_count;
    std::size_t b = first_block + k;
    if (wraps) b %= stored;
    for (std::size_t j = 0; j < limit; ++j) {
      acc[j].add(readout.dot(y));
      if (j + 1 == limit) break;
      y = blocks[b] * y;
      if (++b == stored && wraps) b = 0;
    }
  }
}

void accumulate(int n, const BlockPropagator& prop, const std::vector<Superoperator>& blocks,
                const Superoperator& jump, const Readout& readout, const std::vector<HermitianVector>& states,
                std::size_t first_block, std::size_t k_begin, std::size_t k_end, std::size_t tau_count,
                bool triangular, std::vector<CompensatedSum>& acc) {
  if (n == 4)
    accumulate_chunk<4>(blocks, prop.wraps(), jump, readout, states, first_block, k_begin, k_end, tau_count,
                        triangular, acc);
  else
    accumulate_chunk<9>(blocks, prop.wraps(), jump, readout, states, first_block, k_begin, k_end, tau_count,
                        triangular, acc);
}

std::vector<Superoperator> copy_blocks(const BlockPropagator& prop) {
  std::vector<Superoperator> out;
  out.reserve(prop.stored_blocks());
  for (std::size_t b = 0; b < prop.stored_blocks(); ++b) out.push_back(prop.block(b));
  return out;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

const PeakEntry& PeakTable::at(int n) const {
  for (const auto& e : entries)
    if (e.n == n) return e;
  throw std::out_of_range("peak table has no entry for n = " + std::to_string(n));
}

std::size_t CorrelationRecord::zero_index() const {
  if (tau.empty()) throw std::logic_error("empty correlation record");
  const auto it = std::min_element(tau.begin(), tau.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); });
  return static_cast<std::size_t>(it - tau.begin());
}

void HistogramData::validate() const {
  if (bin_center.size() != counts.size()) throw std::invalid_argument("histogram: bin and count sizes differ");
  if (bin_center.size() < 2) throw std::invalid_argument("histogram: need at least two bins");
  for (auto c : counts)
    if (c < 0) throw std::invalid_argument("histogram: negative counts");
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin width must be positive");
  for (std::size_t i = 1; i < bin_center.size(); ++i)
    if (std::abs(bin_center[i] - bin_center[i - 1] - bin_width) > 1e-6 * bin_width)
      throw std::invalid_argument("histogram: non-uniform bins at row " + std::to_string(i + 1));
}

HistogramData read_histogram_csv(const std::filesystem::path& path, double acquisition_time) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open histogram " + path.string());
  HistogramData h;
  h.acquisition_time = acquisition_time;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected bin_center_ns,counts");
    const std::string a = line.substr(0, comma);
    const std::string b = line.substr(comma + 1);
    double center = 0.0;
    std::int64_t count = 0;
    const auto ra = std::from_chars(a.data(), a.data() + a.size(), center);
    const auto rb = std::from_chars(b.data(), b.data() + b.size(), count);
    const bool ok = ra.ec == std::errc() && ra.ptr == a.data() + a.size() && rb.ec == std::errc() &&
                    rb.ptr == b.data() + b.size();
    if (!ok) {
      if (h.bin_center.empty() && h.counts.empty() && line_no == 1) continue;  // header
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    }
    h.bin_center.push_back(center);
    h.counts.push_back(count);
  }
  if (h.bin_center.size() >= 2) h.bin_width = h.bin_center[1] - h.bin_center[0];
  h.validate();
  return h;
}

CorrelationRecord two_time_correlation(const EmitterModel& model, const DriveEnvelope& env,
                                       const CorrelationOptions& options) {
  if (!env.pulsed()) throw std::invalid_argument("two_time_correlation needs a pulsed envelope; use cw_correlation");
  if (options.t1_stride == 0) throw std::invalid_argument("t1 stride must be >= 1");
  if (options.initial_state && options.initial_state->dimension() != model.dimension())
    throw std::invalid_argument("initial state dimension does not match the model");
  const bool periodic = env.periodic();
  if (periodic && options.n_side == 0) throw std::invalid_argument("n_side must be >= 1");

  double h = options.step > 0.0 ? options.step : default_step(model, env);
  const auto stride = options.t1_stride;
  double spacing = h * static_cast<double>(stride);
  const double w = env.parameters().width;
  if (spacing > w / 10.0 * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "t1 spacing " << spacing << " ns exceeds w/10 = " << w / 10.0 << " ns; reduce the step or t1 stride";
    throw NumericalGuardError(msg.str());
  }

  const Eigen::Index d = model.dimension();
  const int n = static_cast<int>(d * d);
  const Superoperator jump = collapse_map(model);
  const Readout readout = expectation_functional(model.intensity_operator());
  const HermitianVector start =
      to_hermitian_vector(options.initial_state ? options.initial_state->entries() : DensityMatrix::pure(d, 0).entries());

  CorrelationRecord rec;
  std::vector<HermitianVector> states;
  std::size_t first_block = 0;
  std::size_t tau_count = 0;
  std::size_t per_period = 0;
  std::unique_ptr<BlockPropagator> prop;

  if (periodic) {
    const double T = env.parameters().period;
    per_period = static_cast<std::size_t>(std::ceil(T / spacing - 1e-9));
    if (per_period % 2 == 1) ++per_period;
    spacing = T / static_cast<double>(per_period);
    h = spacing / static_cast<double>(stride);
    const std::size_t cycle_blocks = per_period * env.parameters().pattern.size();
    prop = std::make_unique<BlockPropagator>(model, env, h, stride, cycle_blocks);
    if (!prop->wraps()) throw std::logic_error("periodic propagator failed to wrap");
    const std::size_t warm = options.initial_state ? 0 : options.warmup_periods * cycle_blocks;
    HermitianVector x = start;
    for (std::size_t b = 0; b < warm; ++b) x = prop->block(b) * x;
    first_block = warm % cycle_blocks;
    states.reserve(cycle_blocks);
    for (std::size_t k = 0; k < cycle_blocks; ++k) {
      states.push_back(x);
      x = prop->block(first_block + k) * x;
    }
    tau_count = options.n_side * per_period + per_period / 2 + 1;
    rec.period = T;
    rec.n_side = options.n_side;
  } else {
    const double tail = options.decay_tail > 0.0 ? options.decay_tail : 30.0 * model.t1();
    const double t_end = env.quiet_after() + tail;
    const auto count = static_cast<std::size_t>(std::ceil(t_end / spacing));
    prop = std::make_unique<BlockPropagator>(model, env, h, stride, count);
    HermitianVector x = start;
    states.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      states.push_back(x);
      x = prop->block(k) * x;
    }
    tau_count = count;
    rec.n_side = 0;
  }
  rec.step = h;
  rec.t1_spacing = spacing;

  const std::vector<Superoperator> blocks = copy_blocks(*prop);
  const std::size_t m = states.size();
  const std::size_t chunks = std::min(correlation_chunks, m);
  std::vector<std::vector<CompensatedSum>> partial(chunks, std::vector<CompensatedSum>(tau_count));
  parallel_for(chunks, std::max(options.threads, 1u), [&](std::size_t c) {
    const std::size_t k0 = m * c / chunks;
    const std::size_t k1 = m * (c + 1) / chunks;
    accumulate(n, *prop, blocks, jump, readout, states, first_block, k0, k1, tau_count, !periodic, partial[c]);
  });

  std::vector<double> half(tau_count);
  for (std::size_t j = 0; j < tau_count; ++j) {
    CompensatedSum s;
    for (std::size_t c = 0; c < chunks; ++c) {
      s.add(partial[c][j].sum);
      s.add(partial[c][j].carry);
    }
    half[j] = spacing * s.value();
  }

  const std::size_t total = 2 * tau_count - 1;
  rec.tau.resize(total);
  rec.raw.resize(total);
  for (std::size_t j = 0; j < tau_count; ++j) {
    const double t = spacing * static_cast<double>(j);
    rec.tau[tau_count - 1 + j] = t;
    rec.tau[tau_count - 1 - j] = -t;
    rec.raw[tau_count - 1 + j] = half[j];
    rec.raw[tau_count - 1 - j] = half[j];
  }

  CompensatedSum photons, square;
  for (const auto& x : states) {
    const double i = readout.dot(x);
    photons.add(spacing * i);
    square.add(spacing * i * i);
  }
  rec.intensity_integral = photons.value();
  if (periodic) {
    rec.pulses_in_window = static_cast<std::size_t>(
        std::count(env.parameters().pattern.begin(), env.parameters().pattern.end(), '1'));
    rec.peaks = normalize_pulsed(rec.tau, rec.raw, rec.period, rec.n_side);
  } else {
    rec.pulses_in_window = env.fires(0) ? 1 : 0;
    CompensatedSum area;
    for (double r : rec.raw) area.add(spacing * r);
    const double mean_n = photons.value();
    if (!(mean_n > 0.0)) throw std::invalid_argument("no emission: the single-pulse correlation is undefined");
    PeakTable t;
    t.mean_side_area = mean_n * mean_n;
    t.mean_side_maximum = square.value();
    t.entries.push_back({0, 0.0, area.value(), area.value() / t.mean_side_area, 0.0});
    rec.peaks = t;
  }
  rec.g2.resize(total);
  for (std::size_t i = 0; i < total; ++i) rec.g2[i] = rec.raw[i] / rec.peaks.mean_side_maximum;
  return rec;
}

PeakTable normalize_pulsed(std::span<const double> tau, std::span<const double> raw, double period,
                           std::size_t n_side) {
  if (tau.size() != raw.size()) throw std::invalid_argument("tau and raw sizes differ");
  if (!(period > 0.0) || !std::isfinite(period)) throw std::invalid_argument("period must be positive and finite");
  if (n_side == 0) throw std::invalid_argument("n_side must be >= 1");
  const double d = uniform_spacing(tau);
  const double reach = (static_cast<double>(n_side) + 0.5) * period;
  if (tau.front() - 0.5 * d > -reach + 1e-9 * period || tau.back() + 0.5 * d < reach - 1e-9 * period)
    throw std::invalid_argument("record does not cover n_side full peaks on each side of zero delay");

  const int ns = static_cast<int>(n_side);
  const std::size_t slots = 2 * n_side + 1;
  std::vector<double> area(slots, 0.0), peak_max(slots, 0.0);
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double lo = tau[i] - 0.5 * d;
    const double hi = tau[i] + 0.5 * d;
    const int n_lo = static_cast<int>(std::floor(lo / period + 0.5));
    const int n_hi = static_cast<int>(std::floor(hi / period + 0.5));
    for (int pn = std::max(n_lo, -ns); pn <= std::min(n_hi, ns); ++pn) {
      const double a = std::max(lo, (pn - 0.5) * period);
      const double b = std::min(hi, (pn + 0.5) * period);
      if (b <= a) continue;
      const auto slot = static_cast<std::size_t>(pn + ns);
      area[slot] += raw[i] * (b - a);
      if (std::abs(tau[i] - pn * period) <= 0.5 * period) peak_max[slot] = std::max(peak_max[slot], raw[i]);
    }
  }

  PeakTable table;
  std::vector<double> side_area, side_max;
  for (int pn = -ns; pn <= ns; ++pn) {
    if (pn == 0) continue;
    side_area.push_back(area[static_cast<std::size_t>(pn + ns)]);
    side_max.push_back(peak_max[static_cast<std::size_t>(pn + ns)]);
  }
  table.mean_side_area = mean(side_area);
  table.mean_side_maximum = mean(side_max);
  if (!(table.mean_side_area > 0.0)) throw std::invalid_argument("side peaks carry no signal; cannot normalize");
  for (int pn = -ns; pn <= ns; ++pn) {
    const double a = area[static_cast<std::size_t>(pn + ns)];
    table.entries.push_back({pn, pn * period, a, a / table.mean_side_area, 0.0});
  }

  // Minimum between adjacent side peaks, averaged over the gaps.
  std::vector<double> gaps;
  for (int pn = 1; pn < ns; ++pn) {
    for (int sign : {-1, 1}) {
      const double a = sign * pn * period;
      const double b = sign * (pn + 1) * period;
      double lowest = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < tau.size(); ++i)
        if (tau[i] >= std::min(a, b) && tau[i] <= std::max(a, b)) lowest = std::min(lowest, raw[i]);
      if (std::isfinite(lowest)) gaps.push_back(lowest);
    }
  }
  if (!gaps.empty()) table.quasi_cw = mean(gaps) > 0.2 * table.mean_side_maximum;
  return table;
}

PeakTable normalize_pulsed(const CorrelationRecord& record, double period, std::size_t n_side) {
  return normalize_pulsed(record.tau, record.raw, period, n_side);
}

PeakTable normalize_pulsed(const HistogramData& histogram, double period, std::size_t n_side) {
  histogram.validate();
  if (!(period > 0.0) || !std::isfinite(period)) throw std::invalid_argument("period must be positive and finite");
  if (n_side == 0) throw std::invalid_argument("n_side must be >= 1");
  const double bw = histogram.bin_width;
  const double reach = (static_cast<double>(n_side) + 0.5) * period;
  if (histogram.bin_center.front() - 0.5 * bw > -reach + 1e-9 * period ||
      histogram.bin_center.back() + 0.5 * bw < reach - 1e-9 * period)
    throw std::invalid_argument("histogram does not cover n_side full peaks on each side of zero delay");

  const int ns = static_cast<int>(n_side);
  const std::size_t slots = 2 * n_side + 1;
  std::vector<double> area(slots, 0.0), peak_max(slots, 0.0);
  for (std::size_t i = 0; i < histogram.bin_center.size(); ++i) {
    const int pn = static_cast<int>(std::floor(histogram.bin_center[i] / period + 0.5));
    if (pn < -ns || pn > ns) continue;
    const auto slot = static_cast<std::size_t>(pn + ns);
    const auto c = static_cast<double>(histogram.counts[i]);
    area[slot] += c;
    peak_max[slot] = std::max(peak_max[slot], c);
  }
  PeakTable table;
  double side_total = 0.0, side_max = 0.0;
  for (int pn = -ns; pn <= ns; ++pn) {
    if (pn == 0) continue;
    side_total += area[static_cast<std::size_t>(pn + ns)];
    side_max += peak_max[static_cast<std::size_t>(pn + ns)];
  }
  const double sides = 2.0 * static_cast<double>(n_side);
  table.mean_side_area = side_total / sides;
  table.mean_side_maximum = side_max / sides;
  if (!(table.mean_side_area > 0.0)) throw std::invalid_argument("side peaks are empty; cannot normalize");
  const double m = table.mean_side_area;
  const double sigma_m = std::sqrt(side_total) / sides;
  for (int pn = -ns; pn <= ns; ++pn) {
    const double a = area[static_cast<std::size_t>(pn + ns)];
    const double sigma = std::sqrt(a / (m * m) + (a * sigma_m / (m * m)) * (a * sigma_m / (m * m)));
    table.entries.push_back({pn, pn * period, a * bw, a / m, sigma});
  }
  std::vector<double> gaps;
  for (int pn = 1; pn < ns; ++pn) {
    for (int sign : {-1, 1}) {
      const double lo = std::min(sign * pn * period, sign * (pn + 1) * period);
      const double hi = std::max(sign * pn * period, sign * (pn + 1) * period);
      double lowest = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < histogram.bin_center.size(); ++i)
        if (histogram.bin_center[i] >= lo && histogram.bin_center[i] <= hi)
          lowest = std::min(lowest, static_cast<double>(histogram.counts[i]));
      if (std::isfinite(lowest)) gaps.push_back(lowest);
    }
  }
  if (!gaps.empty()) table.quasi_cw = mean(gaps) > 0.2 * table.mean_side_maximum;
  for (auto& e : table.entries) e.area /= bw;  // counts, not counts x ns
  return table;
}

CorrelationRecord record_from_samples(std::vector<double> tau, std::vector<double> raw, double period,
                                      std::size_t n_side) {
  if (tau.size() != raw.size()) throw std::invalid_argument("tau and raw sizes differ");
  const double d = uniform_spacing(tau);
  CorrelationRecord rec;
  rec.tau = std::move(tau);
  rec.raw = std::move(raw);
  rec.period = period;
  rec.n_side = n_side;
  rec.step = d;
  rec.t1_spacing = d;
  if (std::isfinite(period)) {
    rec.peaks = normalize_pulsed(rec.tau, rec.raw, period, n_side);
  } else {
    CompensatedSum area;
    for (double r : rec.raw) area.add(d * r);
    const double top = *std::max_element(rec.raw.begin(), rec.raw.end());
    if (!(top > 0.0)) throw std::invalid_argument("record carries no signal");
    rec.peaks.mean_side_area = area.value();
    rec.peaks.mean_side_maximum = top;
    rec.peaks.entries.push_back({0, 0.0, area.value(), 1.0, 0.0});
  }
  rec.g2.resize(rec.raw.size());
  for (std::size_t i = 0; i < rec.raw.size(); ++i) rec.g2[i] = rec.raw[i] / rec.peaks.mean_side_maximum;
  return rec;
}

double continuous_g2_center(const CorrelationRecord& record) {
  if (record.irf_fwhm > 0.0) throw std::invalid_argument("continuous_g2_center needs a record without IRF convolution");
  const std::size_t z = record.zero_index();
  if (std::abs(record.tau[z]) > 1e-9 * std::max(1.0, record.t1_spacing))
    throw std::invalid_argument("record grid does not contain tau = 0");
  return record.g2[z];
}

CorrelationRecord convolve_irf(const CorrelationRecord& record, double fwhm) {
  if (!(fwhm > 0.0)) throw std::invalid_argument("IRF FWHM must be positive");
  const double d = uniform_spacing(record.tau);
  if (d > fwhm / 10.0 * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "tau spacing " << d << " ns exceeds IRF FWHM/10 = " << fwhm / 10.0 << " ns";
    throw NumericalGuardError(msg.str());
  }
  const double sigma = fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(8.0 * sigma / d));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double norm = 0.0;
  for (std::ptrdiff_t m = -half; m <= half; ++m) {
    const double x = static_cast<double>(m) * d / sigma;
    kernel[static_cast<std::size_t>(m + half)] = std::exp(-0.5 * x * x);
    norm += kernel[static_cast<std::size_t>(m + half)];
  }
  for (double& k : kernel) k /= norm;

  CorrelationRecord out = record;
  const auto n = static_cast<std::ptrdiff_t>(record.raw.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::ptrdiff_t m = -half; m <= half; ++m) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(i - m, 0, n - 1);
      s += kernel[static_cast<std::size_t>(m + half)] * record.raw[static_cast<std::size_t>(src)];
    }
    out.raw[static_cast<std::size_t>(i)] = s;
  }
  out.irf_fwhm = fwhm;
  if (std::isfinite(record.period)) {
    out.peaks = normalize_pulsed(out.tau, out.raw, out.period, out.n_side);
  } else {
    CompensatedSum area;
    for (double r : out.raw) area.add(d * r);
    out.peaks.entries.at(0).area = area.value();
    out.peaks.entries.at(0).g2 = area.value() / out.peaks.mean_side_area;
  }
  for (std::size_t i = 0; i < out.raw.size(); ++i) out.g2[i] = out.raw[i] / out.peaks.mean_side_maximum;
  return out;
}

double cw_g2_analytic(double omega, double t1, double tau) {
  if (!(t1 > 0.0)) throw std::invalid_argument("T1 must be positive");
  tau = std::abs(tau);
  const double gamma = 1.0 / t1;
  const double a = 0.75 * gamma;
  const double mu2 = omega * omega - gamma * gamma / 16.0;
  const double envelope = std::exp(-a * tau);
  double osc;
  if (mu2 > 0.0) {
    const double mu = std::sqrt(mu2);
    osc = std::cos(mu * tau) + a / mu * std::sin(mu * tau);
  } else if (mu2 < 0.0) {
    const double k = std::sqrt(-mu2);
    osc = std::cosh(k * tau) + a / k * std::sinh(k * tau);
  } else {
    osc = 1.0 + a * tau;
  }
  return 1.0 - envelope * osc;
}

Operator steady_state(const EmitterModel& model, double omega) {
  const Eigen::Index d = model.dimension();
  const Superoperator l = build_liouvillian(model).at(omega);
  Superoperator a = l;
  HermitianVector rhs = HermitianVector::Zero(d * d);
  a.row(0).setZero();
  for (Eigen::Index i = 0; i < d; ++i) a(0, i) = 1.0;
  rhs(0) = 1.0;
  Eigen::FullPivLU<Superoperator> lu(a);
  if (!lu.isInvertible()) throw NumericalGuardError("steady state is not unique for this model");
  return from_hermitian_vector(lu.solve(rhs), d);
}

CwCorrelation cw_correlation(const EmitterModel& model, double omega, double tau_max, double h) {
  if (!(tau_max > 0.0) || !(h > 0.0)) throw std::invalid_argument("tau_max and step must be positive");
  const auto steps = static_cast<std::size_t>(std::ceil(tau_max / h - 1e-9));
  h = tau_max / static_cast<double>(steps);
  const Liouvillian l = build_liouvillian(model);
  const Superoperator map = rk4_step_map(l, h, omega, omega, omega);
  const Readout readout = expectation_functional(model.intensity_operator());
  const HermitianVector ss = to_hermitian_vector(steady_state(model, omega));
  const double intensity = readout.dot(ss);
  if (!(intensity > 0.0)) throw std::invalid_argument("no steady-state emission; g2 is undefined");

  CwCorrelation out;
  out.steady_intensity = intensity;
  HermitianVector y = collapse_map(model) * ss;
  out.tau.reserve(steps + 1);
  out.g2.reserve(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j) {
    out.tau.push_back(h * static_cast<double>(j));
    out.g2.push_back(readout.dot(y) / (intensity * intensity));
    y = map * y;
  }
  return out;
}

namespace {

using State = Eigen::Matrix<cplx, Eigen::Dynamic, 1, 0, 3, 1>;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Unraveling {
 public:
  Unraveling(const EmitterModel& model, const DriveEnvelope& env) : env_(env) {
    const Eigen::Index d = model.dimension();
    const RateMatrix& g = model.rates();
    Operator decay = Operator::Zero(d, d);
    auto add = [&](const Operator& c, bool counted) {
      channels_.push_back(c);
      counted_.push_back(counted);
      decay += c.adjoint() * c;
    };
    if (model.kind() == EmitterKind::TwoLevel) {
      if (g(0, 1) > 0.0) add(std::sqrt(g(0, 1)) * model.detection_operator(), true);
    } else {
      if (std::abs(g(0, 1) - g(0, 2)) > 1e-12 * std::max(g(0, 1), g(0, 2)))
        throw std::invalid_argument("jump oracle needs equal dipole rates for the V-type model");
      const Operator D = model.detection_operator();
      const double phi = model.detection_angle();
      Operator perp = Operator::Zero(d, d);
      perp(0, 1) = -std::sin(phi);
      perp(0, 2) = std::cos(phi);
      if (g(0, 1) > 0.0) {
        add(std::sqrt(g(0, 1)) * D, true);
        add(std::sqrt(g(0, 1)) * perp, false);
      }
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      if (g(i, i) > 0.0) {
        Operator c = Operator::Zero(d, d);
        c(i, i) = std::sqrt(g(i, i));
        add(c, false);
      }
    }
    const Operator h0 = model.hamiltonian(0.0);
    const Operator h1 = model.hamiltonian(1.0) - h0;
    // The master equation uses -i[rho, H]: trajectories evolve under -H.
    base_ = cplx(0.0, 1.0) * h0 - 0.5 * decay;
    drive_ = cplx(0.0, 1.0) * h1;
  }

  // psi' = (base + Omega(t) drive) psi
  State derivative(const State& psi, double omega) const { return (base_ + omega * drive_) * psi; }

  State rk4(const State& psi, double t, double dt) const {
    const double o0 = env_(t), o1 = env_(t + 0.5 * dt), o2 = env_(t + dt);
    const State k1 = derivative(psi, o0);
    const State k2 = derivative(psi + 0.5 * dt * k1, o1);
    const State k3 = derivative(psi + 0.5 * dt * k2, o1);
    const State k4 = derivative(psi + dt * k3, o2);
    return psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  Operator free_propagator(double dt) const {
    const Operator g = dt * base_;
    Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic> full = g;
    return full.exp();
  }

  const std::vector<Operator>& channels() const { return channels_; }
  bool counted(std::size_t k) const { return counted_[k]; }

 private:
  const DriveEnvelope& env_;
  Operator base_;
  Operator drive_;
  std::vector<Operator> channels_;
  std::vector<bool> counted_;
};

struct Segment {
  double begin;
  double end;
  double step;
  bool free;  // drive identically zero
};

class TrajectoryRunner {
 public:
  TrajectoryRunner(const Unraveling& u, std::vector<Segment> segments)
      : u_(u), segments_(std::move(segments)) {
    for (const auto& s : segments_) cached_.push_back(s.free ? u_.free_propagator(s.step) : Operator());
  }

  std::size_t run(const State& start, std::mt19937_64& rng) const {
    auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    State psi = start;
    double r = uniform();
    std::size_t photons = 0;
    for (std::size_t si = 0; si < segments_.size(); ++si) {
      const Segment& seg = segments_[si];
      double t = seg.begin;
      while (t < seg.end - 1e-12 * std::max(1.0, seg.end)) {
        const double dt = std::min(seg.step, seg.end - t);
        State next = advance(psi, t, dt, si);
        if (next.squaredNorm() > r) {
          psi = next;
          t += dt;
          if (seg.free && settled(psi)) break;
          continue;
        }
        double lo = 0.0, hi = dt;
        while (hi - lo > 1e-12) {
          const double mid = 0.5 * (lo + hi);
          if (advance(psi, t, mid, si).squaredNorm() > r)
            lo = mid;
          else
            hi = mid;
        }
        psi = advance(psi, t, hi, si);
        t += hi;
        std::vector<double> weight;
        double total = 0.0;
        for (const auto& c : u_.channels()) {
          weight.push_back((c * psi).squaredNorm());
          total += weight.back();
        }
        double pick = uniform() * total;
        std::size_t k = 0;
        while (k + 1 < weight.size() && pick >= weight[k]) pick -= weight[k++];
        psi = u_.channels()[k] * psi;
        psi /= std::sqrt(psi.squaredNorm());
        if (u_.counted(k)) ++photons;
        r = uniform();
      }
    }
    return photons;
  }

 private:
  State advance(const State& psi, double t, double dt, std::size_t si) const {
    const Segment& seg = segments_[si];
    if (!seg.free) return u_.rk4(psi, t, dt);
    if (dt == seg.step) return cached_[si] * psi;
    return u_.free_propagator(dt) * psi;
  }

  static bool settled(const State& psi) {
    const double norm = psi.squaredNorm();
    double excited = 0.0;
    for (Eigen::Index i = 1; i < psi.size(); ++i) excited += std::norm(psi(i));
    return excited < 1e-12 * norm;
  }

  const Unraveling& u_;
  std::vector<Segment> segments_;
  std::vector<Operator> cached_;
};

}  // namespace

JumpOracleResult jump_oracle(const EmitterModel& model, const DriveEnvelope& env, std::size_t trajectories,
                             std::uint64_t seed, const JumpOracleOptions& options) {
  if (trajectories == 0) throw std::invalid_argument("jump_oracle needs at least one trajectory");
  if (!env.pulsed()) throw std::invalid_argument("jump_oracle needs a pulsed envelope");
  const double h = options.step > 0.0 ? options.step : default_step(model, env);
  if (h > resolution_limit(env) * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "step h = " << h << " ns violates the resolution guard; need h <= w/20 = " << resolution_limit(env) << " ns";
    throw NumericalGuardError(msg.str());
  }

  const auto [s0, s1] = env.support();
  const double a = env.pulse_start(0) + s0;
  const double b = env.pulse_start(0) + s1;
  const double tail = options.decay_tail > 0.0 ? options.decay_tail : 30.0 * model.t1();
  const double t_end = env.periodic() ? a + env.parameters().period : b + tail;
  const bool dark = env.floor_amplitude() == 0.0;
  const double coarse = model.t1() / 20.0;
  const double outside = dark ? coarse : std::min(model.t1() / 50.0, 0.1 * env.parameters().width);

  std::vector<Segment> segments;
  const bool leading_clear = !env.periodic() || b - env.parameters().period <= 0.0;
  if (a > 0.0 && !(dark && leading_clear)) segments.push_back({0.0, a, outside, false});
  if (env.fires(0)) segments.push_back({a, b, h, false});
  else segments.push_back({a, b, outside, dark});
  if (t_end > b) segments.push_back({b, t_end, outside, dark});

  const Unraveling unraveling(model, env);
  const TrajectoryRunner runner(unraveling, segments);
  State ground = State::Zero(model.dimension());
  ground(0) = 1.0;

  std::vector<std::size_t> counts(trajectories);
  const std::size_t chunks = std::min<std::size_t>(trajectories, 256);
  parallel_for(chunks, std::max(options.threads, 1u), [&](std::size_t c) {
    const std::size_t i0 = trajectories * c / chunks;
    const std::size_t i1 = trajectories * (c + 1) / chunks;
    for (std::size_t i = i0; i < i1; ++i) {
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(i)));
      counts[i] = runner.run(ground, rng);
    }
  });

  JumpOracleResult res;
  res.trajectories = trajectories;
  double sn = 0.0, sa = 0.0, snn = 0.0, saa = 0.0, san = 0.0;
  for (std::size_t n : counts) {
    if (n >= res.photon_counts.size()) res.photon_counts.resize(n + 1, 0);
    ++res.photon_counts[n];
    const auto x = static_cast<double>(n);
    const double pair = x * (x - 1.0);
    sn += x;
    sa += pair;
    snn += x * x;
    saa += pair * pair;
    san += pair * x;
  }
  const auto N = static_cast<double>(trajectories);
  const double m = sn / N;
  const double q = sa / N;
  res.mean_photons = m;
  if (!(m > 0.0)) {
    res.defined = false;
    res.flag = "no photons detected; G2(0) is undefined";
    res.g2_zero = std::numeric_limits<double>::quiet_NaN();
    res.sigma = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  res.defined = true;
  res.g2_zero = q / (m * m);
  const double var_n = snn / N - m * m;
  const double var_a = saa / N - q * q;
  const double cov = san / N - q * m;
  const double m2 = m * m;
  double var_g = (var_a / (m2 * m2) - 4.0 * q * cov / (m2 * m2 * m) + 4.0 * q * q * var_n / (m2 * m2 * m2)) / N;
  if (q == 0.0) {
    // No coincidences: quote the resolution of a single pair event.
    var_g = std::pow(2.0 / (N * m2), 2);
    res.flag = "no coincidences observed";
  }
  res.sigma = std::sqrt(std::max(var_g, 0.0));
  return res;
}

}  // namespace pulsedrf
