#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "pulsedrf/correlation.hpp"
#include "../support/oracles.hpp"

using namespace pulsedrf;

namespace {

EnvelopeParameters train(double w, double area_pi, double period, PulseShape shape = PulseShape::Gaussian) {
  EnvelopeParameters p;
  p.shape = shape;
  p.width = w;
  p.area = area_pi * std::numbers::pi;
  p.period = period;
  p.extinction_floor = 0.0;
  return p;
}

CorrelationOptions short_window(std::size_t n_side = 2) {
  CorrelationOptions o;
  o.n_side = n_side;
  return o;
}

// Synthetic pulsed correlation: Gaussian peaks of the given areas at n T.
struct Synthetic {
  std::vector<double> tau, raw;
};

Synthetic peak_train(double period, int n_side, double sigma, double d, const std::vector<double>& areas) {
  Synthetic s;
  const int half = static_cast<int>(std::round((n_side + 0.5) * period / d)) + 2;
  for (int i = -half; i <= half; ++i) {
    const double t = i * d;
    double v = 0.0;
    for (int n = -n_side - 1; n <= n_side + 1; ++n) {
      const double a = areas[static_cast<std::size_t>(std::min(std::abs(n), static_cast<int>(areas.size()) - 1))];
      v += a * std::exp(-0.5 * std::pow((t - n * period) / sigma, 2)) / (sigma * std::sqrt(2 * std::numbers::pi));
    }
    s.tau.push_back(t);
    s.raw.push_back(v);
  }
  return s;
}

}  // namespace

TEST_CASE("near-instantaneous pi pulse shows no multiphoton emission") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  EnvelopeParameters p = train(0.001, 1.0, std::numeric_limits<double>::infinity());
  CorrelationOptions o;
  o.decay_tail = 2.0;
  const auto rec = two_time_correlation(m, DriveEnvelope(p), o);
  CHECK(rec.g2_zero() < 0.01);
  CHECK(rec.g2_zero() >= 0.0);
}

TEST_CASE("40 ps pulse agrees with a fine-step reference run") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  const DriveEnvelope env(train(0.04, 0.81, 5.0));
  const auto main = two_time_correlation(m, env, short_window());
  CorrelationOptions fine = short_window();
  fine.step = main.step / 4.0;
  fine.t1_stride = 4;
  const auto ref = two_time_correlation(m, env, fine);
  CHECK(ref.t1_spacing == doctest::Approx(main.t1_spacing / 4.0).epsilon(1e-6));
  CHECK(main.g2_zero() == doctest::Approx(ref.g2_zero()).epsilon(0.05));
}

TEST_CASE("pulsed record invariants") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  const auto rec = two_time_correlation(m, DriveEnvelope(train(0.1, 1.0, 5.0)), short_window(3));
  for (double v : rec.g2) CHECK(v >= -1e-9);
  double side = 0.0;
  int count = 0;
  for (const auto& e : rec.peaks.entries)
    if (e.n != 0) {
      side += e.g2;
      ++count;
    }
  CHECK(count == 6);
  CHECK(side / count == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rec.tau[rec.zero_index()] == 0.0);
  for (std::size_t i = 0; i < rec.tau.size(); ++i)
    CHECK(rec.raw[i] == doctest::Approx(rec.raw[rec.tau.size() - 1 - i]).epsilon(1e-14));
}

TEST_CASE("zero-delay g2 vanishes for a single emitter") {
  SUBCASE("100 ps pi pulse") {
    const auto rec = two_time_correlation(EmitterModel::two_level(0.8, 1.6), DriveEnvelope(train(0.1, 1.0, 5.0)),
                                          short_window());
    CHECK(continuous_g2_center(rec) < 1e-3);
  }
  SUBCASE("V-type train") {
    const auto rec = two_time_correlation(EmitterModel::v_type(0.8, 1.6, two_pi * 3.3),
                                          DriveEnvelope(train(0.1, 1.0, 5.0)), short_window());
    CHECK(continuous_g2_center(rec) < 1e-3);
  }
  SUBCASE("CW resonant drive") {
    const auto cw = cw_correlation(EmitterModel::two_level(0.8, 1.6), 5.0, 1.0, 1e-3);
    CHECK(std::abs(cw.g2.front()) < 1e-3);
  }
  SUBCASE("flat control record is not trivially zero") {
    std::vector<double> tau, raw;
    for (int i = -200; i <= 200; ++i) {
      tau.push_back(i * 0.01);
      raw.push_back(3.7);
    }
    const auto rec = record_from_samples(tau, raw, std::numeric_limits<double>::infinity(), 0);
    CHECK(continuous_g2_center(rec) == doctest::Approx(1.0));
  }
}

TEST_CASE("analytic CW g2 limits and independent oracle") {
  CHECK(cw_g2_analytic(10.0, 0.79, 0.0) == doctest::Approx(0.0).scale(1.0));
  CHECK(cw_g2_analytic(10.0, 0.79, 60.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (double omega : {0.1, 0.3125, 1.0, 10.0}) {
    for (double tau = 0.0; tau < 6.0; tau += 0.173)
      CHECK(cw_g2_analytic(omega, 0.8, tau) == doctest::Approx(oracle::cw_g2_bloch(tau, omega, 0.8)).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("regression-theorem CW g2 matches the analytic curve") {
  for (auto [omega, t1] : {std::pair{10.0, 0.79}, {3.0, 0.25}, {0.8, 1.5}}) {
    const auto cw = cw_correlation(EmitterModel::two_level(t1, 2 * t1), omega, 10 * t1, 1e-3);
    double sup = 0.0;
    for (std::size_t i = 0; i < cw.tau.size(); ++i)
      sup = std::max(sup, std::abs(cw.g2[i] - cw_g2_analytic(omega, t1, cw.tau[i])));
    CHECK(sup < 1e-4);
    CHECK(cw.steady_intensity == doctest::Approx(oracle::steady_population(omega, t1, 2 * t1)).epsilon(1e-10));
  }
}

TEST_CASE("normalization of synthetic peak trains") {
  const double T = 10.0;
  SUBCASE("equal peaks") {
    const auto s = peak_train(T, 4, 0.3, 0.01, {1.0});
    const auto p = normalize_pulsed(s.tau, s.raw, T, 4);
    for (const auto& e : p.entries) CHECK(e.g2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(p.quasi_cw);
  }
  SUBCASE("empty center peak") {
    const auto s = peak_train(T, 4, 0.3, 0.01, {0.0, 1.0});
    CHECK(normalize_pulsed(s.tau, s.raw, T, 4).g2_zero() == doctest::Approx(0.0).scale(1.0));
  }
  SUBCASE("uniform scaling leaves the table unchanged") {
    const auto s = peak_train(T, 3, 0.5, 0.01, {0.3, 1.0});
    std::vector<double> scaled = s.raw;
    for (double& v : scaled) v *= 4.0;  // power of two keeps the comparison exact
    const auto a = normalize_pulsed(s.tau, s.raw, T, 3);
    const auto b = normalize_pulsed(s.tau, scaled, T, 3);
    for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].g2 == b.entries[i].g2);
    std::vector<double> odd = s.raw;
    for (double& v : odd) v *= 3.3;
    const auto c = normalize_pulsed(s.tau, odd, T, 3);
    for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(c.entries[i].g2 == doctest::Approx(a.entries[i].g2).epsilon(1e-14));
  }
  SUBCASE("overlapping peaks raise the quasi-CW flag") {
    const auto s = peak_train(T, 4, 3.0, 0.01, {1.0});
    CHECK(normalize_pulsed(s.tau, s.raw, T, 4).quasi_cw);
  }
  SUBCASE("insufficient coverage") {
    const auto s = peak_train(T, 2, 0.3, 0.01, {1.0});
    CHECK_THROWS_AS(normalize_pulsed(s.tau, s.raw, T, 4), std::invalid_argument);
  }
}

TEST_CASE("high repetition rates are flagged as quasi-CW") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  const auto rec = two_time_correlation(m, DriveEnvelope(train(0.1, 1.0, 1.0)), short_window());
  CHECK(rec.peaks.quasi_cw);
  const auto slow = two_time_correlation(m, DriveEnvelope(train(0.1, 1.0, 12.5)), short_window());
  CHECK_FALSE(slow.peaks.quasi_cw);
}

TEST_CASE("IRF convolution") {
  SUBCASE("delta-like peak becomes the kernel") {
    std::vector<double> tau, raw;
    for (int i = -2000; i <= 2000; ++i) {
      tau.push_back(i * 0.001);
      raw.push_back(i == 0 ? 1.0 : 0.0);
    }
    const auto rec = record_from_samples(tau, raw, std::numeric_limits<double>::infinity(), 0);
    const auto conv = convolve_irf(rec, 0.15);
    CHECK(half_maximum_width(conv.tau, conv.raw) == doctest::Approx(0.15).epsilon(1e-3));
    double area = 0.0;
    for (double v : conv.raw) area += v;
    CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("isolated peak areas are preserved") {
    const double T = 10.0;
    const auto s = peak_train(T, 3, 0.2, 0.005, {0.1, 1.0});
    const auto rec = record_from_samples(s.tau, s.raw, T, 3);
    const auto conv = convolve_irf(rec, 0.15);
    for (std::size_t i = 0; i < rec.peaks.entries.size(); ++i)
      CHECK(conv.peaks.entries[i].area == doctest::Approx(rec.peaks.entries[i].area).epsilon(1e-6));
  }
  SUBCASE("simulated 20 MHz train") {
    const auto rec = two_time_correlation(EmitterModel::two_level(0.79, 1.58), DriveEnvelope(train(0.1, 1.0, 50.0)),
                                          short_window());
    const auto conv = convolve_irf(rec, 0.15);
    CHECK(std::abs(conv.g2_zero() - rec.g2_zero()) < 1e-6);
    CHECK(conv.g2[conv.zero_index()] > rec.g2[rec.zero_index()]);
    CHECK(conv.irf_fwhm == 0.15);
    CHECK_THROWS_AS(continuous_g2_center(conv), std::invalid_argument);
  }
  SUBCASE("grid guard") {
    const auto s = peak_train(10.0, 1, 0.2, 0.02, {1.0});
    const auto rec = record_from_samples(s.tau, s.raw, 10.0, 1);
    CHECK_THROWS_AS(convolve_irf(rec, 0.15), NumericalGuardError);
  }
}

TEST_CASE("G2(0) grows with pulse width") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  double last = 0.0;
  for (double w : {0.01, 0.03, 0.06, 0.1, 0.2, 0.3}) {
    const auto rec = two_time_correlation(m, DriveEnvelope(train(w, 1.0, 5.0)), short_window(1));
    CHECK(rec.g2_zero() >= last);
    last = rec.g2_zero();
  }
}

TEST_CASE("correlation is independent of the thread count") {
  const EmitterModel m = EmitterModel::v_type(0.8, 1.6, two_pi * 3.3);
  const DriveEnvelope env(train(0.1, 1.0, 5.0));
  CorrelationOptions a = short_window(), b = short_window();
  a.threads = 1;
  b.threads = 4;
  const auto ra = two_time_correlation(m, env, a);
  const auto rb = two_time_correlation(m, env, b);
  CHECK(ra.raw == rb.raw);
  CHECK(ra.g2_zero() == rb.g2_zero());
}

TEST_CASE("correlation argument checks") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  CorrelationOptions coarse;
  coarse.step = 0.004;
  CHECK_THROWS_AS(two_time_correlation(m, DriveEnvelope(train(0.1, 1.0, 5.0)), coarse), NumericalGuardError);
  CHECK_THROWS_AS(two_time_correlation(m, DriveEnvelope::continuous(3.0)), std::invalid_argument);
  CorrelationOptions none;
  none.n_side = 0;
  CHECK_THROWS_AS(two_time_correlation(m, DriveEnvelope(train(0.1, 1.0, 5.0)), none), std::invalid_argument);
}

TEST_CASE("histogram ingestion and Poisson errors") {
  const auto dir = std::filesystem::temp_directory_path() / "pulsedrf_hist_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "h.csv";
  const double T = 12.5, bin = 0.256;
  {
    std::ofstream out(path);
    out << "bin_center_ns,counts\n";
    std::mt19937_64 rng(3);
    const int half = static_cast<int>(std::ceil(7.5 * T / bin));
    for (int i = -half; i <= half; ++i) {
      const double t = i * bin;
      double mean = 0.0;
      for (int n = -8; n <= 8; ++n)
        mean += (n == 0 ? 100.0 : 1000.0) * std::exp(-std::abs(t - n * T) / 0.8);
      out << t << ',' << std::poisson_distribution<long long>(mean)(rng) << '\n';
    }
  }
  const auto h = read_histogram_csv(path, 180.0);
  CHECK(h.bin_width == doctest::Approx(bin));
  CHECK(h.acquisition_time == 180.0);
  const auto p = normalize_pulsed(h, T, 6);
  CHECK(p.g2_zero() == doctest::Approx(0.1).epsilon(0.1));
  CHECK(p.at(0).sigma > 0.0);
  // sigma of a ratio of Poisson sums: dominated by the centre-peak counts.
  const double centre = p.at(0).area;
  CHECK(p.at(0).sigma == doctest::Approx(p.g2_zero() * std::sqrt(1.0 / centre + 1.0 / (12.0 * p.mean_side_area)))
                             .epsilon(0.05));
  CHECK(p.at(0).sigma >= p.g2_zero() / std::sqrt(centre) * 0.99);

  {
    std::ofstream out(dir / "bad.csv");
    out << "0,5\n0.256,-1\n0.512,3\n";
  }
  CHECK_THROWS_AS(read_histogram_csv(dir / "bad.csv"), std::invalid_argument);
  {
    std::ofstream out(dir / "ragged.csv");
    out << "0,5\n0.256,1\n0.6,3\n";
  }
  CHECK_THROWS_AS(read_histogram_csv(dir / "ragged.csv"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("quantum-jump oracle") {
  const EmitterModel m = EmitterModel::two_level(0.8, 1.6);
  SUBCASE("near-instantaneous pulse") {
    EnvelopeParameters p = train(0.001, 1.0, std::numeric_limits<double>::infinity());
    JumpOracleOptions o;
    o.decay_tail = 8.0;
    const auto r = jump_oracle(m, DriveEnvelope(p), 20000, 42, o);
    CHECK(r.defined);
    CHECK(r.g2_zero < 3 * r.sigma + 1e-3);
    CHECK(r.mean_photons == doctest::Approx(1.0).epsilon(0.02));
  }
  SUBCASE("agrees with the regression theorem at 100 ps") {
    // Long period: the correlation peaks must not overlap for the per-cycle
    // photon statistics to coincide with the integrated centre peak.
    const DriveEnvelope env(train(0.1, 1.0, 12.5));
    const auto rec = two_time_correlation(m, env, short_window());
    const auto r = jump_oracle(m, env, 40000, 7);
    CHECK(std::abs(r.g2_zero - rec.g2_zero()) < 2.0 * r.sigma);
  }
  SUBCASE("deterministic and thread independent") {
    const DriveEnvelope env(train(0.1, 1.0, 5.0));
    JumpOracleOptions one, four;
    four.threads = 4;
    const auto a = jump_oracle(m, env, 3000, 99, one);
    const auto b = jump_oracle(m, env, 3000, 99, four);
    CHECK(a.g2_zero == b.g2_zero);
    CHECK(a.photon_counts == b.photon_counts);
    const auto c = jump_oracle(m, env, 3000, 100, one);
    CHECK(a.photon_counts != c.photon_counts);
  }
  SUBCASE("undriven emitter is flagged") {
    EnvelopeParameters p = train(0.1, 0.0, std::numeric_limits<double>::infinity());
    const auto r = jump_oracle(m, DriveEnvelope(p), 1000, 1);
    CHECK_FALSE(r.defined);
    CHECK_FALSE(r.flag.empty());
    CHECK(std::isnan(r.g2_zero));
  }
}
