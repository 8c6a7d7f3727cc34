#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pulsedrf/config.hpp"
#include "pulsedrf/scenario.hpp"

using namespace pulsedrf;
namespace fs = std::filesystem;

namespace {

int error_line(const std::string& text) {
  try {
    (void)parse_scenario(Config::parse(text, "test.ini"));
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("pulsedrf_test_" + name);
  fs::remove_all(d);
  return d;
}

const char* kSmallHbt = R"(
[scenario]
kind = HBT
name = small
seed = 3

[emitter]
t1_ns = 0.5
t2_ns = 1

[envelope]
shape = Gaussian
width_ns = 0.1
area_pi = 1
period_ns = 6
extinction_floor = 0

[numerics]
n_side = 2
warmup_periods = 2
)";

}  // namespace

TEST_CASE("config syntax errors carry line numbers") {
  CHECK_THROWS_AS(Config::parse("[a]\nx = 1\nnot a pair\n"), ConfigError);
  try {
    (void)Config::parse("[a]\nx = 1\nnot a pair\n", "f.ini");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("f.ini:3") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse("x = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\n[a]\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
}

TEST_CASE("config values are typed") {
  const auto c = Config::parse("# c\n[s]\nn = 2.5 ; trailing\ni = 7\nb = true\nl = 1, 2,3\ne =\n");
  CHECK(*c.number("s", "n") == 2.5);
  CHECK(*c.integer("s", "i") == 7);
  CHECK(*c.flag("s", "b"));
  CHECK(*c.numbers("s", "l") == std::vector<double>{1, 2, 3});
  CHECK(c.numbers("s", "e")->empty());
  CHECK_FALSE(c.number("s", "missing").has_value());
  CHECK_THROWS_AS((void)c.integer("s", "n"), ConfigError);
  CHECK_THROWS_AS((void)c.flag("s", "n"), ConfigError);
}

TEST_CASE("scenario schema violations point at the offending line") {
  CHECK(error_line("[scenario]\nkind = HBT\n[emitter]\nt1_ns = 0.8\nlifetime = 2\n") == 5);
  CHECK(error_line("[scenario]\nkind = HBT\n[bogus]\n") == 3);
  CHECK(error_line("[scenario]\nkind = Nonsense\n") == 2);
  CHECK(error_line("[scenario]\nkind = HBT\n[emitter]\nt1_ns = -1\n") == 4);
  CHECK(error_line("[scenario]\nkind = HBT\n[emitter]\nt1_ns = 1\nt2_ns = 3\n") > 0);
  CHECK(error_line("[scenario]\nkind = HBT\n[envelope]\nshape = Triangle\n") == 4);
  // An empty sweep grid is a schema error rather than an empty output.
  CHECK(error_line("[scenario]\nkind = WidthSweep\n[envelope]\nperiod_ns = 12.5\n[grids]\nwidths_ns =\n") == 6);
  CHECK(error_line("[scenario]\nkind = FrequencySweep\n[grids]\n") > 0);
  CHECK(error_line("[scenario]\nkind = Visibility\n[data]\ng2_perp = 0.5\n") > 0);
  CHECK(error_line(kSmallHbt) == -1);
}

TEST_CASE("example configurations validate") {
  for (const auto& entry : fs::directory_iterator(PULSEDRF_SOURCE_DIR "/configs")) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW((void)load_scenario(entry.path().string()));
  }
}

TEST_CASE("sweep values map onto the scenario") {
  const Scenario base = parse_scenario(Config::parse(kSmallHbt));
  CHECK(apply_sweep_value(base, SweepAxis::Width, 0.05).envelope.width == 0.05);
  CHECK(apply_sweep_value(base, SweepAxis::Frequency, 80).envelope.period == doctest::Approx(12.5));
  CHECK(apply_sweep_value(base, SweepAxis::Power, 4).envelope.area == doctest::Approx(2 * std::numbers::pi));
  const Scenario t1 = apply_sweep_value(base, SweepAxis::T1, 1.0);
  CHECK(t1.emitter.t1 == 1.0);
  CHECK(t1.emitter.t2 == doctest::Approx(2.0));
  CHECK(parse_sweep_axis(to_string(SweepAxis::Power)) == SweepAxis::Power);
  CHECK_THROWS_AS(parse_sweep_axis("colour"), std::invalid_argument);
}

TEST_CASE("sweeps: single point, order independence and failed rows") {
  const Scenario base = parse_scenario(Config::parse(kSmallHbt));
  const std::vector<double> one{0.1};
  const auto single = sweep(SweepAxis::Width, one, base, 1);
  const auto direct = evaluate_point(base, 0.1);
  REQUIRE(single.size() == 1);
  CHECK(single[0].ok);
  CHECK(single[0].g2_zero == direct.g2_zero);
  CHECK(single[0].photons_per_pulse == direct.photons_per_pulse);

  Scenario fixed = base;
  fixed.numerics.step = 0.002;
  fixed.numerics.t1_stride = 1;
  const std::vector<double> fwd{0.05, 0.02, 0.1}, rev{0.1, 0.02, 0.05};
  const auto a = sweep(SweepAxis::Width, fwd, fixed, 2);
  const auto b = sweep(SweepAxis::Width, rev, fixed, 1);
  REQUIRE(a.size() == 3);
  CHECK(a[0].ok);
  CHECK(a[2].ok);
  // 2 ps steps cannot resolve a 20 ps pulse; the row fails, the sweep goes on.
  CHECK_FALSE(a[1].ok);
  CHECK(a[1].message.find("guard") != std::string::npos);
  CHECK(a[0].g2_zero == b[2].g2_zero);
  CHECK(a[2].g2_zero == b[0].g2_zero);
  CHECK(a[2].g2_zero > a[0].g2_zero);
}

TEST_CASE("SHA-256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("runs are reproducible and the manifest lists every output") {
  Scenario s = parse_scenario(Config::parse(kSmallHbt));
  const fs::path d1 = fresh_dir("run1"), d2 = fresh_dir("run2");
  const auto r1 = run_scenario(s, {d1, 1});
  const auto r2 = run_scenario(s, {d2, 2});
  REQUIRE(r1.files.size() == r2.files.size());
  for (const auto& f : r1.files) {
    // Both carry wall-clock fields.
    if (f.filename() == "manifest.json" || f.filename() == "summary.txt") continue;
    CAPTURE(f.string());
    CHECK(slurp(f) == slurp(d2 / f.filename()));
  }
  const auto m1 = nlohmann::json::parse(slurp(d1 / "manifest.json"));
  const auto m2 = nlohmann::json::parse(slurp(d2 / "manifest.json"));
  CHECK(m1["outputs"] == m2["outputs"]);
  CHECK(m1["seed"] == 3);
  CHECK(m1["config_sha256"] == m2["config_sha256"]);
  for (const auto& out : m1["outputs"]) {
    const std::string name = out["file"];
    CAPTURE(name);
    CHECK(out["sha256"] == sha256_hex(slurp(d1 / name)));
  }
  CHECK(fs::exists(d1 / "g2.csv"));
  CHECK(fs::exists(d1 / "peaks.csv"));
  CHECK(fs::exists(d1 / "summary.txt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}
