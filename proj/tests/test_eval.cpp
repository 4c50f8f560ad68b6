#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "cospa/eval.hpp"

using namespace cospa;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

// Closed-form array factor of a uniform linear array, |sin(M psi/2) / (M sin(psi/2))|^2.
double ula_power(std::size_t M, double theta_deg, double f, double d, double c) {
  const double psi = 2.0 * std::numbers::pi * f * d * std::cos(theta_deg * std::numbers::pi / 180.0) / c;
  const double den = double(M) * std::sin(psi / 2.0);
  if (std::abs(den) < 1e-12) return 1.0;
  const double r = std::sin(double(M) * psi / 2.0) / den;
  return r * r;
}

}  // namespace

TEST_CASE("sinr of known energies") {
  const std::vector<double> s{2.0, 0.0}, n{1.0, 0.0}, m{0.0, 1.0};
  CHECK(eval::sinr_db(s, n, m) == doctest::Approx(10.0 * std::log10(2.0)));
  eval::Components raw{s, n, m};
  eval::Components out{{2.0, 0.0}, {0.1, 0.0}, {0.0, 0.1}};
  CHECK(eval::delta_sinr_db(raw, out) == doctest::Approx(20.0));
  CHECK(std::isinf(eval::sinr_db(s, {0.0, 0.0}, {0.0, 0.0})));
}

TEST_CASE("projection SDR") {
  const auto r = noise(4000, 1);
  const auto e = noise(4000, 2);
  std::vector<double> est(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) est[i] = 0.5 * r[i] + 0.05 * e[i];
  // Residual after projection is the part of 0.05 e orthogonal to r.
  double rr = 0, re = 0, ee = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    rr += r[i] * r[i];
    re += r[i] * e[i];
    ee += e[i] * e[i];
  }
  const double alpha = 0.5 + 0.05 * re / rr;
  const double res = 0.0025 * (ee - re * re / rr);
  CHECK(eval::sdr_db(r, est) == doctest::Approx(10.0 * std::log10(alpha * alpha * rr / res)).epsilon(1e-9));
  std::vector<double> scaled = r;
  for (auto& v : scaled) v *= -3.0;
  CHECK(eval::sdr_db(r, scaled) == 60.0);
  CHECK_THROWS(eval::sdr_db(r, std::vector<double>(10)));
  CHECK_THROWS(eval::sdr_db(std::vector<double>(4000), est));
}

TEST_CASE("uniform masks reproduce the analytic array factor") {
  const auto spec = stft::FrameSpec::sqrt_hann();
  const std::size_t M = 5;
  CTensor masks({2 * M, spec.bins()});
  for (auto& v : masks.data()) v = 1.0 / double(M);
  eval::BeampatternOptions o;
  o.duration = 0.5;
  const auto bp = eval::beampattern(masks, M, spec, o);
  const auto af = eval::array_factor(M, spec, o);
  REQUIRE(bp.angles_deg.size() == 36);
  REQUIRE(bp.bins == 513);
  double peak = -1e9;
  for (std::size_t a = 0; a < 36; ++a) {
    CHECK(bp.angles_deg[a] == doctest::Approx(5.0 * double(a)));
    for (std::size_t f = 0; f < 513; ++f) {
      const double ref = std::max(10.0 * std::log10(ula_power(M, bp.angles_deg[a], spec.bin_frequency(f), 0.04, 343.0)), -120.0);
      CHECK(std::abs(std::max(bp.at(a, f), -120.0) - ref) <= 0.5);
      CHECK(std::abs(std::max(af.at(a, f), -120.0) - ref) <= 0.5);
      peak = std::max(peak, bp.at(a, f));
    }
  }
  CHECK(peak == 0.0);
}

TEST_CASE("beampattern is invariant to mask scaling and steers towards the masks") {
  const auto spec = stft::FrameSpec::sqrt_hann(64, 32);
  const std::size_t M = 4;
  eval::BeampatternOptions o;
  o.duration = 0.1;
  CTensor masks({M, spec.bins()});
  // Delay-and-sum towards 40 degrees, with the conjugate steering as masks.
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    for (std::size_t m = 0; m < M; ++m) {
      const double tau = double(m) * 0.04 * std::cos(40.0 * std::numbers::pi / 180.0) / 343.0;
      masks.at(m, f) = std::polar(0.25, 2.0 * std::numbers::pi * spec.bin_frequency(f) * tau);
    }
  }
  const auto bp = eval::beampattern(masks, M, spec, o);
  CTensor scaled = masks;
  for (auto& v : scaled.data()) v *= 7.0;
  const auto bp2 = eval::beampattern(scaled, M, spec, o);
  for (std::size_t i = 0; i < bp.power_db.size(); ++i) CHECK(bp.power_db[i] == doctest::Approx(bp2.power_db[i]));
  const auto prof = eval::angular_profile(bp, spec);
  const auto best = std::size_t(std::max_element(prof.begin(), prof.end()) - prof.begin());
  CHECK(bp.angles_deg[best] == doctest::Approx(40.0));
  CHECK_THROWS(eval::beampattern(CTensor({3, spec.bins()}), M, spec, o));
}

TEST_CASE("beampattern CSV has one row per angle") {
  const auto spec = stft::FrameSpec::sqrt_hann(16, 8);
  eval::BeampatternOptions o;
  o.duration = 0.01;
  const auto bp = eval::array_factor(3, spec, o);
  std::ostringstream os;
  eval::write_beampattern_csv(os, bp, "{\"method\":\"uniform\"}");
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(!lines.empty());
  CHECK(lines.front().front() == '#');
  std::size_t data_rows = 0;
  for (const auto& l : lines) {
    if (l.empty() || l.front() == '#' || l.rfind("angle", 0) == 0) continue;
    ++data_rows;
    CHECK(std::count(l.begin(), l.end(), ',') == 8);
  }
  CHECK(data_rows == 36);
}

TEST_CASE("summary statistics per method") {
  std::vector<eval::SceneMetrics> ms{{"a", "x", 0, 0, 1.0, 10.0}, {"a", "y", 0, 0, 5.0, 0.0}, {"b", "x", 0, 0, 3.0, 20.0}};
  const auto s = eval::summarize(ms);
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "x");
  CHECK(s[0].scenes == 2);
  CHECK(s[0].delta_sinr_mean == doctest::Approx(2.0));
  CHECK(s[0].delta_sinr_std == doctest::Approx(1.0));
  CHECK(s[0].sdr_mean == doctest::Approx(15.0));
  CHECK(s[1].delta_sinr_std == 0.0);
  std::ostringstream os;
  eval::write_summary_csv(os, s);
  CHECK(os.str().find("x,2,15,1,5,2\n") != std::string::npos);
  const auto j = eval::to_jsonl(ms[0]);
  CHECK(j.find("\"method\":\"x\"") != std::string::npos);
  CHECK(j.find('\n') == std::string::npos);
}
