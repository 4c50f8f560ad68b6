#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cospa/scene.hpp"

using namespace cospa::sim;

namespace {

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

std::size_t argmax_abs(const std::vector<double>& v) {
  return std::size_t(std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
                     v.begin());
}

}  // namespace

TEST_CASE("reflection coefficient inverts the Eyring formula") {
  RoomSpec room{{5.0, 4.0, 3.0}, 0.5, 343.0};
  const double beta = reflection_coefficient(room);
  const double alpha = 1.0 - beta * beta;
  const double V = 60.0, S = 2.0 * (20.0 + 15.0 + 12.0);
  const double t60 = 24.0 * std::log(10.0) * V / (-343.0 * S * std::log(1.0 - alpha));
  CHECK(t60 == doctest::Approx(0.5).epsilon(1e-12));
  room.rt60 = 0.0;
  CHECK(reflection_coefficient(room) == 0.0);
}

TEST_CASE("anechoic impulse response at an integer delay is a single scaled tap") {
  RoomSpec room{{6.0, 6.0, 6.0}, 0.0, 320.0};
  // 0.8 m at 320 m/s and 16 kHz is exactly 40 samples.
  const Vec3 src{2.0, 3.0, 3.0}, mic{2.8, 3.0, 3.0};
  const Rir h = image_source_rir(room, src, mic);
  CHECK(h.taps[40] == doctest::Approx(1.0 / (4.0 * std::numbers::pi * 0.8)));
  double rest = 0.0;
  for (std::size_t i = 0; i < h.taps.size(); ++i) {
    if (i != 40) rest += std::abs(h.taps[i]);
  }
  CHECK(rest == 0.0);
}

TEST_CASE("fractional delays keep DC gain and peak position") {
  RoomSpec room{{6.0, 6.0, 6.0}, 0.0, 343.0};
  const Vec3 src{2.0, 3.0, 3.0}, mic{3.1234, 3.2, 2.9};
  const double d = dist(src, mic);
  const Rir h = image_source_rir(room, src, mic);
  double sum = 0.0;
  for (double v : h.taps) sum += v;
  CHECK(sum == doctest::Approx(1.0 / (4.0 * std::numbers::pi * d)).epsilon(0.02));
  CHECK(std::abs(double(argmax_abs(h.taps)) - d / 343.0 * 16000.0) <= 1.0);
}

TEST_CASE("direct path arrives within one sample of the geometric delay") {
  RoomSpec room{{5.0, 4.0, 3.0}, 0.3, 343.0};
  const Vec3 src{1.0, 1.5, 1.2}, mic{3.5, 2.5, 1.6};
  const Rir h = image_source_rir(room, src, mic);
  const double tau = dist(src, mic) / 343.0 * 16000.0;
  const std::size_t first = std::size_t(tau) + 1 - 8;
  std::vector<double> head(h.taps.begin(), h.taps.begin() + long(first + 16));
  CHECK(std::abs(double(argmax_abs(head)) - tau) <= 1.0);
  CHECK(h.taps.size() >= std::size_t(tau + 0.3 * 16000));
}

TEST_CASE("Schroeder fit recovers the decay rate of a synthetic exponential") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Rir h{std::vector<double>(16000), 16000.0};
  for (std::size_t i = 0; i < h.taps.size(); ++i) h.taps[i] = n(rng) * std::pow(10.0, -3.0 * double(i) / (16000.0 * 0.4));
  CHECK(measure_rt60(h) == doctest::Approx(0.4).epsilon(0.05));
  Rir flat{std::vector<double>(10, 0.0), 16000.0};
  CHECK_THROWS(measure_rt60(flat));
}

TEST_CASE("simulated rooms reach the requested reverberation time") {
  for (double rt : {0.3, 0.5, 0.7}) {
    RoomSpec room{{5.0, 4.0, 3.0}, rt, 343.0};
    const Rir h = image_source_rir(room, {1.2, 1.1, 1.4}, {3.6, 2.7, 1.5});
    CHECK(std::abs(measure_rt60(h) - rt) <= 0.2 * rt);
  }
  RoomSpec big{{7.5, 6.0, 3.5}, 0.6, 343.0};
  const Rir h = image_source_rir(big, {1.0, 5.0, 1.2}, {6.1, 1.3, 1.7});
  CHECK(std::abs(measure_rt60(h) - 0.6) <= 0.2 * 0.6);
  // The matched coefficient sits below Eyring's and a fixed one is honoured.
  RoomSpec room{{5.0, 4.0, 3.0}, 0.5, 343.0};
  CHECK(decay_matched_reflection(room, {1.2, 1.1, 1.4}, {3.6, 2.7, 1.5}) < reflection_coefficient(room));
  RirOptions fixed;
  fixed.reflection = 0.0;
  const Rir direct = image_source_rir(room, {1.0, 1.0, 1.0}, {2.0, 1.0, 1.0}, fixed);
  std::size_t nonzero = 0;
  for (double v : direct.taps) nonzero += v != 0.0;
  CHECK(nonzero <= 16);
}

TEST_CASE("linear array geometry and direction of arrival") {
  const ArraySpec a = make_linear_array({2.0, 2.0, 1.0}, 0.0, 5, 0.04);
  REQUIRE(a.size() == 5);
  CHECK(a.mics[0][0] == doctest::Approx(1.92));
  CHECK(a.mics[4][0] == doctest::Approx(2.08));
  CHECK(dist(a.mics[1], a.mics[2]) == doctest::Approx(0.04));
  CHECK(a.center()[0] == doctest::Approx(2.0));
  // The axis points from the last mic towards mic 0, i.e. along -x here.
  CHECK(doa_deg(a, {0.5, 2.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(doa_deg(a, {3.5, 2.0, 1.0}) == doctest::Approx(180.0));
  CHECK(doa_deg(a, {2.0, 3.0, 1.0}) == doctest::Approx(90.0));
  CHECK(doa_deg(a, {1.0, 3.0, 1.0}) == doctest::Approx(45.0));
}

TEST_CASE("scene sampling is deterministic and respects the ranges") {
  SceneRanges r;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SceneSpec s = sample_scene(seed, r);
    const SceneSpec t = sample_scene(seed, r);
    CHECK(s.room.dims == t.room.dims);
    CHECK(s.speech == t.speech);
    CHECK(s.room.rt60 >= 0.3);
    CHECK(s.room.rt60 <= 0.7);
    CHECK(s.snr_db >= -7.0);
    CHECK(s.snr_db <= 0.0);
    for (const Vec3* p : {&s.speech, &s.noise, &s.music}) {
      CHECK(dist(*p, s.array.center()) >= 0.5);
      for (int i = 0; i < 3; ++i) {
        CHECK((*p)[i] >= 0.1);
        CHECK((*p)[i] <= s.room.dims[i] - 0.1);
      }
    }
    CHECK(s.num_samples() == 112000);
  }
  r.rt60 = {0.8, 0.2};
  CHECK_THROWS(sample_scene(0, r));
}

TEST_CASE("FFT convolution equals direct convolution") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> x(50), h(7);
  for (auto& v : x) v = n(rng);
  for (auto& v : h) v = n(rng);
  const auto y = convolve(x, h, 60);
  for (std::size_t i = 0; i < 60; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      if (i >= k && i - k < x.size()) acc += h[k] * x[i - k];
    }
    CHECK(y[i] == doctest::Approx(acc).epsilon(1e-10));
  }
}

TEST_CASE("rendered scene levels and additive decomposition") {
  SceneRanges r;
  r.duration = 1.0;
  SceneSpec s = sample_scene(7, r);
  const DrySignals dry = synth_dry_signals(s.seed, s.num_samples(), s.sample_rate);
  const DrySignals dry2 = synth_dry_signals(s.seed, s.num_samples(), s.sample_rate);
  CHECK(dry.speech == dry2.speech);
  const RenderedScene sc = render_scene(s, dry);
  REQUIRE(sc.mics() == 5);
  REQUIRE(sc.samples() == 16000);
  const double N = 16000.0;
  CHECK(std::sqrt(energy(sc.speech[0]) / N) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(10 * std::log10(energy(sc.speech[0]) / energy(sc.noise[0])) == doctest::Approx(s.snr_db).epsilon(1e-9));
  CHECK(10 * std::log10(energy(sc.speech[0]) / energy(sc.music[0])) == doctest::Approx(s.smr_db).epsilon(1e-9));
  for (std::size_t m = 0; m < 5; ++m) {
    const double ratio = 10 * std::log10(energy(sc.speech[m]) / energy(sc.sensor[m]));
    CHECK(ratio == doctest::Approx(30.0).epsilon(0.03));
    for (std::size_t i = 0; i < 16000; i += 97) {
      CHECK(sc.mixture[m][i] ==
            doctest::Approx(sc.speech[m][i] + sc.noise[m][i] + sc.music[m][i] + sc.sensor[m][i]).epsilon(1e-12));
    }
  }
  // The stored speech RIRs reproduce the speech images from the scaled dry speech.
  const auto again = convolve(sc.dry_speech, sc.speech_rirs[2].taps, 16000);
  for (std::size_t i = 0; i < 16000; i += 101) CHECK(again[i] == doctest::Approx(sc.speech[2][i]).epsilon(1e-9));
}
