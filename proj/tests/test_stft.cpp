#include <doctest.h>

#include <numbers>
#include <random>

#include "cospa/stft.hpp"
#include "test_util.hpp"

using namespace cospa;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST_CASE("sqrt-Hann at 50% overlap satisfies the overlap-add condition") {
  const auto spec = stft::FrameSpec::sqrt_hann(1024, 512);
  CHECK(spec.cola_error() < 1e-15);
  CHECK(spec.bins() == 513);
  CHECK(spec.num_frames(16000) == 32 + 1);
  CHECK(spec.num_frames(512) == 2);
  CHECK(spec.bin_frequency(512) == doctest::Approx(8000.0));
  CHECK_THROWS(stft::FrameSpec::sqrt_hann(1000, 300));
}

TEST_CASE("analysis frames equal a direct DFT of the windowed segment") {
  const auto spec = stft::FrameSpec::sqrt_hann(32, 16);
  const auto x = noise(100, 1);
  const CTensor X = stft::analyze(x, spec);
  REQUIRE(X.rows() == spec.num_frames(100));
  for (std::size_t t = 0; t < X.rows(); ++t) {
    for (std::size_t k = 0; k < spec.bins(); ++k) {
      cplx acc{};
      for (std::size_t n = 0; n < 32; ++n) {
        const long i = spec.frame_start(t) + long(n);
        if (i < 0 || i >= 100) continue;
        acc += x[std::size_t(i)] * spec.window[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * n) / 32.0);
      }
      CHECK(std::abs(X.at(t, k) - acc) < 1e-12);
    }
  }
}

TEST_CASE("round trip reconstructs random one-second signals") {
  const auto spec = stft::FrameSpec::sqrt_hann(1024, 512);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto x = noise(16000, seed);
    const auto y = stft::istft(stft::analyze(x, spec), spec, x.size());
    double err = 0.0, ref = 0.0;
    for (std::size_t n = 1024; n + 1024 < x.size(); ++n) {
      err += (x[n] - y[n]) * (x[n] - y[n]);
      ref += x[n] * x[n];
    }
    CHECK(std::sqrt(err / ref) < 1e-10);
  }
}

TEST_CASE("multichannel analysis is frame-major") {
  const auto spec = stft::FrameSpec::sqrt_hann(16, 8);
  const std::vector<std::vector<double>> ch{noise(40, 1), noise(40, 2), noise(40, 3)};
  const CTensor X = stft::analyze_multichannel(ch, spec);
  for (std::size_t m = 0; m < 3; ++m) {
    const CTensor Xm = stft::analyze(ch[m], spec);
    for (std::size_t t = 0; t < Xm.rows(); ++t) {
      for (std::size_t k = 0; k < spec.bins(); ++k) CHECK(X.at(t * 3 + m, k) == Xm.at(t, k));
    }
  }
}

TEST_CASE("streaming analysis and synthesis match the batch transforms") {
  const auto spec = stft::FrameSpec::sqrt_hann(64, 32);
  const auto x = noise(320, 4);
  const CTensor X = stft::analyze(x, spec);
  stft::StreamingAnalyzer an(spec);
  stft::OverlapAdd ola(spec);
  std::vector<double> y;
  for (std::size_t b = 0; b < 10; ++b) {
    const auto frame = an.push(std::span<const double>(x).subspan(b * 32, 32));
    for (std::size_t k = 0; k < spec.bins(); ++k) CHECK(std::abs(frame[k] - X.at(b, k)) < 1e-12);
    const auto out = ola.push(frame);
    y.insert(y.end(), out.begin(), out.end());
  }
  // Frame b completes samples [b hop - (L - hop), (b + 1) hop - (L - hop)).
  for (std::size_t n = 32; n < y.size(); ++n) CHECK(y[n] == doctest::Approx(x[n - 32]).epsilon(1e-10));
}

TEST_CASE("differentiable overlap-add matches istft and passes finite differences") {
  const auto spec = stft::FrameSpec::sqrt_hann(16, 8);
  std::mt19937_64 rng(5);
  Var frames = make_var(testutil::random_tensor({5, spec.bins()}, rng), true);
  Tape t;
  const Var y = stft::overlap_add(t, frames, spec, 30);
  const auto ref = stft::istft(*frames, spec, 30);
  for (std::size_t n = 0; n < 30; ++n) CHECK((*y)[n] == cplx(ref[n], 0.0));
  auto f = [&](Tape& tt) { return op::sum_abs2(tt, op::affine(tt, stft::overlap_add(tt, frames, spec, 30), 1.0, 0.3)); };
  CHECK(finite_diff_check(f, {frames}, 1e-6) < 1e-7);
}
