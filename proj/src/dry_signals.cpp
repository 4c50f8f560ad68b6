#include <cmath>
#include <numbers>
#include <random>

#include "cospa/scene.hpp"

namespace cospa::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Voiced bursts: harmonics of a gliding f0 shaped by two formant bumps, with a
// syllable-rate envelope and short pauses between words.
std::vector<double> speech_like(std::mt19937_64& rng, std::size_t n, double fs) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  const double f0_base = 100.0 + 120.0 * uni(rng);
  const double f1 = 500.0 + 300.0 * uni(rng), f2 = 1400.0 + 900.0 * uni(rng);
  const double syllable_rate = 3.0 + 2.0 * uni(rng);
  const double vibrato = 0.5 + 1.5 * uni(rng);
  std::vector<double> phases(40);
  for (auto& p : phases) p = kTwoPi * uni(rng);

  // Word segmentation: alternating active spans of 0.3-0.9 s and pauses of 0.05-0.3 s.
  std::vector<char> active(n, 0);
  std::size_t i = 0;
  while (i < n) {
    const auto on = std::size_t((0.3 + 0.6 * uni(rng)) * fs);
    const auto off = std::size_t((0.05 + 0.25 * uni(rng)) * fs);
    for (std::size_t k = i; k < std::min(n, i + on); ++k) active[k] = 1;
    i += on + off;
  }

  double f0_phase = 0.0;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double time = double(t) / fs;
    const double f0 = f0_base * (1.0 + 0.08 * std::sin(kTwoPi * vibrato * time));
    f0_phase += kTwoPi * f0 / fs;
    double v = 0.0;
    for (std::size_t h = 1; h <= phases.size(); ++h) {
      const double fh = double(h) * f0;
      if (fh > 0.45 * fs) break;
      const double g = std::exp(-std::pow((fh - f1) / 250.0, 2)) + 0.6 * std::exp(-std::pow((fh - f2) / 400.0, 2)) +
                       0.05 / double(h);
      v += g * std::sin(double(h) * f0_phase + phases[h - 1]);
    }
    const double env = 0.5 - 0.5 * std::cos(kTwoPi * syllable_rate * time);
    out[t] = active[t] ? env * v + 0.02 * nd(rng) * env : 0.0;
  }
  return out;
}

std::vector<double> noise_like(std::mt19937_64& rng, std::size_t n, bool pink) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> out(n);
  // Paul Kellet's pink filter.
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (auto& v : out) {
    const double w = nd(rng);
    if (!pink) {
      v = w;
      continue;
    }
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  return out;
}

// Chord progression of decaying harmonic notes.
std::vector<double> music_like(std::mt19937_64& rng, std::size_t n, double fs) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  const double beat = 0.25 + 0.25 * uni(rng);
  const auto note_len = std::size_t(beat * fs);
  const double root = 110.0 * std::pow(2.0, std::floor(uni(rng) * 12.0) / 12.0);
  const int chord[3] = {0, 4, 7};
  for (std::size_t start = 0; start < n; start += note_len) {
    const int step = int(std::floor(uni(rng) * 8.0));
    const int octave = int(std::floor(uni(rng) * 3.0));
    for (int c : chord) {
      const double f = root * std::pow(2.0, double(octave) + double(step + c) / 12.0);
      const double phase = kTwoPi * uni(rng);
      for (std::size_t k = 0; k < note_len && start + k < n; ++k) {
        const double time = double(k) / fs;
        const double env = std::exp(-3.0 * time / beat) * std::min(1.0, time * 200.0);
        double v = 0.0;
        for (int h = 1; h <= 4; ++h) {
          if (f * h < 0.45 * fs) v += std::sin(kTwoPi * f * h * time + phase * h) / double(h);
        }
        out[start + k] += env * v;
      }
    }
  }
  return out;
}

}  // namespace

DrySignals synth_dry_signals(std::uint64_t seed, std::size_t num_samples, double sample_rate) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x1234567ull);
  DrySignals d;
  d.speech = speech_like(rng, num_samples, sample_rate);
  const bool pink = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  d.noise = noise_like(rng, num_samples, pink);
  d.music = music_like(rng, num_samples, sample_rate);
  return d;
}

}  // namespace cospa::sim
