#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cospa::sim {

using Vec3 = std::array<double, 3>;
using Multichannel = std::vector<std::vector<double>>;  // [channel][sample]

struct RoomSpec {
  Vec3 dims{5.0, 4.0, 3.0};
  double rt60 = 0.5;  // seconds; 0 renders an anechoic room
  double speed_of_sound = 343.0;
};

/// Uniform linear array; mic 0 is the reference microphone.
struct ArraySpec {
  std::vector<Vec3> mics;
  double spacing = 0.04;

  std::size_t size() const noexcept { return mics.size(); }
  Vec3 center() const;
};

/// Horizontal linear array centered at `center`, axis rotated by `azimuth_rad`
/// in the x-y plane, mic 0 on the negative side of the axis.
ArraySpec make_linear_array(const Vec3& center, double azimuth_rad, std::size_t mics, double spacing);

struct SceneSpec {
  std::string id;
  std::uint64_t seed = 0;
  RoomSpec room;
  ArraySpec array;
  Vec3 speech{}, noise{}, music{};
  double snr_db = 0.0;
  double smr_db = 0.0;
  double duration = 7.0;
  double sample_rate = 16000.0;

  std::size_t num_samples() const noexcept;
};

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct SceneRanges {
  Vec3 room_min{3.0, 3.0, 1.0};
  Vec3 room_max{8.0, 8.0, 4.0};
  Range rt60{0.3, 0.7};
  Range snr_db{-7.0, 0.0};
  Range smr_db{-7.0, 0.0};
  double wall_clearance = 0.1;
  double min_source_distance = 0.5;  // source to array center
  std::size_t mics = 5;
  double spacing = 0.04;
  double duration = 7.0;
  double sample_rate = 16000.0;
  int max_attempts = 1000;

  void validate() const;
};

/// Deterministic function of (seed, ranges).
SceneSpec sample_scene(std::uint64_t seed, const SceneRanges& ranges);

/// Direction of arrival in degrees for a linear array: the angle between the
/// direction towards `src` (from the array center) and the array axis pointing
/// from the last mic to mic 0. 90 degrees is broadside.
double doa_deg(const ArraySpec& array, const Vec3& src);

struct Rir {
  std::vector<double> taps;
  double sample_rate = 16000.0;
};

struct RirOptions {
  double sample_rate = 16000.0;
  int max_order = -1;       // -1: every image within the response length
  std::size_t length = 0;   // 0: direct-path delay + rt60 * fs + interpolation margin
  std::size_t interp_taps = 16;
  double reflection = -1.0;  // wall reflection coefficient; negative: decay_matched_reflection
  double highpass_hz = 100.0;  // applied to reverberant responses; 0 disables
};

/// Wall reflection coefficient from Eyring's reverberation formula.
double reflection_coefficient(const RoomSpec& room);

/// Reflection coefficient for which the image-source response between `src`
/// and `mic` decays with the room's rt60 (Schroeder fit, -5 to -25 dB).
double decay_matched_reflection(const RoomSpec& room, const Vec3& src, const Vec3& mic, const RirOptions& opts = {});

/// Shoebox image-source impulse response with windowed-sinc fractional delays.
/// Responses with reflections are high-passed at opts.highpass_hz.
Rir image_source_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, const RirOptions& opts = {});

/// Schroeder backward integration with a line fit over -5..-25 dB, scaled to 60 dB.
double measure_rt60(const Rir& rir);

struct DrySignals {
  std::vector<double> speech, noise, music;
};

/// Speech-like harmonic bursts, white or pink noise and a tonal "music" mixture.
DrySignals synth_dry_signals(std::uint64_t seed, std::size_t num_samples, double sample_rate);

struct RenderOptions {
  double speech_rms = 0.05;      // reverberant speech level at mic 0
  double sensor_snr_db = 30.0;   // white self-noise per mic, relative to that mic's speech
  int max_order = -1;
};

/// Mixture and its exact additive decomposition at every mic.
struct RenderedScene {
  SceneSpec spec;
  Multichannel mixture, speech, noise, music, sensor;
  std::vector<Rir> speech_rirs;  // one per mic
  std::vector<double> dry_speech;  // scaled so that speech[m] = dry_speech * speech_rirs[m]

  std::size_t mics() const noexcept { return mixture.size(); }
  std::size_t samples() const noexcept { return mixture.empty() ? 0 : mixture.front().size(); }
  /// noise + music + sensor, the undesired part of the mixture.
  Multichannel interference() const;
};

RenderedScene render_scene(const SceneSpec& spec, const DrySignals& dry, const RenderOptions& opts = {});

/// Full linear convolution truncated to `out_len` samples (FFT based).
std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h, std::size_t out_len);

double energy(const std::vector<double>& x);

}  // namespace cospa::sim
