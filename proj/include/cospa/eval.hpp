#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cospa/ctensor.hpp"
#include "cospa/stft.hpp"

namespace cospa::eval {

double energy(const std::vector<double>& x);

/// 10 log10(E_speech / (E_noise + E_music)); +inf (with a warning on stderr)
/// when the denominator vanishes.
double sinr_db(const std::vector<double>& speech, const std::vector<double>& noise, const std::vector<double>& music);

struct Components {
  std::vector<double> speech, noise, music;
};

/// sinr(filtered) - sinr(raw).
double delta_sinr_db(const Components& raw, const Components& filtered);

/// Projection SDR: the estimate is split into its least-squares projection on
/// the reference plus a residual; 10 log10(|proj|^2 / |res|^2), capped at 60 dB.
double sdr_db(const std::vector<double>& reference, const std::vector<double>& estimate);

struct BeampatternOptions {
  double start_deg = 0.0;
  double step_deg = 5.0;
  std::size_t angles = 36;
  double duration = 2.0;        // probe length in seconds
  double spacing = 0.04;
  double speed_of_sound = 343.0;
  double floor = 1e-12;         // power floor before taking dB
};

struct Beampattern {
  std::vector<double> angles_deg;
  std::size_t bins = 0;
  std::vector<double> power_db;  // [angles x bins], max entry 0 dB

  double at(std::size_t angle, std::size_t bin) const { return power_db[angle * bins + bin]; }
};

/// Output power of filter-and-sum with the stored masks [T*M x F] for
/// far-field unit-power white probes from each angle of the grid. The probe has
/// unit magnitude and random phase in every STFT bin, the masks are cycled
/// over the probe frames.
Beampattern beampattern(const CTensor& masks, std::size_t mics, const stft::FrameSpec& spec,
                        const BeampatternOptions& opts = {});

/// |sum_m a_m(theta, f)|^2 / M^2 in dB on the same grid (uniform masks 1/M).
Beampattern array_factor(std::size_t mics, const stft::FrameSpec& spec, const BeampatternOptions& opts = {});

/// Power averaged linearly over bins in [f_lo, f_hi] Hz per angle, in dB
/// relative to the largest angle.
std::vector<double> angular_profile(const Beampattern& bp, const stft::FrameSpec& spec, double f_lo = 500.0,
                                    double f_hi = 4000.0);

void write_beampattern_csv(std::ostream& os, const Beampattern& bp, const std::string& metadata);

struct SceneMetrics {
  std::string scene_id;
  std::string method;
  double sinr_in_db = 0.0;
  double sinr_out_db = 0.0;
  double delta_sinr_db = 0.0;
  double sdr_db = 0.0;
};

struct MethodSummary {
  std::string method;
  std::size_t scenes = 0;
  double delta_sinr_mean = 0.0, delta_sinr_std = 0.0;
  double sdr_mean = 0.0, sdr_std = 0.0;
};

/// Per-method corpus means and (population) standard deviations, in order of
/// first appearance.
std::vector<MethodSummary> summarize(const std::vector<SceneMetrics>& metrics);

std::string to_jsonl(const SceneMetrics& m);
void write_summary_csv(std::ostream& os, const std::vector<MethodSummary>& summary);

}  // namespace cospa::eval
