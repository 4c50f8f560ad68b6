#pragma once

#include <map>
#include <string>
#include <vector>

#include "cospa/beamforming.hpp"
#include "cospa/eval.hpp"
#include "cospa/model.hpp"
#include "cospa/scene.hpp"
#include "cospa/stft.hpp"
#include "cospa/train.hpp"
#include "cospa/wav.hpp"

namespace cospa::pipeline {

/// A rendered scene with everything downstream consumers need.
struct SceneData {
  sim::SceneSpec spec;
  double doa_speech = 90.0, doa_noise = 90.0, doa_music = 90.0;
  sim::Multichannel mixture, speech, noise, music, sensor;
  std::vector<sim::Rir> speech_rirs;
  std::vector<double> target;  // MVDR training target, may be empty

  std::size_t mics() const noexcept { return mixture.size(); }
  std::size_t samples() const noexcept { return mixture.empty() ? 0 : mixture.front().size(); }
  /// noise + music + sensor per mic.
  sim::Multichannel interference() const;
};

/// Synthesizes dry signals from spec.seed and renders the scene.
SceneData simulate(const sim::SceneSpec& spec, const sim::RenderOptions& opts = {});

struct Spectra {
  CTensor mixture, speech, noise, music, sensor, interference;  // [T*M x F] each
};
Spectra analyze(const SceneData& scene, const stft::FrameSpec& spec);

/// Time-domain MVDR target (free-field steering at the true speech DOA, noise
/// covariance from the true interference).
std::vector<double> compute_target(const SceneData& scene, const Spectra& spectra, const stft::FrameSpec& spec,
                                   const bf::CovarianceOptions& cov = {});

// Manifest ----------------------------------------------------------------------

struct SceneRecord {
  sim::SceneSpec spec;
  double doa_speech = 90.0, doa_noise = 90.0, doa_music = 90.0;
  std::map<std::string, std::string> files;  // role -> path relative to the manifest
};

std::string record_to_json(const SceneRecord& r);
SceneRecord record_from_json(const std::string& line);
void write_manifest(const std::string& path, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_manifest(const std::string& path);

/// Writes <id>.mix/.speech/.noise/.music/.sensor/.target/.rir WAV files into
/// `dir` and returns the manifest record (file paths relative to `dir`).
SceneRecord save_scene(const std::string& dir, const SceneData& scene);
/// Loads the files of a record; `base_dir` is the manifest's directory.
SceneData load_scene(const SceneRecord& record, const std::string& base_dir);

// Training examples -------------------------------------------------------------

train::Example cospa_example(const SceneData& scene, const stft::FrameSpec& spec);
/// Channel-0 mixture spectra with the channel-0 reverberant speech as target.
train::Example crunet_example(const SceneData& scene, const stft::FrameSpec& spec);

// Methods -----------------------------------------------------------------------
// Every method yields filter-and-sum masks [T*M x F].

CTensor passthrough_masks(std::size_t frames, std::size_t mics, std::size_t bins, std::size_t channel = 0);
CTensor omvdr_masks(const SceneData& scene, const Spectra& s, const stft::FrameSpec& spec,
                    const bf::CovarianceOptions& cov = {});
CTensor ogmvdr_masks(const SceneData& scene, const Spectra& s, const stft::FrameSpec& spec,
                     const bf::CovarianceOptions& cov = {});
/// CRUnet mask of channel m placed on channel m only.
CTensor crunet_channel_masks(const model::CrunetModel& net, const CTensor& X, std::size_t mics, std::size_t m);
/// MVDR whose noise covariance is fed by (1 - G_m) X_m with G_m from the CRUnet.
CTensor dnn_mvdr_masks(const model::CrunetModel& net, const SceneData& scene, const Spectra& s,
                       const stft::FrameSpec& spec, const bf::CovarianceOptions& cov = {});

/// Shadow-filters the scene's components with `masks` and scores them against
/// the raw components at microphone `channel`.
eval::SceneMetrics score(const SceneData& scene, const Spectra& s, const CTensor& masks, const stft::FrameSpec& spec,
                         const std::string& method, std::size_t channel = 0);

struct Models {
  const model::Cospa* cospa = nullptr;
  const model::CrunetModel* crunet = nullptr;
};

/// Scores every requested method on one scene. Methods needing a missing
/// model are skipped. crunet is averaged over the M channels.
std::vector<eval::SceneMetrics> evaluate_scene(const SceneData& scene, const std::vector<std::string>& methods,
                                               const Models& models, const stft::FrameSpec& spec);

// Streaming enhancement ---------------------------------------------------------

/// Frame-by-frame COSPA enhancement of a multichannel signal. The output has
/// the input's length and lags it by one frame (frame_len samples), so every
/// output sample depends only on earlier input samples.
std::vector<double> enhance_stream(const model::Cospa& net, const sim::Multichannel& input);

}  // namespace cospa::pipeline
