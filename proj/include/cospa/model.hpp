#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cospa/clayers.hpp"
#include "cospa/ctensor.hpp"
#include "cospa/stft.hpp"

namespace cospa::model {

struct CrunetConfig {
  std::vector<std::size_t> channels{8, 16, 32, 64};  // encoder widths; the decoder mirrors them
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t gru_hidden = 128;
};

struct CospaConfig {
  std::size_t mics = 5;
  std::size_t frame_len = 1024;
  std::size_t hop = 512;
  double sample_rate = 16000.0;
  std::size_t l1 = 260;  // per-stream encoder output
  std::size_t l2 = 128;  // compandor FC
  std::size_t l3 = 128;  // compandor GRU
  std::size_t l4 = 513;  // excitation length
  std::size_t l5 = 256;  // decoder hidden sizes
  std::size_t l6 = 256;
  std::size_t down_kernel = 5;
  std::size_t down_stride = 2;
  double slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-8;
  CrunetConfig crunet;
  std::uint64_t seed = 0;

  std::size_t bins() const noexcept { return frame_len / 2 + 1; }
  stft::FrameSpec frame_spec() const { return stft::FrameSpec::sqrt_hann(frame_len, hop, sample_rate); }
  void validate() const;

  /// Small configuration (M = 2, F = 9) for gradient checks and quick tests.
  static CospaConfig reduced();

  std::string to_json() const;
  static CospaConfig from_json(const std::string& text);
  bool operator==(const CospaConfig& o) const;
};

/// Complex U-Net over the frequency axis of one channel with a recurrent
/// bottleneck; maps spectra [T x F] to a bounded complex mask [T x F].
class Crunet {
 public:
  Crunet() = default;
  Crunet(const CrunetConfig& cfg, std::size_t bins, double slope, std::mt19937_64& rng);

  /// `state` holds the GRU state [positions x hidden] (null: zeros) and is
  /// advanced by T frames.
  Var forward(Tape& t, const Var& x, Var& state) const;
  void register_params(ParameterSet& ps, const std::string& prefix) const;
  std::size_t bottleneck_positions() const noexcept { return lengths_.empty() ? 0 : lengths_.back(); }

 private:
  CrunetConfig cfg_;
  std::size_t bins_ = 0;
  double slope_ = 0.2;
  std::vector<std::size_t> lengths_;  // lengths_[0] = F, lengths_[i] after encoder block i
  std::vector<layers::Conv1d> enc_;
  std::vector<layers::ConvTranspose1d> dec_;
  layers::Gru gru_;
  layers::Linear fc_;
};

/// Streaming state carried across frames of one stream.
struct CospaState {
  Var crunet;     // [positions x gru_hidden]
  Var compandor;  // [1 x l3]
};

struct EncoderOutputs {
  Var shared_mask;  // G [T x F]
  Var speech;       // S_m = G X_m, [T*M x F]
  Var noise;        // N_m = X_m - S_m
  Var speech_down;  // [T*M x l1]
  Var noise_down;   // [T*M x l1]
  Var h;            // [T x 2*M*l1]
};

struct CospaOutputs {
  EncoderOutputs enc;
  Var excitations;  // [T*M x l4]
  Var masks;        // [T*M x F]
  Var output;       // [T x F]
};

class Cospa {
 public:
  explicit Cospa(const CospaConfig& cfg);

  const CospaConfig& config() const noexcept { return cfg_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  /// X: frame-major spectra [T*M x F]. Training mode uses batch statistics in
  /// the decoder's batch norms and updates their running estimates.
  CospaOutputs forward(Tape& t, const CTensor& X, CospaState& state, bool training) const;

  Var crunet_forward(Tape& t, const Var& x1, CospaState& state) const;
  EncoderOutputs encode(Tape& t, const Var& X, const Var& shared_mask) const;
  Var compandor_forward(Tape& t, const Var& h, CospaState& state) const;
  Var decode(Tape& t, const Var& excitations, bool training) const;

  /// Frame-by-frame inference without recording; returns masks [T*M x F] and
  /// writes the filter-and-sum output [T x F] to `output` when non-null.
  CTensor infer_masks(const CTensor& X, CTensor* output = nullptr) const;

  Checkpoint to_checkpoint(const std::string& extra_header_json = "{}") const;
  static Cospa from_checkpoint(const Checkpoint& ckpt);

 private:
  CospaConfig cfg_;
  Crunet crunet_;
  layers::Conv1d conv_s_, conv_n_;
  layers::Linear fc_s_, fc_n_;
  layers::Linear comp_fc1_, comp_fc2_;
  layers::Gru comp_gru_;
  layers::Linear dec_fc1_, dec_fc2_, dec_fc3_;
  layers::BatchNorm dec_bn1_, dec_bn2_;
  ParameterSet params_;
};

/// Stand-alone single-channel CRUnet used by the crunet and DNN-MVDR baselines.
class CrunetModel {
 public:
  explicit CrunetModel(const CospaConfig& cfg);

  const CospaConfig& config() const noexcept { return cfg_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  /// x: single-channel spectra [T x F] -> mask [T x F].
  Var forward(Tape& t, const CTensor& x, Var& state) const;
  /// Frame-by-frame mask inference for one channel.
  CTensor infer_mask(const CTensor& x) const;

  Checkpoint to_checkpoint(const std::string& extra_header_json = "{}") const;
  static CrunetModel from_checkpoint(const Checkpoint& ckpt);

 private:
  CospaConfig cfg_;
  Crunet net_;
  ParameterSet params_;
};

/// Model kind recorded in a checkpoint header ("cospa" or "crunet").
std::string checkpoint_model_kind(const Checkpoint& ckpt);

/// J = -10 log10(|t|^2 / (|t - s|^2 + 1e-10 |t|^2)); `estimate` is [1 x N].
Var snr_loss(Tape& t, const std::vector<double>& target, const Var& estimate);
double snr_loss_value(const std::vector<double>& target, const std::vector<double>& estimate);

/// Applies per-channel masks to component spectra [T*M x F] and synthesizes
/// the time-domain result of length `num_samples`.
std::vector<double> shadow_filter(const CTensor& masks, const CTensor& component, std::size_t mics,
                                  const stft::FrameSpec& spec, std::size_t num_samples);

/// Rows m, m + M, m + 2M, ... of a frame-major tensor: [T*M x F] -> [T x F].
CTensor channel_rows(const CTensor& X, std::size_t mics, std::size_t m);

}  // namespace cospa::model
