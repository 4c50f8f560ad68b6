#pragma once

#include <memory>
#include <span>
#include <vector>

#include "cospa/ctensor.hpp"

namespace cospa::stft {

/// Analysis/synthesis framing. Frame t covers samples
/// [t*hop - (frame_len - hop), t*hop + hop), zero outside the signal, so a
/// signal of N samples yields ceil(N / hop) + frame_len / hop - 1 frames and
/// every sample receives a full set of overlapping frames.
struct FrameSpec {
  std::size_t frame_len = 1024;
  std::size_t hop = 512;
  double sample_rate = 16000.0;
  std::vector<double> window;

  static FrameSpec sqrt_hann(std::size_t frame_len = 1024, std::size_t hop = 512, double sample_rate = 16000.0);
  static FrameSpec rectangular(std::size_t frame_len, std::size_t hop, double sample_rate = 16000.0);

  std::size_t bins() const noexcept { return frame_len / 2 + 1; }
  std::size_t num_frames(std::size_t num_samples) const;
  long frame_start(std::size_t frame) const noexcept {
    return long(frame * hop) - long(frame_len - hop);
  }
  double bin_frequency(std::size_t k) const noexcept { return double(k) * sample_rate / double(frame_len); }

  /// Throws when the window length or hop is inconsistent.
  void validate() const;
  /// Largest deviation of sum_k w^2[n - k hop] from 1.
  double cola_error() const;
};

/// Real FFT of a fixed size backed by FFTW. Forward is unnormalized; inverse
/// includes the 1/n factor.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const noexcept { return n_; }
  void forward(std::span<const double> in, std::span<cplx> out);
  void inverse(std::span<const cplx> in, std::span<double> out);

 private:
  struct Impl;
  std::size_t n_;
  std::unique_ptr<Impl> impl_;
};

/// Windowed real FFT of one frame; returns frame_len / 2 + 1 bins.
std::vector<cplx> stft_frame(std::span<const double> x, const FrameSpec& spec);

/// All frames of a single channel: [T x F].
CTensor analyze(std::span<const double> x, const FrameSpec& spec);

/// Frame-major multichannel analysis: row t*M + m holds channel m of frame t.
CTensor analyze_multichannel(const std::vector<std::vector<double>>& channels, const FrameSpec& spec);

/// Inverse FFT, synthesis window and overlap-add of frames [T x F]; returns the
/// first `num_samples` samples of the reconstruction.
std::vector<double> istft(const CTensor& frames, const FrameSpec& spec, std::size_t num_samples);

/// Frame-by-frame overlap-add. Each pushed frame completes `hop` more samples.
class OverlapAdd {
 public:
  explicit OverlapAdd(FrameSpec spec);
  /// Adds one spectrum frame and returns the `hop` samples that are final now.
  std::vector<double> push(std::span<const cplx> frame);

 private:
  FrameSpec spec_;
  RealFft fft_;
  std::vector<double> acc_;
  std::vector<double> buf_;
};

/// Frame-by-frame analysis for a streaming input delivered in blocks of `hop` samples.
class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(FrameSpec spec);
  std::vector<cplx> push(std::span<const double> block);

 private:
  FrameSpec spec_;
  RealFft fft_;
  std::vector<double> history_;
};

/// Differentiable overlap-add synthesis of frames [T x F] into a real signal
/// returned as a [1 x num_samples] tensor with zero imaginary part.
Var overlap_add(Tape& t, const Var& frames, const FrameSpec& spec, std::size_t num_samples);

}  // namespace cospa::stft
