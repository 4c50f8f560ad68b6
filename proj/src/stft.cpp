#include "cospa/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

namespace cospa::stft {

namespace {
// FFTW planning is not thread-safe; execution with distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

FrameSpec FrameSpec::sqrt_hann(std::size_t frame_len, std::size_t hop, double sample_rate) {
  FrameSpec s{frame_len, hop, sample_rate, std::vector<double>(frame_len)};
  for (std::size_t n = 0; n < frame_len; ++n) {
    s.window[n] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(n) / double(frame_len)));
  }
  s.validate();
  return s;
}

FrameSpec FrameSpec::rectangular(std::size_t frame_len, std::size_t hop, double sample_rate) {
  FrameSpec s{frame_len, hop, sample_rate, std::vector<double>(frame_len, 1.0)};
  s.validate();
  return s;
}

void FrameSpec::validate() const {
  if (frame_len < 2 || frame_len % 2 != 0) throw std::invalid_argument("FrameSpec: frame length must be even");
  if (hop == 0 || hop > frame_len || frame_len % hop != 0) {
    throw std::invalid_argument("FrameSpec: hop must divide the frame length");
  }
  if (window.size() != frame_len) throw std::invalid_argument("FrameSpec: window length mismatch");
  if (!(sample_rate > 0.0)) throw std::invalid_argument("FrameSpec: sample rate must be positive");
}

std::size_t FrameSpec::num_frames(std::size_t num_samples) const {
  return (num_samples + hop - 1) / hop + frame_len / hop - 1;
}

double FrameSpec::cola_error() const {
  double worst = 0.0;
  for (std::size_t n = 0; n < hop; ++n) {
    double s = 0.0;
    for (std::size_t k = n; k < frame_len; k += hop) s += window[k] * window[k];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// RealFft ---------------------------------------------------------------------

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

RealFft::RealFft(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
  if (n < 2) throw std::invalid_argument("RealFft: size must be >= 2");
  std::lock_guard<std::mutex> lock(planner_mutex());
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
  impl_->fwd = fftw_plan_dft_r2c_1d(int(n), impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(int(n), impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->inv);
  fftw_free(impl_->real);
  fftw_free(impl_->spec);
}

void RealFft::forward(std::span<const double> in, std::span<cplx> out) {
  if (in.size() != n_ || out.size() != n_ / 2 + 1) throw std::invalid_argument("RealFft::forward: size mismatch");
  std::copy(in.begin(), in.end(), impl_->real);
  fftw_execute(impl_->fwd);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {impl_->spec[k][0], impl_->spec[k][1]};
}

void RealFft::inverse(std::span<const cplx> in, std::span<double> out) {
  if (in.size() != n_ / 2 + 1 || out.size() != n_) throw std::invalid_argument("RealFft::inverse: size mismatch");
  for (std::size_t k = 0; k < in.size(); ++k) {
    impl_->spec[k][0] = in[k].real();
    impl_->spec[k][1] = in[k].imag();
  }
  fftw_execute(impl_->inv);  // c2r destroys its input, which is our scratch copy
  const double scale = 1.0 / double(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = impl_->real[i] * scale;
}

// Analysis / synthesis -------------------------------------------------------

std::vector<cplx> stft_frame(std::span<const double> x, const FrameSpec& spec) {
  if (x.size() != spec.frame_len) {
    throw std::invalid_argument("stft_frame: expected " + std::to_string(spec.frame_len) + " samples, got " +
                                std::to_string(x.size()));
  }
  RealFft fft(spec.frame_len);
  std::vector<double> buf(spec.frame_len);
  for (std::size_t n = 0; n < buf.size(); ++n) buf[n] = x[n] * spec.window[n];
  std::vector<cplx> out(spec.bins());
  fft.forward(buf, out);
  return out;
}

namespace {

void analyze_into(std::span<const double> x, const FrameSpec& spec, RealFft& fft, CTensor& out,
                  std::size_t row_stride, std::size_t row_offset) {
  const std::size_t L = spec.frame_len, F = spec.bins();
  const std::size_t T = spec.num_frames(x.size());
  std::vector<double> buf(L);
  std::vector<cplx> bins(F);
  for (std::size_t t = 0; t < T; ++t) {
    const long start = spec.frame_start(t);
    for (std::size_t n = 0; n < L; ++n) {
      const long i = start + long(n);
      buf[n] = (i >= 0 && i < long(x.size())) ? x[std::size_t(i)] * spec.window[n] : 0.0;
    }
    fft.forward(buf, bins);
    std::copy(bins.begin(), bins.end(), out.data().begin() + long((t * row_stride + row_offset) * F));
  }
}

}  // namespace

CTensor analyze(std::span<const double> x, const FrameSpec& spec) {
  spec.validate();
  CTensor out({spec.num_frames(x.size()), spec.bins()});
  RealFft fft(spec.frame_len);
  analyze_into(x, spec, fft, out, 1, 0);
  return out;
}

CTensor analyze_multichannel(const std::vector<std::vector<double>>& channels, const FrameSpec& spec) {
  spec.validate();
  if (channels.empty()) throw std::invalid_argument("analyze_multichannel: no channels");
  const std::size_t M = channels.size(), N = channels.front().size();
  for (const auto& c : channels) {
    if (c.size() != N) throw std::invalid_argument("analyze_multichannel: channel length mismatch");
  }
  const std::size_t T = spec.num_frames(N);
  CTensor out({T * M, spec.bins()});
  RealFft fft(spec.frame_len);
  for (std::size_t m = 0; m < M; ++m) analyze_into(channels[m], spec, fft, out, M, m);
  return out;
}

std::vector<double> istft(const CTensor& frames, const FrameSpec& spec, std::size_t num_samples) {
  spec.validate();
  const std::size_t L = spec.frame_len, F = spec.bins();
  if (frames.cols() != F) throw ShapeError("istft: expected " + std::to_string(F) + " bins");
  RealFft fft(L);
  std::vector<double> out(num_samples, 0.0), buf(L);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    fft.inverse(frames.data().subspan(t * F, F), buf);
    const long start = spec.frame_start(t);
    for (std::size_t n = 0; n < L; ++n) {
      const long i = start + long(n);
      if (i >= 0 && i < long(num_samples)) out[std::size_t(i)] += buf[n] * spec.window[n];
    }
  }
  return out;
}

OverlapAdd::OverlapAdd(FrameSpec spec)
    : spec_(std::move(spec)), fft_(spec_.frame_len), acc_(spec_.frame_len, 0.0), buf_(spec_.frame_len) {
  spec_.validate();
}

std::vector<double> OverlapAdd::push(std::span<const cplx> frame) {
  if (frame.size() != spec_.bins()) throw ShapeError("OverlapAdd: wrong number of bins");
  fft_.inverse(frame, buf_);
  for (std::size_t n = 0; n < spec_.frame_len; ++n) acc_[n] += buf_[n] * spec_.window[n];
  std::vector<double> done(acc_.begin(), acc_.begin() + long(spec_.hop));
  std::copy(acc_.begin() + long(spec_.hop), acc_.end(), acc_.begin());
  std::fill(acc_.end() - long(spec_.hop), acc_.end(), 0.0);
  return done;
}

StreamingAnalyzer::StreamingAnalyzer(FrameSpec spec)
    : spec_(std::move(spec)), fft_(spec_.frame_len), history_(spec_.frame_len, 0.0) {
  spec_.validate();
}

std::vector<cplx> StreamingAnalyzer::push(std::span<const double> block) {
  if (block.size() != spec_.hop) throw std::invalid_argument("StreamingAnalyzer: block must be one hop long");
  std::copy(history_.begin() + long(spec_.hop), history_.end(), history_.begin());
  std::copy(block.begin(), block.end(), history_.end() - long(spec_.hop));
  std::vector<double> buf(spec_.frame_len);
  for (std::size_t n = 0; n < buf.size(); ++n) buf[n] = history_[n] * spec_.window[n];
  std::vector<cplx> out(spec_.bins());
  fft_.forward(buf, out);
  return out;
}

Var overlap_add(Tape& t, const Var& frames, const FrameSpec& spec, std::size_t num_samples) {
  const std::size_t F = spec.bins();
  if (frames->cols() != F) throw ShapeError("overlap_add: expected " + std::to_string(F) + " bins");
  const std::vector<double> y = istft(*frames, spec, num_samples);
  CTensor out = CTensor::from_real({1, num_samples}, y);
  return t.record(std::move(out), {frames}, [frames, spec, num_samples](CTensor& out) {
    // y is real-linear in (Re S, Im S); its adjoint is a windowed forward FFT
    // of the upstream gradient with weights 1/L at DC and Nyquist, 2/L elsewhere.
    const std::size_t L = spec.frame_len, F = spec.bins();
    RealFft fft(L);
    std::vector<double> seg(L);
    std::vector<cplx> G(F);
    auto g_out = out.grad();
    auto g_in = frames->ensure_grad();
    const double edge = 1.0 / double(L), inner = 2.0 / double(L);
    for (std::size_t t = 0; t < frames->rows(); ++t) {
      const long start = spec.frame_start(t);
      for (std::size_t n = 0; n < L; ++n) {
        const long i = start + long(n);
        seg[n] = (i >= 0 && i < long(num_samples)) ? g_out[std::size_t(i)].real() * spec.window[n] : 0.0;
      }
      fft.forward(seg, G);
      for (std::size_t k = 0; k < F; ++k) {
        g_in[t * F + k] += ((k == 0 || k == F - 1) ? edge : inner) * G[k];
      }
    }
  });
}

}  // namespace cospa::stft
