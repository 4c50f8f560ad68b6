#include "cospa/beamforming.hpp"

#include <cmath>
#include <numbers>

namespace cospa::bf {

CVec freefield_steering(double doa_deg, std::size_t mics, double spacing, double freq_hz, double c) {
  const double cos_doa = std::cos(doa_deg * std::numbers::pi / 180.0);
  CVec a(static_cast<Eigen::Index>(mics));
  for (std::size_t m = 0; m < mics; ++m) {
    const double tau = double(m) * spacing * cos_doa / c;
    a[Eigen::Index(m)] = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz * tau);
  }
  return a;
}

std::vector<CVec> steering_vectors(double doa_deg, std::size_t mics, double spacing, const stft::FrameSpec& spec,
                                   double c) {
  std::vector<CVec> out;
  out.reserve(spec.bins());
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    out.push_back(freefield_steering(doa_deg, mics, spacing, spec.bin_frequency(f), c));
  }
  return out;
}

SpatialCovariance SpatialCovariance::identity(std::size_t mics, double scale, double lambda) {
  return {CMat::Identity(Eigen::Index(mics), Eigen::Index(mics)) * scale, lambda};
}

void update_noise_cov(SpatialCovariance& cov, const CVec& n) {
  if (cov.R.rows() != n.size() || cov.R.cols() != n.size()) throw ShapeError("update_noise_cov: size mismatch");
  cov.R = cov.lambda * cov.R + (1.0 - cov.lambda) * (n * n.adjoint());
  const CMat herm = 0.5 * (cov.R + cov.R.adjoint());
  cov.R = herm;
  for (Eigen::Index i = 0; i < cov.R.rows(); ++i) cov.R(i, i) = cov.R(i, i).real();
}

CVec mvdr_weights(const CMat& R, const CVec& a, double loading) {
  const Eigen::Index M = a.size();
  if (R.rows() != M || R.cols() != M) throw ShapeError("mvdr_weights: size mismatch");
  const double trace = R.trace().real();
  const double delta = trace > 0.0 ? loading * trace / double(M) : loading;
  CMat Rl = R;
  Rl.diagonal().array() += delta;
  Eigen::LLT<CMat> llt(Rl);
  if (llt.info() != Eigen::Success) throw DegenerateSteering("mvdr_weights: loaded covariance is not positive definite");
  const CVec Ria = llt.solve(a);
  const cplx denom = a.dot(Ria);  // a^H R^-1 a
  if (!(std::abs(denom) >= 1e-15)) throw DegenerateSteering("mvdr_weights: a^H R^-1 a vanishes");
  return Ria / denom.real();
}

Rtf rtf_from_rirs(const std::vector<sim::Rir>& rirs, const stft::FrameSpec& spec) {
  if (rirs.empty()) throw std::invalid_argument("rtf_from_rirs: no impulse responses");
  const std::size_t L = spec.frame_len, F = spec.bins();
  stft::RealFft fft(L);
  std::vector<std::vector<cplx>> H(rirs.size(), std::vector<cplx>(F));
  std::vector<double> buf(L);
  for (std::size_t m = 0; m < rirs.size(); ++m) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t n = std::min(L, rirs[m].taps.size());
    std::copy(rirs[m].taps.begin(), rirs[m].taps.begin() + long(n), buf.begin());
    fft.forward(buf, H[m]);
  }
  Rtf out;
  out.vectors.assign(F, CVec::Ones(Eigen::Index(rirs.size())));
  out.valid.assign(F, 1);
  for (std::size_t f = 0; f < F; ++f) {
    const cplx h0 = H[0][f];
    if (std::abs(h0) < 1e-12) {
      out.valid[f] = 0;
      continue;
    }
    for (std::size_t m = 0; m < rirs.size(); ++m) out.vectors[f][Eigen::Index(m)] = H[m][f] / h0;
  }
  return out;
}

CVec gmvdr_weights(const CMat& R, const CVec& rtf, bool valid, double loading) {
  if (!valid) return CVec::Constant(rtf.size(), cplx(1.0 / double(rtf.size()), 0.0));
  return mvdr_weights(R, rtf, loading);
}

CTensor mvdr_weight_sequence(const CTensor& noise, std::size_t mics, const std::vector<CVec>& steering,
                             const CovarianceOptions& opts, const std::vector<char>* valid) {
  const std::size_t F = noise.cols();
  if (mics == 0 || noise.rows() % mics != 0) throw ShapeError("mvdr_weight_sequence: rows not a multiple of M");
  if (steering.size() != F) throw ShapeError("mvdr_weight_sequence: need one steering vector per bin");
  if (valid && valid->size() != F) throw ShapeError("mvdr_weight_sequence: validity mask size");
  const std::size_t T = noise.rows() / mics;
  std::vector<SpatialCovariance> cov(F, SpatialCovariance::identity(mics, opts.init, opts.lambda));
  CTensor W({T * mics, F});
  CVec n(static_cast<Eigen::Index>(mics));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t m = 0; m < mics; ++m) n[Eigen::Index(m)] = noise.at(t * mics + m, f);
      update_noise_cov(cov[f], n);
      const bool ok = valid ? (*valid)[f] != 0 : true;
      const CVec w = gmvdr_weights(cov[f].R, steering[f], ok, opts.loading);
      for (std::size_t m = 0; m < mics; ++m) W.at(t * mics + m, f) = w[Eigen::Index(m)];
    }
  }
  return W;
}

CTensor filter_and_sum(const CTensor& masks, const CTensor& X, std::size_t mics) {
  if (masks.shape() != X.shape()) throw ShapeError("filter_and_sum: mask/spectrum shape mismatch");
  if (mics == 0 || X.rows() % mics != 0) throw ShapeError("filter_and_sum: rows not a multiple of M");
  const std::size_t T = X.rows() / mics, F = X.cols();
  CTensor out({T, F});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t m = 0; m < mics; ++m) {
      for (std::size_t f = 0; f < F; ++f) out.at(t, f) += masks.at(t * mics + m, f) * X.at(t * mics + m, f);
    }
  }
  return out;
}

CTensor conjugate(const CTensor& w) {
  CTensor out = w;
  for (auto& v : out.data()) v = std::conj(v);
  return out;
}

Target make_target(const CTensor& speech, const CTensor& noise, const CTensor& mixture, std::size_t mics,
                   const std::vector<CVec>& steering, const CovarianceOptions& opts) {
  if (speech.size() == 0 || noise.size() == 0 || mixture.size() == 0) {
    throw std::invalid_argument("make_target: missing speech, noise or mixture frames");
  }
  if (speech.shape() != noise.shape() || speech.shape() != mixture.shape()) {
    throw ShapeError("make_target: component shapes differ");
  }
  Target t;
  t.weights = mvdr_weight_sequence(noise, mics, steering, opts);
  const CTensor masks = conjugate(t.weights);
  t.spectrum = filter_and_sum(masks, speech, mics);
  CTensor crm_x = mixture;
  for (std::size_t i = 0; i < crm_x.size(); ++i) crm_x[i] = ideal_crm(speech[i], mixture[i]) * mixture[i];
  t.spectrum_crm = filter_and_sum(masks, crm_x, mics);
  return t;
}

}  // namespace cospa::bf
