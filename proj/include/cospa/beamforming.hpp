#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cospa/ctensor.hpp"
#include "cospa/scene.hpp"
#include "cospa/stft.hpp"

namespace cospa::bf {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

class DegenerateSteering : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Far-field steering vector of a uniform linear array relative to mic 0:
/// a_m = exp(-j 2 pi f tau_m), tau_m = m d cos(doa) / c.
CVec freefield_steering(double doa_deg, std::size_t mics, double spacing, double freq_hz, double c = 343.0);

/// One steering vector per STFT bin.
std::vector<CVec> steering_vectors(double doa_deg, std::size_t mics, double spacing, const stft::FrameSpec& spec,
                                   double c = 343.0);

struct CovarianceOptions {
  double lambda = 0.95;
  double loading = 1e-6;  // delta = loading * trace(R) / M
  double init = 1e-6;     // R starts at init * I
};

struct SpatialCovariance {
  CMat R;
  double lambda = 0.95;

  static SpatialCovariance identity(std::size_t mics, double scale, double lambda);
};

/// R <- lambda R + (1 - lambda) n n^H, then R is made exactly Hermitian.
void update_noise_cov(SpatialCovariance& cov, const CVec& n);

/// w = (R + delta I)^-1 a / (a^H (R + delta I)^-1 a), delta = loading * trace(R) / M
/// (loading itself when the trace vanishes).
CVec mvdr_weights(const CMat& R, const CVec& a, double loading = 1e-6);

/// Relative transfer functions h_m(f) / h_0(f) from the true impulse responses:
/// frame_len-point DFT of the first frame_len taps, i.e. the transfer function
/// seen within one analysis frame. `valid[f]` is false where |h_0(f)| < 1e-12.
struct Rtf {
  std::vector<CVec> vectors;
  std::vector<char> valid;
};
Rtf rtf_from_rirs(const std::vector<sim::Rir>& rirs, const stft::FrameSpec& spec);

/// MVDR with the RTF as steering; delay-and-sum fallback on invalid bins.
CVec gmvdr_weights(const CMat& R, const CVec& rtf, bool valid, double loading = 1e-6);

/// D X* / (|X|^2 + eps).
inline cplx ideal_crm(cplx d, cplx x, double eps = 1e-10) { return d * std::conj(x) / (std::norm(x) + eps); }

/// Recursive MVDR over a frame sequence. `noise` holds noise-only frames in the
/// frame-major layout [T*M x F]; each frame first updates R(f) and then yields
/// w(tau, f). Returns the weights in the same layout. `valid` (optional, per
/// bin) selects the delay-and-sum fallback where false.
CTensor mvdr_weight_sequence(const CTensor& noise, std::size_t mics, const std::vector<CVec>& steering,
                             const CovarianceOptions& opts = {}, const std::vector<char>* valid = nullptr);

/// Sum over channels of masks(tau*M+m, f) * X(tau*M+m, f): [T*M x F] -> [T x F].
CTensor filter_and_sum(const CTensor& masks, const CTensor& X, std::size_t mics);

/// Elementwise conjugate; turns beamformer weights into filter-and-sum masks.
CTensor conjugate(const CTensor& w);

/// Training target in both equivalent forms: sum_m w_m^* D_m, and
/// sum_m w_m^* cRM_m X_m with cRM_m = ideal_crm(D_m, X_m).
struct Target {
  CTensor spectrum;      // [T x F]
  CTensor spectrum_crm;  // [T x F]
  CTensor weights;       // [T*M x F]
};
Target make_target(const CTensor& speech, const CTensor& noise, const CTensor& mixture, std::size_t mics,
                   const std::vector<CVec>& steering, const CovarianceOptions& opts = {});

}  // namespace cospa::bf
