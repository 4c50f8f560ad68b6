#include "cospa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <stdexcept>

#include "cospa/stft.hpp"

namespace cospa::sim {

namespace {

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

bool inside(const RoomSpec& room, const Vec3& p, double clearance) {
  for (int i = 0; i < 3; ++i) {
    if (p[i] < clearance || p[i] > room.dims[i] - clearance) return false;
  }
  return true;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

Vec3 ArraySpec::center() const {
  Vec3 c{0, 0, 0};
  for (const auto& m : mics) {
    for (int i = 0; i < 3; ++i) c[i] += m[i];
  }
  for (auto& v : c) v /= double(std::max<std::size_t>(1, mics.size()));
  return c;
}

ArraySpec make_linear_array(const Vec3& center, double azimuth_rad, std::size_t mics, double spacing) {
  ArraySpec a;
  a.spacing = spacing;
  const double ux = std::cos(azimuth_rad), uy = std::sin(azimuth_rad);
  for (std::size_t m = 0; m < mics; ++m) {
    const double off = (double(m) - 0.5 * double(mics - 1)) * spacing;
    a.mics.push_back({center[0] + off * ux, center[1] + off * uy, center[2]});
  }
  return a;
}

std::size_t SceneSpec::num_samples() const noexcept {
  return static_cast<std::size_t>(std::llround(duration * sample_rate));
}

void SceneRanges::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (room_min[i] > room_max[i] || room_min[i] <= 0.0) throw std::invalid_argument("SceneRanges: bad room range");
  }
  if (rt60.lo > rt60.hi || rt60.lo <= 0.0) throw std::invalid_argument("SceneRanges: bad rt60 range");
  if (snr_db.lo > snr_db.hi || smr_db.lo > smr_db.hi) throw std::invalid_argument("SceneRanges: bad SNR range");
  if (mics == 0 || spacing <= 0.0) throw std::invalid_argument("SceneRanges: bad array");
  if (duration <= 0.0 || sample_rate <= 0.0) throw std::invalid_argument("SceneRanges: bad duration");
}

SceneSpec sample_scene(std::uint64_t seed, const SceneRanges& ranges) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  SceneSpec s;
  s.seed = seed;
  s.duration = ranges.duration;
  s.sample_rate = ranges.sample_rate;
  for (int i = 0; i < 3; ++i) s.room.dims[i] = uni(ranges.room_min[i], ranges.room_max[i]);
  s.room.rt60 = uni(ranges.rt60.lo, ranges.rt60.hi);
  s.snr_db = uni(ranges.snr_db.lo, ranges.snr_db.hi);
  s.smr_db = uni(ranges.smr_db.lo, ranges.smr_db.hi);

  const double c = ranges.wall_clearance;
  auto point = [&] {
    return Vec3{uni(c, s.room.dims[0] - c), uni(c, s.room.dims[1] - c), uni(c, s.room.dims[2] - c)};
  };
  bool placed = false;
  for (int attempt = 0; attempt < ranges.max_attempts && !placed; ++attempt) {
    const Vec3 center = point();
    const double az = uni(0.0, 2.0 * std::numbers::pi);
    s.array = make_linear_array(center, az, ranges.mics, ranges.spacing);
    if (!std::all_of(s.array.mics.begin(), s.array.mics.end(),
                     [&](const Vec3& m) { return inside(s.room, m, c); })) {
      continue;
    }
    Vec3* sources[3] = {&s.speech, &s.noise, &s.music};
    bool ok = true;
    for (Vec3* src : sources) {
      bool found = false;
      for (int k = 0; k < ranges.max_attempts && !found; ++k) {
        *src = point();
        found = dist(*src, center) >= ranges.min_source_distance;
      }
      ok = ok && found;
    }
    placed = ok;
  }
  if (!placed) throw std::runtime_error("sample_scene: could not place array and sources in the room");
  return s;
}

double doa_deg(const ArraySpec& array, const Vec3& src) {
  if (array.size() < 2) throw std::invalid_argument("doa_deg: need at least two microphones");
  const Vec3 c = array.center();
  Vec3 axis{}, dir{};
  for (int i = 0; i < 3; ++i) {
    axis[i] = array.mics.front()[i] - array.mics.back()[i];
    dir[i] = src[i] - c[i];
  }
  const double na = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  const double nd = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  if (na == 0.0 || nd == 0.0) throw std::invalid_argument("doa_deg: degenerate geometry");
  const double cosang = std::clamp((axis[0] * dir[0] + axis[1] * dir[1] + axis[2] * dir[2]) / (na * nd), -1.0, 1.0);
  return std::acos(cosang) * 180.0 / std::numbers::pi;
}

// Image source method --------------------------------------------------------

double reflection_coefficient(const RoomSpec& room) {
  if (room.rt60 <= 0.0) return 0.0;
  const auto& d = room.dims;
  const double volume = d[0] * d[1] * d[2];
  const double surface = 2.0 * (d[0] * d[1] + d[0] * d[2] + d[1] * d[2]);
  // Eyring: T60 = 24 ln(10) V / (-c S ln(1 - alpha)), beta = sqrt(1 - alpha).
  const double log_one_minus_alpha = -24.0 * std::log(10.0) * volume / (room.speed_of_sound * surface * room.rt60);
  return std::exp(0.5 * log_one_minus_alpha);
}

namespace {

void check_geometry(const RoomSpec& room, const Vec3& src, const Vec3& mic) {
  for (double v : room.dims) {
    if (!(v > 0.0)) throw std::invalid_argument("image_source_rir: room dimensions must be positive");
  }
  if (!inside(room, src, 0.0) || !inside(room, mic, 0.0)) {
    throw std::invalid_argument("image_source_rir: source and microphone must lie inside the room");
  }
  if (dist(src, mic) <= 0.0) throw std::invalid_argument("image_source_rir: source coincides with microphone");
}

std::size_t response_length(const RoomSpec& room, const Vec3& src, const Vec3& mic, const RirOptions& opts) {
  if (opts.length != 0) return opts.length;
  return std::size_t(std::ceil(dist(src, mic) / room.speed_of_sound * opts.sample_rate +
                               std::max(room.rt60, 0.0) * opts.sample_rate)) +
         opts.interp_taps;
}

// Calls fn(distance, reflection order) for every image closer than max_dist.
template <typename Fn>
void for_each_image(const RoomSpec& room, const Vec3& src, const Vec3& mic, double max_dist, int max_order, Fn&& fn) {
  const auto& L = room.dims;
  int nmax[3];
  for (int i = 0; i < 3; ++i) nmax[i] = int(std::ceil(max_dist / (2.0 * L[i]))) + 1;
  for (int qx = 0; qx <= 1; ++qx) {
    for (int qy = 0; qy <= 1; ++qy) {
      for (int qz = 0; qz <= 1; ++qz) {
        const double ix = (1 - 2 * qx) * src[0] - mic[0];
        const double iy = (1 - 2 * qy) * src[1] - mic[1];
        const double iz = (1 - 2 * qz) * src[2] - mic[2];
        for (int mx = -nmax[0]; mx <= nmax[0]; ++mx) {
          const double dx = ix + 2.0 * mx * L[0];
          if (std::abs(dx) > max_dist) continue;
          const int ox = std::abs(mx - qx) + std::abs(mx);
          for (int my = -nmax[1]; my <= nmax[1]; ++my) {
            const double dy = iy + 2.0 * my * L[1];
            const double dxy2 = dx * dx + dy * dy;
            if (dxy2 > max_dist * max_dist) continue;
            const int oxy = ox + std::abs(my - qy) + std::abs(my);
            for (int mz = -nmax[2]; mz <= nmax[2]; ++mz) {
              const int order = oxy + std::abs(mz - qz) + std::abs(mz);
              if (max_order >= 0 && order > max_order) continue;
              const double dz = iz + 2.0 * mz * L[2];
              const double d = std::sqrt(dxy2 + dz * dz);
              if (d >= max_dist) continue;
              fn(d, order);
            }
          }
        }
      }
    }
  }
}

// Line fit of a Schroeder curve on its -5 to -25 dB span, extrapolated to -60 dB.
double fit_decay(const std::vector<double>& edc, double rate) {
  const double total = edc.front();
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    const double db = edc[i] > 0.0 ? 10.0 * std::log10(edc[i] / total) : -std::numeric_limits<double>::infinity();
    if (db > -5.0) continue;
    if (db < -25.0) break;
    const double x = double(i) / rate;
    n += 1;
    sx += x;
    sy += db;
    sxx += x * x;
    sxy += x * db;
  }
  if (n < 3) throw std::runtime_error("measure_rt60: no decay span between -5 and -25 dB");
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0.0)) throw std::runtime_error("measure_rt60: energy decay curve is not decaying");
  return -60.0 / slope;
}

}  // namespace

double decay_matched_reflection(const RoomSpec& room, const Vec3& src, const Vec3& mic, const RirOptions& opts) {
  if (room.rt60 <= 0.0) return 0.0;
  check_geometry(room, src, mic);
  // Image energies binned per millisecond and reflection order; the decay
  // curve for any beta is then a weighted sum over orders.
  const double bin_rate = 1000.0;
  const std::size_t length = response_length(room, src, mic, opts);
  const std::size_t bins = std::size_t(std::ceil(double(length) / opts.sample_rate * bin_rate)) + 1;
  const double max_dist = double(length) / opts.sample_rate * room.speed_of_sound;
  std::vector<std::vector<double>> energy_by_order;
  for_each_image(room, src, mic, max_dist, opts.max_order, [&](double d, int order) {
    if (std::size_t(order) >= energy_by_order.size()) energy_by_order.resize(std::size_t(order) + 1);
    auto& e = energy_by_order[std::size_t(order)];
    if (e.empty()) e.assign(bins, 0.0);
    const double g = 1.0 / (4.0 * std::numbers::pi * d);
    e[std::min(bins - 1, std::size_t(d / room.speed_of_sound * bin_rate))] += g * g;
  });
  std::vector<double> edc(bins);
  auto t60 = [&](double beta) {
    std::fill(edc.begin(), edc.end(), 0.0);
    double w = 1.0;
    for (const auto& e : energy_by_order) {
      if (!e.empty()) {
        for (std::size_t i = 0; i < bins; ++i) edc[i] += w * e[i];
      }
      w *= beta * beta;
    }
    for (std::size_t i = bins - 1; i-- > 0;) edc[i] += edc[i + 1];
    try {
      return fit_decay(edc, bin_rate);
    } catch (const std::runtime_error&) {
      // No usable span: either everything arrives at once or nothing decays.
      return edc.back() < std::pow(10.0, -2.5) * edc.front() ? 0.0 : std::numeric_limits<double>::infinity();
    }
  };
  // Bisect below a bracket grown from Eyring's value. Far above it the
  // truncated response no longer decays monotonically.
  double lo = 1e-3, hi = reflection_coefficient(room);
  for (int k = 0; k < 8 && t60(hi) < room.rt60; ++k) hi = std::sqrt(hi);
  if (t60(hi) < room.rt60) return hi;
  if (t60(lo) >= room.rt60) return lo;
  for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (t60(mid) < room.rt60 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Rir image_source_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, const RirOptions& opts) {
  check_geometry(room, src, mic);
  const double fs = opts.sample_rate, c = room.speed_of_sound;
  const std::size_t half = opts.interp_taps / 2;
  const std::size_t length = response_length(room, src, mic, opts);
  Rir rir{std::vector<double>(length, 0.0), fs};
  const double beta = opts.reflection >= 0.0 ? opts.reflection : decay_matched_reflection(room, src, mic, opts);
  const double max_dist = double(length) / fs * c;

  // Windowed sinc: sin(pi (j - frac)) = -(-1)^j sin(pi frac); the Hann window
  // cos is advanced by rotation across the taps.
  const double dtheta = 2.0 * std::numbers::pi / double(opts.interp_taps);
  const double cd = std::cos(dtheta), sd = std::sin(dtheta);
  const long first_tap = -long(half) + 1;

  auto add_image = [&](double d, double gain) {
    const double tau = d / c * fs;
    long i0 = long(std::floor(tau));
    const double frac = tau - double(i0);
    if (frac < 1e-9 || frac > 1.0 - 1e-9) {
      i0 = long(std::lround(tau));
      if (i0 >= 0 && i0 < long(length)) rir.taps[std::size_t(i0)] += gain;
      return;
    }
    const double s_frac = std::sin(std::numbers::pi * frac);
    double wc = std::cos(dtheta * (double(first_tap) - frac));
    double ws = std::sin(dtheta * (double(first_tap) - frac));
    for (long j = first_tap; j <= long(half); ++j) {
      const long n = i0 + j;
      const double x = double(j) - frac;
      if (n >= 0 && n < long(length)) {
        const double sign = (j % 2 == 0) ? -1.0 : 1.0;
        const double sinc = sign * s_frac / (std::numbers::pi * x);
        rir.taps[std::size_t(n)] += gain * sinc * 0.5 * (1.0 + wc);
      }
      const double nwc = wc * cd - ws * sd;
      ws = ws * cd + wc * sd;
      wc = nwc;
    }
  };

  std::vector<double> beta_pow(1, 1.0);
  for_each_image(room, src, mic, max_dist, opts.max_order, [&](double d, int order) {
    while (beta_pow.size() <= std::size_t(order)) beta_pow.push_back(beta_pow.back() * beta);
    const double refl = beta_pow[std::size_t(order)];
    if (refl == 0.0) return;
    add_image(d, refl / (4.0 * std::numbers::pi * d));
  });
  if (beta > 0.0 && opts.max_order != 0 && opts.highpass_hz > 0.0) {
    // Allen and Berkley's second-order high-pass against the DC build-up of
    // the all-positive image sum.
    const double w = 2.0 * std::numbers::pi * opts.highpass_hz / fs;
    const double r1 = std::exp(-w), b1 = 2.0 * r1 * std::cos(w), b2 = -r1 * r1, a1 = -(1.0 + r1);
    double y0 = 0.0, y1 = 0.0, y2 = 0.0;
    for (auto& v : rir.taps) {
      y2 = y1;
      y1 = y0;
      y0 = b1 * y1 + b2 * y2 + v;
      v = y0 + a1 * y1 + r1 * y2;
    }
  }
  return rir;
}

double measure_rt60(const Rir& rir) {
  const auto& h = rir.taps;
  std::vector<double> edc(h.size());
  double acc = 0.0;
  for (std::size_t i = h.size(); i-- > 0;) {
    acc += h[i] * h[i];
    edc[i] = acc;
  }
  if (h.empty() || acc <= 0.0) throw std::invalid_argument("measure_rt60: empty response");
  return fit_decay(edc, rir.sample_rate);
}

// Rendering ------------------------------------------------------------------

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h, std::size_t out_len) {
  std::vector<double> y(out_len, 0.0);
  if (x.empty() || h.empty()) return y;
  const std::size_t n = next_pow2(x.size() + h.size() - 1);
  stft::RealFft fft(n);
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  std::vector<std::complex<double>> A(n / 2 + 1), B(n / 2 + 1);
  fft.forward(a, A);
  fft.forward(b, B);
  for (std::size_t k = 0; k < A.size(); ++k) A[k] *= B[k];
  fft.inverse(A, a);
  std::copy_n(a.begin(), std::min(out_len, x.size() + h.size() - 1), y.begin());
  return y;
}

Multichannel RenderedScene::interference() const {
  Multichannel out = noise;
  for (std::size_t m = 0; m < out.size(); ++m) {
    for (std::size_t i = 0; i < out[m].size(); ++i) out[m][i] += music[m][i] + sensor[m][i];
  }
  return out;
}

RenderedScene render_scene(const SceneSpec& spec, const DrySignals& dry, const RenderOptions& opts) {
  const std::size_t N = spec.num_samples();
  const std::size_t M = spec.array.size();
  if (M == 0) throw std::invalid_argument("render_scene: empty array");
  if (dry.speech.size() < N || dry.noise.size() < N || dry.music.size() < N) {
    throw std::invalid_argument("render_scene: dry signals shorter than the scene duration");
  }
  if (energy(dry.speech) <= 0.0 || energy(dry.noise) <= 0.0 || energy(dry.music) <= 0.0) {
    throw std::invalid_argument("render_scene: silent dry source");
  }
  auto head = [N](const std::vector<double>& v) { return std::vector<double>(v.begin(), v.begin() + long(N)); };
  const std::vector<double> s_dry = head(dry.speech), n_dry = head(dry.noise), m_dry = head(dry.music);

  RirOptions ro;
  ro.sample_rate = spec.sample_rate;
  ro.max_order = opts.max_order;
  // One set of walls for every source and microphone in the room.
  ro.reflection = decay_matched_reflection(spec.room, spec.speech, spec.array.center(), ro);

  RenderedScene r;
  r.spec = spec;
  r.speech.resize(M);
  r.noise.resize(M);
  r.music.resize(M);
  r.sensor.resize(M);
  r.mixture.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    r.speech_rirs.push_back(image_source_rir(spec.room, spec.speech, spec.array.mics[m], ro));
    r.speech[m] = convolve(s_dry, r.speech_rirs.back().taps, N);
    r.noise[m] = convolve(n_dry, image_source_rir(spec.room, spec.noise, spec.array.mics[m], ro).taps, N);
    r.music[m] = convolve(m_dry, image_source_rir(spec.room, spec.music, spec.array.mics[m], ro).taps, N);
  }

  const double e_speech = energy(r.speech[0]);
  const double e_noise = energy(r.noise[0]);
  const double e_music = energy(r.music[0]);
  if (e_speech <= 0.0 || e_noise <= 0.0 || e_music <= 0.0) {
    throw std::runtime_error("render_scene: a source is silent at the reference microphone");
  }
  const double g_speech = opts.speech_rms * std::sqrt(double(N) / e_speech);
  const double g_noise = g_speech * std::sqrt(e_speech / (e_noise * std::pow(10.0, spec.snr_db / 10.0)));
  const double g_music = g_speech * std::sqrt(e_speech / (e_music * std::pow(10.0, spec.smr_db / 10.0)));

  r.dry_speech = s_dry;
  for (auto& v : r.dry_speech) v *= g_speech;

  std::mt19937_64 rng(spec.seed ^ 0x5e5503u);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t m = 0; m < M; ++m) {
    for (auto& v : r.speech[m]) v *= g_speech;
    for (auto& v : r.noise[m]) v *= g_noise;
    for (auto& v : r.music[m]) v *= g_music;
    const double sigma = std::sqrt(energy(r.speech[m]) / double(N) * std::pow(10.0, -opts.sensor_snr_db / 10.0));
    r.sensor[m].resize(N);
    for (auto& v : r.sensor[m]) v = sigma * nd(rng);
    r.mixture[m].resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      r.mixture[m][i] = r.speech[m][i] + r.noise[m][i] + r.music[m][i] + r.sensor[m][i];
    }
  }
  return r;
}

}  // namespace cospa::sim
