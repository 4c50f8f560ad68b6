#include "cospa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace cospa::eval {

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double sinr_db(const std::vector<double>& speech, const std::vector<double>& noise, const std::vector<double>& music) {
  const double den = energy(noise) + energy(music);
  if (!(den > 0.0)) {
    std::cerr << "warning: sinr_db: interference energy is zero, returning +inf\n";
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(energy(speech) / den);
}

double delta_sinr_db(const Components& raw, const Components& filtered) {
  return sinr_db(filtered.speech, filtered.noise, filtered.music) - sinr_db(raw.speech, raw.noise, raw.music);
}

double sdr_db(const std::vector<double>& reference, const std::vector<double>& estimate) {
  if (reference.size() != estimate.size()) throw std::invalid_argument("sdr_db: length mismatch");
  const double rr = energy(reference);
  if (!(rr > 0.0)) throw std::invalid_argument("sdr_db: reference has zero energy");
  double re = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) re += reference[i] * estimate[i];
  const double alpha = re / rr;
  double proj = 0.0, res = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double p = alpha * reference[i];
    proj += p * p;
    res += (estimate[i] - p) * (estimate[i] - p);
  }
  constexpr double kCap = 60.0;
  if (res <= 0.0 || proj >= res * 1e6) return kCap;
  if (proj <= 0.0) return -kCap;
  return std::min(kCap, 10.0 * std::log10(proj / res));
}

namespace {

std::vector<double> grid(const BeampatternOptions& o) {
  std::vector<double> a(o.angles);
  for (std::size_t i = 0; i < o.angles; ++i) a[i] = o.start_deg + double(i) * o.step_deg;
  return a;
}

cplx steer(std::size_t m, double angle_deg, double freq, const BeampatternOptions& o) {
  const double tau = double(m) * o.spacing * std::cos(angle_deg * std::numbers::pi / 180.0) / o.speed_of_sound;
  return std::polar(1.0, -2.0 * std::numbers::pi * freq * tau);
}

void normalize_db(Beampattern& bp, const std::vector<double>& power, double floor) {
  double peak = 0.0;
  for (double p : power) peak = std::max(peak, std::max(p, floor));
  if (peak <= 0.0) peak = floor;
  bp.power_db.resize(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) bp.power_db[i] = 10.0 * std::log10(std::max(power[i], floor) / peak);
}

}  // namespace

Beampattern beampattern(const CTensor& masks, std::size_t mics, const stft::FrameSpec& spec,
                        const BeampatternOptions& opts) {
  if (masks.size() == 0) throw std::invalid_argument("beampattern: empty mask sequence");
  const std::size_t F = spec.bins();
  if (masks.cols() != F || mics == 0 || masks.rows() % mics != 0) {
    throw ShapeError("beampattern: masks must be [T*M x F], got " + shape_str(masks.shape()));
  }
  const std::size_t T_mask = masks.rows() / mics;
  const auto n_probe = std::size_t(std::llround(opts.duration * spec.sample_rate));
  const std::size_t T_probe = spec.num_frames(n_probe);

  Beampattern bp;
  bp.angles_deg = grid(opts);
  bp.bins = F;
  std::vector<double> power(bp.angles_deg.size() * F, 0.0);
  std::vector<cplx> a(mics);
  for (std::size_t ai = 0; ai < bp.angles_deg.size(); ++ai) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t m = 0; m < mics; ++m) a[m] = steer(m, bp.angles_deg[ai], spec.bin_frequency(f), opts);
      double acc = 0.0;
      for (std::size_t tau = 0; tau < T_probe; ++tau) {
        const std::size_t tm = tau % T_mask;
        cplx y{};
        for (std::size_t m = 0; m < mics; ++m) y += masks.at(tm * mics + m, f) * a[m];
        // The unit-magnitude probe phase drops out of |P y|^2.
        acc += std::norm(y);
      }
      power[ai * F + f] = acc / double(T_probe);
    }
  }
  normalize_db(bp, power, opts.floor);
  return bp;
}

Beampattern array_factor(std::size_t mics, const stft::FrameSpec& spec, const BeampatternOptions& opts) {
  const std::size_t F = spec.bins();
  Beampattern bp;
  bp.angles_deg = grid(opts);
  bp.bins = F;
  std::vector<double> power(bp.angles_deg.size() * F);
  for (std::size_t ai = 0; ai < bp.angles_deg.size(); ++ai) {
    for (std::size_t f = 0; f < F; ++f) {
      cplx s{};
      for (std::size_t m = 0; m < mics; ++m) s += steer(m, bp.angles_deg[ai], spec.bin_frequency(f), opts);
      power[ai * F + f] = std::norm(s) / double(mics * mics);
    }
  }
  normalize_db(bp, power, opts.floor);
  return bp;
}

std::vector<double> angular_profile(const Beampattern& bp, const stft::FrameSpec& spec, double f_lo, double f_hi) {
  std::vector<double> prof(bp.angles_deg.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t f = 0; f < bp.bins; ++f) {
    const double hz = spec.bin_frequency(f);
    if (hz < f_lo || hz > f_hi) continue;
    ++count;
    for (std::size_t a = 0; a < prof.size(); ++a) prof[a] += std::pow(10.0, bp.at(a, f) / 10.0);
  }
  if (count == 0) throw std::invalid_argument("angular_profile: no bins in the frequency range");
  const double peak = *std::max_element(prof.begin(), prof.end());
  for (auto& p : prof) p = 10.0 * std::log10(p / peak);
  return prof;
}

void write_beampattern_csv(std::ostream& os, const Beampattern& bp, const std::string& metadata) {
  os << "# " << metadata << "\n";
  os.precision(10);
  for (std::size_t a = 0; a < bp.angles_deg.size(); ++a) {
    for (std::size_t f = 0; f < bp.bins; ++f) {
      if (f) os << ',';
      os << bp.at(a, f);
    }
    os << '\n';
  }
}

std::vector<MethodSummary> summarize(const std::vector<SceneMetrics>& metrics) {
  std::vector<MethodSummary> out;
  for (const auto& m : metrics) {
    if (std::none_of(out.begin(), out.end(), [&](const MethodSummary& s) { return s.method == m.method; })) {
      out.push_back({m.method});
    }
  }
  for (auto& s : out) {
    std::vector<double> ds, sd;
    for (const auto& m : metrics) {
      if (m.method != s.method) continue;
      ds.push_back(m.delta_sinr_db);
      sd.push_back(m.sdr_db);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sdev) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= double(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      sdev = std::sqrt(var / double(v.size()));
    };
    s.scenes = ds.size();
    stats(ds, s.delta_sinr_mean, s.delta_sinr_std);
    stats(sd, s.sdr_mean, s.sdr_std);
  }
  return out;
}

std::string to_jsonl(const SceneMetrics& m) {
  nlohmann::json j{{"scene", m.scene_id},       {"method", m.method},
                   {"sinr_in_db", m.sinr_in_db}, {"sinr_out_db", m.sinr_out_db},
                   {"delta_sinr_db", m.delta_sinr_db}, {"sdr_db", m.sdr_db}};
  return j.dump();
}

void write_summary_csv(std::ostream& os, const std::vector<MethodSummary>& summary) {
  os << "method,delta_sinr_db,sdr_db,delta_sinr_std,sdr_std,scenes\n";
  for (const auto& s : summary) {
    os << s.method << ',' << s.delta_sinr_mean << ',' << s.sdr_mean << ',' << s.delta_sinr_std << ',' << s.sdr_std
       << ',' << s.scenes << '\n';
  }
}

}  // namespace cospa::eval
