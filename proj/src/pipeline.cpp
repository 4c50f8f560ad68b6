#include "cospa/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>

#include <json.hpp>

namespace cospa::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

sim::Multichannel sum_channels(const sim::Multichannel& a, const sim::Multichannel& b) {
  sim::Multichannel out = a;
  for (std::size_t m = 0; m < out.size(); ++m) {
    for (std::size_t i = 0; i < out[m].size(); ++i) out[m][i] += b[m][i];
  }
  return out;
}

json vec3_json(const sim::Vec3& v) { return json::array({v[0], v[1], v[2]}); }

sim::Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("manifest: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_rate(const wav::Audio& a, double fs, const std::string& path) {
  if (a.sample_rate != fs) {
    throw std::runtime_error(path + ": sample rate " + std::to_string(a.sample_rate) + " Hz, expected " +
                             std::to_string(fs) + " Hz");
  }
}

}  // namespace

sim::Multichannel SceneData::interference() const { return sum_channels(sum_channels(noise, music), sensor); }

SceneData simulate(const sim::SceneSpec& spec, const sim::RenderOptions& opts) {
  const sim::DrySignals dry = sim::synth_dry_signals(spec.seed, spec.num_samples(), spec.sample_rate);
  sim::RenderedScene r = sim::render_scene(spec, dry, opts);
  SceneData s;
  s.spec = spec;
  s.doa_speech = sim::doa_deg(spec.array, spec.speech);
  s.doa_noise = sim::doa_deg(spec.array, spec.noise);
  s.doa_music = sim::doa_deg(spec.array, spec.music);
  s.mixture = std::move(r.mixture);
  s.speech = std::move(r.speech);
  s.noise = std::move(r.noise);
  s.music = std::move(r.music);
  s.sensor = std::move(r.sensor);
  s.speech_rirs = std::move(r.speech_rirs);
  return s;
}

Spectra analyze(const SceneData& scene, const stft::FrameSpec& spec) {
  Spectra s;
  s.mixture = stft::analyze_multichannel(scene.mixture, spec);
  s.speech = stft::analyze_multichannel(scene.speech, spec);
  s.noise = stft::analyze_multichannel(scene.noise, spec);
  s.music = stft::analyze_multichannel(scene.music, spec);
  s.sensor = stft::analyze_multichannel(scene.sensor, spec);
  s.interference = stft::analyze_multichannel(scene.interference(), spec);
  return s;
}

std::vector<double> compute_target(const SceneData& scene, const Spectra& spectra, const stft::FrameSpec& spec,
                                   const bf::CovarianceOptions& cov) {
  if (scene.speech.empty() || scene.noise.empty()) throw std::invalid_argument("compute_target: missing components");
  const auto steering = bf::steering_vectors(scene.doa_speech, scene.mics(), scene.spec.array.spacing, spec,
                                             scene.spec.room.speed_of_sound);
  const bf::Target t = bf::make_target(spectra.speech, spectra.interference, spectra.mixture, scene.mics(), steering, cov);
  return stft::istft(t.spectrum, spec, scene.samples());
}

// Manifest ----------------------------------------------------------------------

std::string record_to_json(const SceneRecord& r) {
  const sim::SceneSpec& s = r.spec;
  json mics = json::array();
  for (const auto& m : s.array.mics) mics.push_back(vec3_json(m));
  json j{{"id", s.id},
         {"seed", s.seed},
         {"room", {{"dims", vec3_json(s.room.dims)}, {"rt60", s.room.rt60}, {"speed_of_sound", s.room.speed_of_sound}}},
         {"array", {{"mics", mics}, {"spacing", s.array.spacing}}},
         {"speech", vec3_json(s.speech)},
         {"noise", vec3_json(s.noise)},
         {"music", vec3_json(s.music)},
         {"snr_db", s.snr_db},
         {"smr_db", s.smr_db},
         {"duration", s.duration},
         {"sample_rate", s.sample_rate},
         {"doa_speech", r.doa_speech},
         {"doa_noise", r.doa_noise},
         {"doa_music", r.doa_music},
         {"files", r.files}};
  return j.dump();
}

SceneRecord record_from_json(const std::string& line) {
  const json j = json::parse(line);
  SceneRecord r;
  sim::SceneSpec& s = r.spec;
  s.id = j.at("id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const json& room = j.at("room");
  s.room.dims = vec3_from(room.at("dims"));
  s.room.rt60 = room.at("rt60").get<double>();
  s.room.speed_of_sound = room.value("speed_of_sound", 343.0);
  for (const auto& m : j.at("array").at("mics")) s.array.mics.push_back(vec3_from(m));
  s.array.spacing = j.at("array").at("spacing").get<double>();
  s.speech = vec3_from(j.at("speech"));
  s.noise = vec3_from(j.at("noise"));
  s.music = vec3_from(j.at("music"));
  s.snr_db = j.at("snr_db").get<double>();
  s.smr_db = j.at("smr_db").get<double>();
  s.duration = j.at("duration").get<double>();
  s.sample_rate = j.value("sample_rate", 16000.0);
  r.doa_speech = j.value("doa_speech", sim::doa_deg(s.array, s.speech));
  r.doa_noise = j.value("doa_noise", sim::doa_deg(s.array, s.noise));
  r.doa_music = j.value("doa_music", sim::doa_deg(s.array, s.music));
  if (j.contains("files")) r.files = j.at("files").get<std::map<std::string, std::string>>();
  return r;
}

void write_manifest(const std::string& path, const std::vector<SceneRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  for (const auto& r : records) os << record_to_json(r) << '\n';
  if (!os) throw std::runtime_error("failed writing manifest " + path);
}

std::vector<SceneRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path);
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

SceneRecord save_scene(const std::string& dir, const SceneData& scene) {
  fs::create_directories(dir);
  const double fs_hz = scene.spec.sample_rate;
  SceneRecord r;
  r.spec = scene.spec;
  r.doa_speech = scene.doa_speech;
  r.doa_noise = scene.doa_noise;
  r.doa_music = scene.doa_music;
  auto put = [&](const std::string& role, const std::string& suffix, const sim::Multichannel& ch) {
    const std::string name = scene.spec.id + "." + suffix + ".wav";
    wav::write((fs::path(dir) / name).string(), wav::Audio{fs_hz, ch});
    r.files[role] = name;
  };
  put("mixture", "mix", scene.mixture);
  put("speech", "speech", scene.speech);
  put("noise", "noise", scene.noise);
  put("music", "music", scene.music);
  put("sensor", "sensor", scene.sensor);
  if (!scene.target.empty()) put("target", "target", {scene.target});
  if (!scene.speech_rirs.empty()) {
    std::size_t len = 0;
    for (const auto& h : scene.speech_rirs) len = std::max(len, h.taps.size());
    sim::Multichannel rir;
    for (const auto& h : scene.speech_rirs) {
      rir.push_back(h.taps);
      rir.back().resize(len, 0.0);
    }
    put("rir", "rir", rir);
  }
  return r;
}

SceneData load_scene(const SceneRecord& record, const std::string& base_dir) {
  SceneData s;
  s.spec = record.spec;
  s.doa_speech = record.doa_speech;
  s.doa_noise = record.doa_noise;
  s.doa_music = record.doa_music;
  const double fs_hz = record.spec.sample_rate;
  auto get = [&](const std::string& role, bool required) -> sim::Multichannel {
    const auto it = record.files.find(role);
    if (it == record.files.end()) {
      if (required) throw std::runtime_error("scene '" + record.spec.id + "' has no " + role + " file");
      return {};
    }
    const std::string path = (fs::path(base_dir) / it->second).string();
    wav::Audio a = wav::read(path);
    check_rate(a, fs_hz, path);
    return std::move(a.channels);
  };
  s.mixture = get("mixture", true);
  s.speech = get("speech", false);
  s.noise = get("noise", false);
  s.music = get("music", false);
  s.sensor = get("sensor", false);
  const auto M = s.mixture.size();
  if (M != record.spec.array.size()) {
    throw std::runtime_error("scene '" + record.spec.id + "': mixture has " + std::to_string(M) + " channels, array has " +
                             std::to_string(record.spec.array.size()));
  }
  // Components that were not saved are treated as silent.
  for (sim::Multichannel* c : {&s.speech, &s.noise, &s.music, &s.sensor}) {
    if (c->empty()) c->assign(M, std::vector<double>(s.samples(), 0.0));
    if (c->size() != M) throw std::runtime_error("scene '" + record.spec.id + "': component channel count mismatch");
  }
  const sim::Multichannel target = get("target", false);
  if (!target.empty()) s.target = target.front();
  for (auto& h : get("rir", false)) s.speech_rirs.push_back(sim::Rir{std::move(h), fs_hz});
  return s;
}

// Training examples -------------------------------------------------------------

train::Example cospa_example(const SceneData& scene, const stft::FrameSpec& spec) {
  train::Example ex;
  ex.id = scene.spec.id;
  ex.X = stft::analyze_multichannel(scene.mixture, spec);
  if (!scene.target.empty()) {
    ex.target = scene.target;
  } else {
    ex.target = compute_target(scene, analyze(scene, spec), spec);
  }
  return ex;
}

train::Example crunet_example(const SceneData& scene, const stft::FrameSpec& spec) {
  train::Example ex;
  ex.id = scene.spec.id;
  ex.X = stft::analyze(scene.mixture.front(), spec);
  ex.target = scene.speech.front();
  return ex;
}

// Methods -----------------------------------------------------------------------

CTensor passthrough_masks(std::size_t frames, std::size_t mics, std::size_t bins, std::size_t channel) {
  CTensor m({frames * mics, bins});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) m.at(t * mics + channel, f) = 1.0;
  }
  return m;
}

CTensor omvdr_masks(const SceneData& scene, const Spectra& s, const stft::FrameSpec& spec,
                    const bf::CovarianceOptions& cov) {
  const auto steering = bf::steering_vectors(scene.doa_speech, scene.mics(), scene.spec.array.spacing, spec,
                                             scene.spec.room.speed_of_sound);
  return bf::conjugate(bf::mvdr_weight_sequence(s.interference, scene.mics(), steering, cov));
}

CTensor ogmvdr_masks(const SceneData& scene, const Spectra& s, const stft::FrameSpec& spec,
                     const bf::CovarianceOptions& cov) {
  if (scene.speech_rirs.size() != scene.mics()) {
    throw std::invalid_argument("ogmvdr: scene '" + scene.spec.id + "' has no impulse responses");
  }
  const bf::Rtf rtf = bf::rtf_from_rirs(scene.speech_rirs, spec);
  return bf::conjugate(bf::mvdr_weight_sequence(s.interference, scene.mics(), rtf.vectors, cov, &rtf.valid));
}

CTensor crunet_channel_masks(const model::CrunetModel& net, const CTensor& X, std::size_t mics, std::size_t m) {
  const CTensor g = net.infer_mask(model::channel_rows(X, mics, m));
  CTensor masks({X.rows(), X.cols()});
  for (std::size_t t = 0; t < g.rows(); ++t) {
    for (std::size_t f = 0; f < g.cols(); ++f) masks.at(t * mics + m, f) = g.at(t, f);
  }
  return masks;
}

CTensor dnn_mvdr_masks(const model::CrunetModel& net, const SceneData& scene, const Spectra& s,
                       const stft::FrameSpec& spec, const bf::CovarianceOptions& cov) {
  const std::size_t M = scene.mics();
  const CTensor& X = s.mixture;
  CTensor noise_est({X.rows(), X.cols()});
  for (std::size_t m = 0; m < M; ++m) {
    const CTensor g = net.infer_mask(model::channel_rows(X, M, m));
    for (std::size_t t = 0; t < g.rows(); ++t) {
      for (std::size_t f = 0; f < g.cols(); ++f) {
        noise_est.at(t * M + m, f) = (1.0 - g.at(t, f)) * X.at(t * M + m, f);
      }
    }
  }
  const auto steering =
      bf::steering_vectors(scene.doa_speech, M, scene.spec.array.spacing, spec, scene.spec.room.speed_of_sound);
  return bf::conjugate(bf::mvdr_weight_sequence(noise_est, M, steering, cov));
}

eval::SceneMetrics score(const SceneData& scene, const Spectra& s, const CTensor& masks, const stft::FrameSpec& spec,
                         const std::string& method, std::size_t channel) {
  const std::size_t M = scene.mics(), N = scene.samples();
  eval::Components raw{scene.speech[channel], scene.noise[channel], scene.music[channel]};
  eval::Components out{model::shadow_filter(masks, s.speech, M, spec, N), model::shadow_filter(masks, s.noise, M, spec, N),
                       model::shadow_filter(masks, s.music, M, spec, N)};
  eval::SceneMetrics r;
  r.scene_id = scene.spec.id;
  r.method = method;
  r.sinr_in_db = eval::sinr_db(raw.speech, raw.noise, raw.music);
  r.sinr_out_db = eval::sinr_db(out.speech, out.noise, out.music);
  r.delta_sinr_db = r.sinr_out_db - r.sinr_in_db;
  r.sdr_db = eval::sdr_db(raw.speech, out.speech);
  return r;
}

std::vector<eval::SceneMetrics> evaluate_scene(const SceneData& scene, const std::vector<std::string>& methods,
                                               const Models& models, const stft::FrameSpec& spec) {
  const Spectra s = analyze(scene, spec);
  const std::size_t M = scene.mics();
  std::vector<eval::SceneMetrics> out;
  for (const auto& method : methods) {
    if (method == "passthrough") {
      // The identity filter leaves mic 0 untouched; score it without the STFT round trip.
      eval::SceneMetrics r;
      r.scene_id = scene.spec.id;
      r.method = method;
      r.sinr_in_db = r.sinr_out_db = eval::sinr_db(scene.speech[0], scene.noise[0], scene.music[0]);
      r.delta_sinr_db = 0.0;
      r.sdr_db = eval::sdr_db(scene.speech[0], scene.speech[0]);
      out.push_back(r);
    } else if (method == "omvdr") {
      out.push_back(score(scene, s, omvdr_masks(scene, s, spec), spec, method));
    } else if (method == "ogmvdr") {
      out.push_back(score(scene, s, ogmvdr_masks(scene, s, spec), spec, method));
    } else if (method == "cospa") {
      if (!models.cospa) continue;
      if (models.cospa->config().mics != M) {
        throw std::runtime_error("cospa checkpoint expects " + std::to_string(models.cospa->config().mics) +
                                 " channels, scene '" + scene.spec.id + "' has " + std::to_string(M));
      }
      out.push_back(score(scene, s, models.cospa->infer_masks(s.mixture), spec, method));
    } else if (method == "crunet") {
      if (!models.crunet) continue;
      eval::SceneMetrics avg;
      for (std::size_t m = 0; m < M; ++m) {
        const eval::SceneMetrics r = score(scene, s, crunet_channel_masks(*models.crunet, s.mixture, M, m), spec, method, m);
        avg.sinr_in_db += r.sinr_in_db / double(M);
        avg.sinr_out_db += r.sinr_out_db / double(M);
        avg.delta_sinr_db += r.delta_sinr_db / double(M);
        avg.sdr_db += r.sdr_db / double(M);
      }
      avg.scene_id = scene.spec.id;
      avg.method = method;
      out.push_back(avg);
    } else if (method == "dnn-mvdr") {
      if (!models.crunet) continue;
      out.push_back(score(scene, s, dnn_mvdr_masks(*models.crunet, scene, s, spec), spec, method));
    } else {
      throw std::invalid_argument("unknown method '" + method + "'");
    }
  }
  return out;
}

// Streaming enhancement ---------------------------------------------------------

std::vector<double> enhance_stream(const model::Cospa& net, const sim::Multichannel& input) {
  const model::CospaConfig& cfg = net.config();
  if (input.size() != cfg.mics) {
    throw std::invalid_argument("enhance: expected M = " + std::to_string(cfg.mics) + " channels, found M = " +
                                std::to_string(input.size()));
  }
  const std::size_t M = cfg.mics, F = cfg.bins(), N = input.front().size();
  for (const auto& ch : input) {
    if (ch.size() != N) throw std::invalid_argument("enhance: channels differ in length");
  }
  const stft::FrameSpec spec = cfg.frame_spec();
  const std::size_t hop = spec.hop;
  std::vector<std::unique_ptr<stft::StreamingAnalyzer>> analyzers;
  for (std::size_t m = 0; m < M; ++m) analyzers.push_back(std::make_unique<stft::StreamingAnalyzer>(spec));
  stft::OverlapAdd synth(spec);
  Tape tape;
  tape.set_recording(false);
  model::CospaState state;
  std::vector<double> y(N, 0.0);
  std::vector<double> block(hop);
  CTensor frame({M, F});
  // Block b completes frame b; the synthesis emits reconstructed samples
  // [(b + 1) hop - L, (b + 2) hop - L), which land at output index + L.
  const std::size_t blocks = (N + hop - 1) / hop;
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t i = 0; i < hop; ++i) {
        const std::size_t n = b * hop + i;
        block[i] = n < N ? input[m][n] : 0.0;
      }
      const std::vector<cplx> spec_m = analyzers[m]->push(block);
      std::copy(spec_m.begin(), spec_m.end(), frame.data().begin() + long(m * F));
    }
    const model::CospaOutputs o = net.forward(tape, frame, state, false);
    const std::vector<double> s = synth.push(o.output->data());
    const long first = long((b + 1) * hop);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const long n = first + long(i);
      if (n >= 0 && std::size_t(n) < N) y[std::size_t(n)] = s[i];
    }
  }
  return y;
}

}  // namespace cospa::pipeline
