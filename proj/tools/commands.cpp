#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cospa/eval.hpp"
#include "cospa/model.hpp"
#include "cospa/pipeline.hpp"
#include "cospa/train.hpp"
#include "cospa/wav.hpp"

namespace cospa::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ull + split * 0xbf58476d1ce4e5b9ull + index + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

model::CospaConfig preset(const std::string& name) {
  if (name == "default") return {};
  if (name == "reduced") return model::CospaConfig::reduced();
  throw std::invalid_argument("unknown preset '" + name + "' (expected default or reduced)");
}

std::string parent_dir(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  return p.empty() ? std::string(".") : p.string();
}

std::vector<pipeline::SceneData> load_all(const std::string& manifest) {
  const auto records = pipeline::read_manifest(manifest);
  if (records.empty()) throw std::runtime_error("no scenes in " + manifest);
  std::vector<pipeline::SceneData> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(pipeline::load_scene(r, parent_dir(manifest)));
  return out;
}

}  // namespace

std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const double v = std::stod(text);
      return {v, v};
    }
    const double lo = std::stod(text.substr(0, colon));
    const double hi = std::stod(text.substr(colon + 1));
    if (lo > hi) throw std::invalid_argument("empty");
    return {lo, hi};
  } catch (const std::exception&) {
    throw std::invalid_argument("bad range '" + text + "' (expected lo:hi)");
  }
}

int run_simulate(const SimulateArgs& a) {
  sim::SceneRanges ranges;
  const auto [rl, rh] = parse_range(a.rt60);
  const auto [nl, nh] = parse_range(a.snr);
  const auto [ml, mh] = parse_range(a.smr);
  ranges.rt60 = {rl, rh};
  ranges.snr_db = {nl, nh};
  ranges.smr_db = {ml, mh};
  ranges.duration = a.duration;
  ranges.mics = a.mics;
  ranges.spacing = a.spacing;
  model::CospaConfig cfg = preset(a.preset);
  const stft::FrameSpec spec = cfg.frame_spec();

  const std::pair<std::string, std::size_t> splits[] = {{"train", a.count}, {"test", a.test_count}};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& [name, count] = splits[k];
    if (count == 0) continue;
    const std::string dir = (fs::path(a.out) / name).string();
    fs::create_directories(dir);
    std::vector<pipeline::SceneRecord> records;
    for (std::size_t i = 0; i < count; ++i) {
      sim::SceneSpec s = sim::sample_scene(mix_seed(a.seed, k, i), ranges);
      std::ostringstream id;
      id << name << '_' << std::setw(4) << std::setfill('0') << i;
      s.id = id.str();
      pipeline::SceneData scene = pipeline::simulate(s);
      scene.target = pipeline::compute_target(scene, pipeline::analyze(scene, spec), spec);
      records.push_back(pipeline::save_scene(dir, scene));
      std::cerr << "simulated " << s.id << " (rt60 " << s.room.rt60 << " s, snr " << s.snr_db << " dB)\n";
    }
    pipeline::write_manifest((fs::path(dir) / "manifest.jsonl").string(), records);
  }
  return 0;
}

int run_train(const TrainArgs& a) {
  const auto scenes = load_all(a.manifest);
  std::optional<Checkpoint> resume;
  model::CospaConfig cfg = preset(a.preset);
  cfg.mics = scenes.front().mics();
  cfg.seed = a.seed;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    if (model::checkpoint_model_kind(*resume) != a.model) {
      throw std::runtime_error("checkpoint " + a.resume + " holds a " + model::checkpoint_model_kind(*resume) +
                               " model, not " + a.model);
    }
  }

  train::Options opts;
  opts.epochs = a.epochs;
  opts.learning_rate = a.learning_rate;
  opts.lr_decay = a.lr_decay;
  opts.batch_size = a.batch_size;
  opts.clip_norm = a.clip_norm;
  opts.target_loss = a.target_loss;
  opts.seed = a.seed;
  opts.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << loss << " dB\n"; };

  AdamState adam;
  train::History history;
  Checkpoint ckpt;
  auto go = [&](auto& net, auto make_example, train::LossFn loss) {
    if (resume) train::restore_training_state(*resume, net.params(), adam, history);
    const stft::FrameSpec spec = net.config().frame_spec();
    std::vector<train::Example> examples;
    for (const auto& s : scenes) {
      if (s.mics() != net.config().mics) {
        throw std::runtime_error("scene '" + s.spec.id + "' has " + std::to_string(s.mics()) + " channels, model expects " +
                                 std::to_string(net.config().mics));
      }
      examples.push_back(make_example(s, spec));
    }
    if (opts.epochs > 0) train::run(net.params().trainable(), adam, examples, loss, opts, history);
    ckpt = train::with_training_state(net.to_checkpoint(json{{"manifest", a.manifest}}.dump()), net.params(), adam,
                                      history);
  };
  try {
    if (a.model == "cospa") {
      model::Cospa net = resume ? model::Cospa::from_checkpoint(*resume) : model::Cospa(cfg);
      go(net, pipeline::cospa_example, train::cospa_loss(net));
    } else if (a.model == "crunet") {
      model::CrunetModel net = resume ? model::CrunetModel::from_checkpoint(*resume) : model::CrunetModel(cfg);
      go(net, pipeline::crunet_example, train::crunet_loss(net));
    } else {
      throw std::invalid_argument("unknown model '" + a.model + "' (expected cospa or crunet)");
    }
  } catch (const train::TrainingDiverged& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return 3;
  }

  if (const fs::path dir = fs::path(a.out).parent_path(); !dir.empty()) fs::create_directories(dir);
  save_checkpoint(a.out, ckpt);
  std::ofstream csv(a.out + ".loss.csv");
  csv << "epoch,loss_db\n";
  csv.precision(10);
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) csv << e << ',' << history.epoch_loss[e] << '\n';
  std::cerr << "wrote " << a.out << "\n";
  return 0;
}

int run_enhance(const EnhanceArgs& a) {
  if (a.input.empty()) throw std::invalid_argument("enhance: --input is required");
  const model::Cospa net = model::Cospa::from_checkpoint(load_checkpoint(a.checkpoint));
  const wav::Audio in = wav::read(a.input);
  if (in.sample_rate != net.config().sample_rate) {
    throw std::runtime_error(a.input + ": sample rate " + std::to_string(std::lround(in.sample_rate)) + " Hz is not supported, expected " +
                             std::to_string(std::lround(net.config().sample_rate)) + " Hz");
  }
  if (in.num_channels() != net.config().mics) {
    throw std::runtime_error(a.input + ": expected M = " + std::to_string(net.config().mics) + " channels, found M = " +
                             std::to_string(in.num_channels()));
  }
  const std::vector<double> y = pipeline::enhance_stream(net, in.channels);
  wav::write_mono(a.output, y, in.sample_rate);
  return 0;
}

int run_evaluate(const EvaluateArgs& a) {
  const auto records = pipeline::read_manifest(a.manifest);
  if (records.empty()) throw std::runtime_error("evaluate: no scenes in " + a.manifest);
  std::unique_ptr<model::Cospa> cospa;
  std::unique_ptr<model::CrunetModel> crunet;
  if (!a.cospa_checkpoint.empty()) {
    cospa = std::make_unique<model::Cospa>(model::Cospa::from_checkpoint(load_checkpoint(a.cospa_checkpoint)));
  }
  if (!a.crunet_checkpoint.empty()) {
    crunet =
        std::make_unique<model::CrunetModel>(model::CrunetModel::from_checkpoint(load_checkpoint(a.crunet_checkpoint)));
  }
  for (const auto& m : a.methods) {
    if (m == "cospa" && !cospa) std::cerr << "warning: no cospa checkpoint given, skipping cospa\n";
    if ((m == "crunet" || m == "dnn-mvdr") && !crunet) {
      std::cerr << "warning: no crunet checkpoint given, skipping " << m << "\n";
    }
  }
  const stft::FrameSpec spec =
      cospa ? cospa->config().frame_spec() : crunet ? crunet->config().frame_spec() : preset(a.preset).frame_spec();
  if (cospa && crunet && cospa->config().frame_spec().frame_len != crunet->config().frame_spec().frame_len) {
    throw std::runtime_error("evaluate: cospa and crunet checkpoints use different frame lengths");
  }

  fs::create_directories(a.out);
  std::ofstream jsonl(fs::path(a.out) / "metrics.jsonl");
  std::vector<eval::SceneMetrics> all;
  for (const auto& r : records) {
    const pipeline::SceneData scene = pipeline::load_scene(r, parent_dir(a.manifest));
    for (const auto& m : pipeline::evaluate_scene(scene, a.methods, {cospa.get(), crunet.get()}, spec)) {
      jsonl << eval::to_jsonl(m) << '\n';
      all.push_back(m);
    }
    std::cerr << "evaluated " << r.spec.id << "\n";
  }
  std::ofstream csv(fs::path(a.out) / "summary.csv");
  const auto summary = eval::summarize(all);
  eval::write_summary_csv(csv, summary);
  eval::write_summary_csv(std::cout, summary);
  return 0;
}

int run_beampattern(const BeampatternArgs& a) {
  const auto records = pipeline::read_manifest(a.manifest);
  if (records.empty()) throw std::runtime_error("beampattern: no scenes in " + a.manifest);
  const pipeline::SceneRecord* rec = &records.front();
  if (!a.scene.empty()) {
    rec = nullptr;
    for (const auto& r : records) {
      if (r.spec.id == a.scene) rec = &r;
    }
    if (!rec) throw std::runtime_error("beampattern: scene '" + a.scene + "' not in " + a.manifest);
  }
  const pipeline::SceneData scene = pipeline::load_scene(*rec, parent_dir(a.manifest));
  std::unique_ptr<model::Cospa> net;
  stft::FrameSpec spec = model::CospaConfig{}.frame_spec();
  if (a.method == "cospa") {
    net = std::make_unique<model::Cospa>(model::Cospa::from_checkpoint(load_checkpoint(a.checkpoint)));
    spec = net->config().frame_spec();
  }
  const std::size_t M = scene.mics();
  const pipeline::Spectra s = pipeline::analyze(scene, spec);
  CTensor masks;
  if (a.method == "cospa") {
    masks = net->infer_masks(s.mixture);
  } else if (a.method == "omvdr") {
    masks = pipeline::omvdr_masks(scene, s, spec);
  } else if (a.method == "ogmvdr") {
    masks = pipeline::ogmvdr_masks(scene, s, spec);
  } else if (a.method == "uniform") {
    masks = CTensor({s.mixture.rows(), s.mixture.cols()});
    for (auto& v : masks.data()) v = 1.0 / double(M);
  } else {
    throw std::invalid_argument("beampattern: unknown method '" + a.method + "'");
  }
  eval::BeampatternOptions opts;
  opts.duration = a.duration;
  opts.spacing = scene.spec.array.spacing;
  opts.speed_of_sound = scene.spec.room.speed_of_sound;
  const eval::Beampattern bp = eval::beampattern(masks, M, spec, opts);
  const json meta{{"scene", scene.spec.id},         {"method", a.method},
                  {"doa_speech", scene.doa_speech}, {"doa_music", scene.doa_music},
                  {"doa_noise", scene.doa_noise},   {"angles_deg", bp.angles_deg},
                  {"bins", bp.bins}};
  std::ofstream os(a.out);
  if (!os) throw std::runtime_error("cannot write " + a.out);
  eval::write_beampattern_csv(os, bp, meta.dump());
  return 0;
}

}  // namespace cospa::cli
