#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace cospa::cli;

namespace {

void snapshot(const CLI::App& app, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << app.config_to_str(true, false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"COSPA multichannel speech enhancement"};
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI file; [simulate], [train], ... sections hold subcommand options");
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Global random seed")->capture_default_str();
  app.fallthrough();
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Sample and render train/test scenes");
  s->add_option("--out", sim.out, "Output directory")->capture_default_str();
  s->add_option("--count", sim.count, "Training scenes")->capture_default_str();
  s->add_option("--test-count", sim.test_count, "Test scenes")->capture_default_str();
  s->add_option("--rt60", sim.rt60, "RT60 range lo:hi in seconds")->capture_default_str();
  s->add_option("--snr", sim.snr, "Speech-to-noise range lo:hi in dB")->capture_default_str();
  s->add_option("--smr", sim.smr, "Speech-to-music range lo:hi in dB")->capture_default_str();
  s->add_option("--duration", sim.duration, "Scene length in seconds")->capture_default_str();
  s->add_option("--mics", sim.mics, "Microphones")->capture_default_str();
  s->add_option("--spacing", sim.spacing, "Microphone spacing in meters")->capture_default_str();
  s->add_option("--preset", sim.preset, "Frame spec for targets: default|reduced")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train COSPA or the CRUnet baseline");
  t->add_option("--manifest", tr.manifest, "Training manifest")->capture_default_str();
  t->add_option("--model", tr.model, "cospa|crunet")->capture_default_str();
  t->add_option("--preset", tr.preset, "default|reduced")->capture_default_str();
  t->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  t->add_option("--lr", tr.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--lr-decay", tr.lr_decay, "Per-epoch learning rate factor")->capture_default_str();
  t->add_option("--batch", tr.batch_size, "Scenes per Adam step")->capture_default_str();
  t->add_option("--clip", tr.clip_norm, "Gradient norm clip, 0 disables")->capture_default_str();
  t->add_option("--target-loss", tr.target_loss, "Stop once the epoch loss reaches this value (dB)");

  EnhanceArgs en;
  auto* e = app.add_subcommand("enhance", "Enhance a multichannel WAV frame by frame");
  e->add_option("--input", en.input, "Multichannel 16 kHz WAV")->required();
  e->add_option("--output", en.output, "Mono output WAV")->capture_default_str();
  e->add_option("--checkpoint", en.checkpoint, "COSPA checkpoint")->capture_default_str();

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score methods on test scenes");
  v->add_option("--manifest", ev.manifest, "Test manifest")->capture_default_str();
  v->add_option("--cospa", ev.cospa_checkpoint, "COSPA checkpoint");
  v->add_option("--crunet", ev.crunet_checkpoint, "CRUnet checkpoint");
  v->add_option("--methods", ev.methods, "Methods to score")->delimiter(',')->capture_default_str();
  v->add_option("--preset", ev.preset, "Frame spec when no checkpoint is given")->capture_default_str();
  v->add_option("--out", ev.out, "Report directory")->capture_default_str();

  BeampatternArgs bp;
  auto* b = app.add_subcommand("beampattern", "Export a beampattern matrix as CSV");
  b->add_option("--manifest", bp.manifest, "Scene manifest")->capture_default_str();
  b->add_option("--scene", bp.scene, "Scene id (default: first)");
  b->add_option("--checkpoint", bp.checkpoint, "COSPA checkpoint")->capture_default_str();
  b->add_option("--method", bp.method, "cospa|omvdr|ogmvdr|uniform")->capture_default_str();
  b->add_option("--out", bp.out, "CSV path")->capture_default_str();
  b->add_option("--duration", bp.duration, "Probe length in seconds")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) {
      sim.seed = seed;
      snapshot(app, fs::path(sim.out) / "simulate.resolved.ini");
      return run_simulate(sim);
    }
    if (t->parsed()) {
      tr.seed = seed;
      snapshot(app, tr.out + ".resolved.ini");
      return run_train(tr);
    }
    if (e->parsed()) {
      en.seed = seed;
      snapshot(app, en.output + ".resolved.ini");
      return run_enhance(en);
    }
    if (v->parsed()) {
      ev.seed = seed;
      snapshot(app, fs::path(ev.out) / "evaluate.resolved.ini");
      return run_evaluate(ev);
    }
    if (b->parsed()) {
      bp.seed = seed;
      snapshot(app, bp.out + ".resolved.ini");
      return run_beampattern(bp);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
