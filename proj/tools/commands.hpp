#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cospa::cli {

struct SimulateArgs {
  std::string out = "scenes";
  std::size_t count = 50;       // training scenes
  std::size_t test_count = 10;  // test scenes
  std::string rt60 = "0.3:0.7";
  std::string snr = "-7:0";
  std::string smr = "-7:0";
  double duration = 7.0;
  std::size_t mics = 5;
  double spacing = 0.04;
  std::string preset = "default";  // frame spec used for the training targets
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string manifest = "scenes/train/manifest.jsonl";
  std::string model = "cospa";  // cospa | crunet
  std::string preset = "default";
  std::string out = "cospa.ckpt";
  std::string resume;
  int epochs = 10;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;
  int batch_size = 1;
  double clip_norm = 0.0;
  double target_loss = -1e300;
  std::uint64_t seed = 0;
};

struct EnhanceArgs {
  std::string input;
  std::string output = "enhanced.wav";
  std::string checkpoint = "cospa.ckpt";
  std::uint64_t seed = 0;
};

struct EvaluateArgs {
  std::string manifest = "scenes/test/manifest.jsonl";
  std::string cospa_checkpoint;
  std::string crunet_checkpoint;
  std::vector<std::string> methods{"passthrough", "omvdr", "ogmvdr", "cospa", "crunet", "dnn-mvdr"};
  std::string preset = "default";  // frame spec when no checkpoint supplies one
  std::string out = "reports";
  std::uint64_t seed = 0;
};

struct BeampatternArgs {
  std::string manifest = "scenes/test/manifest.jsonl";
  std::string scene;  // scene id; empty selects the first scene
  std::string checkpoint = "cospa.ckpt";
  std::string method = "cospa";  // cospa | omvdr | ogmvdr | uniform
  std::string out = "beampattern.csv";
  double duration = 2.0;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a);
int run_train(const TrainArgs& a);
int run_enhance(const EnhanceArgs& a);
int run_evaluate(const EvaluateArgs& a);
int run_beampattern(const BeampatternArgs& a);

/// "lo:hi" (or a single value) -> {lo, hi}.
std::pair<double, double> parse_range(const std::string& text);

}  // namespace cospa::cli
