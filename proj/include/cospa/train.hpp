#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cospa/ctensor.hpp"
#include "cospa/model.hpp"

namespace cospa::train {

/// One training sequence: frame-major spectra and the time-domain target.
struct Example {
  std::string id;
  CTensor X;                   // [T*M x F] (M = 1 for the CRUnet baseline)
  std::vector<double> target;  // num_samples samples
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& scene, int epoch)
      : std::runtime_error("non-finite loss on scene '" + scene + "' in epoch " + std::to_string(epoch)),
        scene_id(scene) {}
  std::string scene_id;
};

struct Options {
  int epochs = 10;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;              // per-epoch factor: epoch e uses learning_rate * lr_decay^e
  int batch_size = 1;                 // examples whose gradients are averaged per Adam step
  double clip_norm = 0.0;             // 0 disables gradient clipping
  double target_loss = -1e300;        // stop once the epoch mean falls to this value
  bool shuffle = true;
  std::uint64_t seed = 0;
  std::function<void(int epoch, double loss)> on_epoch;  // optional progress hook
};

struct History {
  std::vector<double> epoch_loss;  // mean scene loss per epoch, all epochs so far
};

/// Sequence-level loss of one example; recurrent state starts from zero.
using LossFn = std::function<Var(Tape&, const Example&)>;

/// Runs epochs over `examples` (order shuffled per epoch with a generator
/// seeded from (seed, epoch)), one Adam step per batch_size examples. Epoch indices
/// continue from history.epoch_loss.size().
void run(const std::vector<Var>& params, AdamState& adam, const std::vector<Example>& examples, const LossFn& loss,
         const Options& opts, History& history);

/// COSPA loss: filter-and-sum output, overlap-add, SNR loss against the target.
LossFn cospa_loss(const model::Cospa& net);
/// CRUnet loss: masked single-channel spectrum, overlap-add, SNR loss.
LossFn crunet_loss(const model::CrunetModel& net);

/// Training checkpoint: model tensors plus Adam moments and the loss history.
Checkpoint with_training_state(Checkpoint ckpt, const ParameterSet& params, const AdamState& adam,
                               const History& history);
/// Restores Adam moments and history written by with_training_state; leaves
/// them untouched when the checkpoint has none.
void restore_training_state(const Checkpoint& ckpt, const ParameterSet& params, AdamState& adam, History& history);

}  // namespace cospa::train
