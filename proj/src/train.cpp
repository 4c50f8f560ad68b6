#include "cospa/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cospa/ops.hpp"
#include "cospa/stft.hpp"

namespace cospa::train {

using json = nlohmann::json;

void run(const std::vector<Var>& params, AdamState& adam, const std::vector<Example>& examples, const LossFn& loss,
         const Options& opts, History& history) {
  if (examples.empty()) throw std::invalid_argument("train: no training examples");
  if (opts.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  const std::size_t batch = std::size_t(opts.batch_size);
  std::vector<std::size_t> order(examples.size());
  for (int e = 0; e < opts.epochs; ++e) {
    const int epoch = int(history.epoch_loss.size());
    adam.learning_rate = opts.learning_rate * std::pow(opts.lr_decay, double(epoch));
    std::iota(order.begin(), order.end(), 0);
    if (opts.shuffle) {
      std::mt19937_64 rng(opts.seed * 1000003ull + std::uint64_t(epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double total = 0.0;
    std::size_t pending = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Example& ex = examples[order[k]];
      Tape tape;
      const Var l = loss(tape, ex);
      const double value = l->item().real();
      if (!std::isfinite(value)) throw TrainingDiverged(ex.id, epoch);
      tape.backward(l);
      total += value;
      if (++pending < batch && k + 1 < order.size()) continue;
      if (pending > 1) {
        for (const auto& p : params) {
          for (auto& g : p->grad()) g /= double(pending);
        }
      }
      if (opts.clip_norm > 0.0) clip_grad_norm(params, opts.clip_norm);
      adam_step(params, adam);
      pending = 0;
    }
    const double mean = total / double(examples.size());
    history.epoch_loss.push_back(mean);
    if (opts.on_epoch) opts.on_epoch(epoch, mean);
    if (mean <= opts.target_loss) break;
  }
}

LossFn cospa_loss(const model::Cospa& net) {
  return [&net](Tape& t, const Example& ex) {
    model::CospaState state;
    const model::CospaOutputs out = net.forward(t, ex.X, state, true);
    const Var y = stft::overlap_add(t, out.output, net.config().frame_spec(), ex.target.size());
    return model::snr_loss(t, ex.target, y);
  };
}

LossFn crunet_loss(const model::CrunetModel& net) {
  return [&net](Tape& t, const Example& ex) {
    Var state;
    const Var g = net.forward(t, ex.X, state);
    const Var s = op::mul(t, g, op::constant(ex.X));
    const Var y = stft::overlap_add(t, s, net.config().frame_spec(), ex.target.size());
    return model::snr_loss(t, ex.target, y);
  };
}

Checkpoint with_training_state(Checkpoint ckpt, const ParameterSet& params, const AdamState& adam,
                               const History& history) {
  json h = json::parse(ckpt.header);
  h["train"] = json{{"step_count", adam.step_count},
                    {"learning_rate", adam.learning_rate},
                    {"epoch_loss", history.epoch_loss}};
  ckpt.header = h.dump();
  std::size_t k = 0;
  for (const auto& e : params.entries()) {
    if (e.kind != TensorKind::kParameter) continue;
    if (k < adam.first_moment.size() && adam.first_moment[k].size() == e.value->size()) {
      ckpt.tensors.push_back({"adam.m." + e.name, TensorKind::kOptimizer,
                              make_var(CTensor(e.value->shape(), adam.first_moment[k]))});
      ckpt.tensors.push_back({"adam.v." + e.name, TensorKind::kOptimizer,
                              make_var(CTensor(e.value->shape(), adam.second_moment[k]))});
    }
    ++k;
  }
  return ckpt;
}

void restore_training_state(const Checkpoint& ckpt, const ParameterSet& params, AdamState& adam, History& history) {
  const json h = json::parse(ckpt.header);
  if (!h.contains("train")) return;
  const json& tr = h.at("train");
  adam.step_count = tr.value("step_count", 0L);
  adam.learning_rate = tr.value("learning_rate", adam.learning_rate);
  history.epoch_loss = tr.value("epoch_loss", std::vector<double>{});
  auto find = [&ckpt](const std::string& name) -> const NamedTensor* {
    for (const auto& t : ckpt.tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };
  adam.first_moment.clear();
  adam.second_moment.clear();
  for (const auto& e : params.entries()) {
    if (e.kind != TensorKind::kParameter) continue;
    const NamedTensor* m = find("adam.m." + e.name);
    const NamedTensor* v = find("adam.v." + e.name);
    if (!m || !v) {
      if (adam.step_count > 0) throw std::runtime_error("checkpoint lacks optimizer state for '" + e.name + "'");
      adam.first_moment.emplace_back();
      adam.second_moment.emplace_back();
      continue;
    }
    if (m->value->size() != e.value->size() || v->value->size() != e.value->size()) {
      throw ShapeError("optimizer state for '" + e.name + "' has the wrong size");
    }
    adam.first_moment.emplace_back(m->value->data().begin(), m->value->data().end());
    adam.second_moment.emplace_back(v->value->data().begin(), v->value->data().end());
  }
}

}  // namespace cospa::train
