// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Arguments, if given, restrict the run to criteria whose name contains one of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cospa/beamforming.hpp"
#include "cospa/clayers.hpp"
#include "cospa/eval.hpp"
#include "cospa/model.hpp"
#include "cospa/ops.hpp"
#include "cospa/pipeline.hpp"
#include "cospa/scene.hpp"
#include "cospa/stft.hpp"
#include "cospa/train.hpp"
#include "test_util.hpp"

using namespace cospa;

namespace {

// Thresholds.
constexpr double kLayerGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr double kGradRuntimeSec = 120.0;
constexpr double kRoundTripTol = 1e-10;
constexpr std::size_t kMaskDraws = 100000;
constexpr double kPhaseTol = 1e-9;
constexpr std::size_t kMvdrDraws = 10000;
constexpr double kDistortionlessTol = 1e-10;
constexpr double kNullDb = -30.0;
constexpr double kTargetFormsTol = 1e-6;
constexpr double kRt60RelTol = 0.2;
constexpr double kOverfitLossDb = -5.0;
constexpr int kOverfitMaxEpochs = 500;
constexpr double kArrayFactorTolDb = 0.5;
constexpr double kDoaTolDeg = 10.0;
constexpr std::size_t kParamsLo = 2200000, kParamsHi = 3200000;

// Desk-scale corpus and training settings.
constexpr std::size_t kOverfitScenes = 10;
constexpr double kOverfitDuration = 1.0;
constexpr double kOverfitLr = 1e-2;
constexpr double kLrDecay = 0.99;
constexpr std::size_t kTrainScenes = 40;
constexpr double kTrainDuration = 2.0;
constexpr int kTrainEpochs = 15;
constexpr double kTrainLr = 1e-3;
constexpr std::size_t kTestScenes = 10;
constexpr double kTestDuration = 3.0;
constexpr double kBeamDuration = 2.0;
constexpr int kBeamMaxEpochs = 300;
constexpr double kBeamLr = 1e-2;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

using testutil::random_tensor;

Var probe(Tape& t, const Var& y) { return testutil::probe_loss(t, y); }

pipeline::SceneData make_scene(std::uint64_t seed, double duration, const stft::FrameSpec& spec,
                               const std::string& id) {
  sim::SceneRanges r;
  r.duration = duration;
  sim::SceneSpec s = sim::sample_scene(seed, r);
  s.id = id;
  pipeline::SceneData scene = pipeline::simulate(s);
  scene.target = pipeline::compute_target(scene, pipeline::analyze(scene, spec), spec);
  return scene;
}

std::vector<pipeline::SceneData> make_corpus(std::uint64_t base, std::size_t count, double duration,
                                             const stft::FrameSpec& spec, const std::string& prefix) {
  std::vector<pipeline::SceneData> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(make_scene(base + i, duration, spec, prefix + std::to_string(i)));
  }
  return out;
}

std::vector<train::Example> examples_of(const std::vector<pipeline::SceneData>& scenes, const stft::FrameSpec& spec) {
  std::vector<train::Example> ex;
  for (const auto& s : scenes) ex.push_back(pipeline::cospa_example(s, spec));
  return ex;
}

// Criteria ------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  double worst_layer = 0.0;
  auto layer = [&](const std::function<Var(Tape&)>& f, const std::vector<Var>& ps) {
    worst_layer = std::max(worst_layer, finite_diff_check(f, ps, 1e-6));
  };
  {
    layers::Linear lin(6, 5, rng);
    Var x = make_var(random_tensor({4, 6}, rng), true);
    layer([&](Tape& t) { return probe(t, lin.forward(t, x)); }, {x, lin.weight, lin.bias});
  }
  {
    layers::Conv1d conv(2, 3, 5, 2, 2, rng);
    Var x = make_var(random_tensor({2, 8, 2}, rng), true);
    layer([&](Tape& t) { return probe(t, conv.forward(t, x)); }, {x, conv.weight, conv.bias});
    layers::ConvTranspose1d up(3, 2, 5, 2, 2, rng);
    Var z = make_var(random_tensor({2, 4, 3}, rng), true);
    layer([&](Tape& t) { return probe(t, up.forward(t, z, 8)); }, {z, up.weight, up.bias});
  }
  {
    layers::Gru gru(4, 3, rng);
    Var x = make_var(random_tensor({6, 4}, rng), true);
    Var h0 = make_var(random_tensor({2, 3}, rng), true);
    layer([&](Tape& t) {
      Var h = h0;
      return probe(t, gru.forward_sequence(t, x, 2, h));
    }, {x, h0, gru.w_ih, gru.b_ih, gru.w_hh, gru.b_hh});
  }
  {
    layers::BatchNorm bn(4);
    Var x = make_var(random_tensor({8, 4}, rng), true);
    layer([&](Tape& t) { return probe(t, bn.forward(t, x, true)); }, {x, bn.gamma, bn.beta});
    layer([&](Tape& t) { return probe(t, bn.forward(t, x, false)); }, {x, bn.gamma, bn.beta});
  }
  {
    Var x = make_var(random_tensor({8, 8}, rng), true);
    layer([&](Tape& t) { return probe(t, layers::cleaky_relu(t, x, 0.2)); }, {x});
    layer([&](Tape& t) { return probe(t, op::bounded_mask(t, x)); }, {x});
  }
  {
    model::CrunetModel net(model::CospaConfig::reduced());
    const CTensor x = random_tensor({3, 9}, rng, 0.5);
    layer([&](Tape& t) {
      Var st;
      return probe(t, net.forward(t, x, st));
    }, net.params().trainable());
  }

  // End to end: filter-and-sum output, overlap-add and SNR loss of the reduced model.
  const model::CospaConfig cfg = model::CospaConfig::reduced();
  model::Cospa net(cfg);
  const CTensor X = random_tensor({4 * cfg.mics, cfg.bins()}, rng, 0.5);
  const std::size_t N = 24;
  std::vector<double> target(N);
  std::normal_distribution<double> nd;
  for (auto& v : target) v = nd(rng);
  const auto spec = cfg.frame_spec();
  auto loss = [&](bool training) {
    return [&, training](Tape& t) {
      model::CospaState st;
      const auto out = net.forward(t, X, st, training);
      return model::snr_loss(t, target, stft::overlap_add(t, out.output, spec, N));
    };
  };
  // Inference statistics reach every parameter.
  const double e2e_inference = finite_diff_check(loss(false), net.params().trainable(), 1e-6);
  // With batch statistics the biases ahead of a batch norm cancel exactly; their
  // tape gradient must vanish and the rest is checked as usual.
  std::vector<Var> checked;
  double cancelled = 0.0;
  {
    for (const auto& p : net.params().trainable()) p->clear_grad();
    Tape t;
    t.backward(loss(true)(t));
    for (const auto& e : net.params().entries()) {
      if (e.kind != TensorKind::kParameter) continue;
      if (e.name == "decoder.fc1.bias" || e.name == "decoder.fc2.bias") {
        for (const auto& g : e.value->grad()) cancelled = std::max(cancelled, std::abs(g));
      } else {
        checked.push_back(e.value);
      }
    }
  }
  const double e2e_training = finite_diff_check(loss(true), checked, 1e-6);
  const double e2e = std::max(e2e_inference, e2e_training);
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "layers " << worst_layer << " (< " << kLayerGradTol << "), end-to-end " << e2e << " (< " << kModelGradTol
    << "), cancelled-bias gradient " << cancelled << ", " << fmt("%.1f", secs) << " s";
  return {worst_layer < kLayerGradTol && e2e < kModelGradTol && cancelled < 1e-9 && secs < kGradRuntimeSec, d.str()};
}

Outcome stft_round_trip() {
  const auto spec = stft::FrameSpec::sqrt_hann();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::vector<double> x(16000);
    for (auto& v : x) v = n(rng);
    const auto y = stft::istft(stft::analyze(x, spec), spec, x.size());
    double err = 0.0, ref = 0.0;
    for (std::size_t i = spec.frame_len; i + spec.frame_len < x.size(); ++i) {
      err += (x[i] - y[i]) * (x[i] - y[i]);
      ref += x[i] * x[i];
    }
    worst = std::max(worst, std::sqrt(err / ref));
  }
  return {worst < kRoundTripTol, "max relative error " + fmt("%.3g", worst)};
}

Outcome mask_certificates() {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  CTensor o({kMaskDraws});
  // Magnitudes spread over many decades, uniform phase.
  for (auto& v : o.data()) v = std::polar(std::exp(4.0 * n(rng)), phase(rng));
  Tape t;
  t.set_recording(false);
  const Var m = op::bounded_mask(t, op::constant(o));
  double max_mag = 0.0, max_phase = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    max_mag = std::max(max_mag, std::abs((*m)[i]));
    if (std::abs(o[i]) >= 1e-12) max_phase = std::max(max_phase, std::abs(std::arg((*m)[i] / o[i])));
  }
  return {max_mag <= 1.0 && max_phase < kPhaseTol,
          "max |M| " + fmt("%.17g", max_mag) + ", max phase error " + fmt("%.3g", max_phase)};
}

Outcome mvdr_correctness() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (std::size_t k = 0; k < kMvdrDraws; ++k) {
    const auto M = Eigen::Index(2 + k % 7);
    bf::CMat A(M, M);
    bf::CVec a(M);
    for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = {n(rng), n(rng)};
    for (Eigen::Index i = 0; i < M; ++i) a(i) = {n(rng), n(rng)};
    const bf::CMat R = A * A.adjoint() + 1e-3 * bf::CMat::Identity(M, M);
    worst = std::max(worst, std::abs(bf::mvdr_weights(R, a).dot(a) - 1.0));
  }
  double ds = 0.0;
  for (double f : {250.0, 1000.0, 4000.0}) {
    const bf::CVec a = bf::freefield_steering(35.0, 5, 0.04, f);
    ds = std::max(ds, (bf::mvdr_weights(bf::CMat::Identity(5, 5), a, 0.0) - a / 5.0).cwiseAbs().maxCoeff());
  }
  const bf::CVec a = bf::freefield_steering(90.0, 2, 0.08, 1000.0);
  const bf::CVec v = bf::freefield_steering(30.0, 2, 0.08, 1000.0);
  const bf::CMat R = 100.0 * v * v.adjoint() + 1e-4 * bf::CMat::Identity(2, 2);
  const double null_db = 20.0 * std::log10(std::abs(bf::mvdr_weights(R, a, 0.0).dot(v)));
  std::ostringstream d;
  d << "max |w^H a - 1| " << worst << ", delay-and-sum deviation " << ds << ", null " << fmt("%.1f", null_db) << " dB";
  return {worst < kDistortionlessTol && ds == 0.0 && null_db <= kNullDb, d.str()};
}

Outcome target_forms(const std::vector<const pipeline::SceneData*>& scenes, const stft::FrameSpec& spec) {
  double worst = 0.0;
  for (const auto* scene : scenes) {
    const auto sp = pipeline::analyze(*scene, spec);
    const auto steer = bf::steering_vectors(scene->doa_speech, scene->mics(), scene->spec.array.spacing, spec);
    const bf::Target t = bf::make_target(sp.speech, sp.interference, sp.mixture, scene->mics(), steer);
    for (std::size_t i = 0; i < t.spectrum.size(); ++i) worst = std::max(worst, std::abs(t.spectrum[i] - t.spectrum_crm[i]));
  }
  return {worst < kTargetFormsTol,
          "max abs difference " + fmt("%.3g", worst) + " over " + std::to_string(scenes.size()) + " scenes"};
}

Outcome rir_validity() {
  std::ostringstream d;
  bool ok = true;
  for (double rt : {0.3, 0.5, 0.7}) {
    const sim::RoomSpec room{{5.0, 4.0, 3.0}, rt, 343.0};
    const sim::Vec3 src{1.2, 1.1, 1.4}, mic{3.6, 2.7, 1.5};
    const sim::Rir h = sim::image_source_rir(room, src, mic);
    const double measured = sim::measure_rt60(h);
    const double rel = std::abs(measured - rt) / rt;
    ok = ok && rel <= kRt60RelTol;
    const double dx = src[0] - mic[0], dy = src[1] - mic[1], dz = src[2] - mic[2];
    const double tau = std::sqrt(dx * dx + dy * dy + dz * dz) / 343.0 * 16000.0;
    std::size_t peak = 0;
    for (std::size_t i = 0; i < std::size_t(tau) + 8; ++i) {
      if (std::abs(h.taps[i]) > std::abs(h.taps[peak])) peak = i;
    }
    const double delay_err = std::abs(double(peak) - tau);
    ok = ok && delay_err <= 1.0;
    d << "T60 " << rt << " -> " << fmt("%.3f", measured) << " s, direct-path error " << fmt("%.2f", delay_err)
      << " samples; ";
  }
  return {ok, d.str()};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  model::CospaConfig cfg;
  cfg.seed = 1;
  const auto spec = cfg.frame_spec();
  const auto ex = examples_of(make_corpus(1000, kOverfitScenes, kOverfitDuration, spec, "overfit_"), spec);
  train::Options o;
  o.epochs = kOverfitMaxEpochs;
  o.learning_rate = kOverfitLr;
  o.lr_decay = kLrDecay;
  o.target_loss = kOverfitLossDb;
  o.seed = 5;
  o.on_epoch = [](int e, double l) {
    if (e % 25 == 0) std::fprintf(stderr, "  overfit epoch %d loss %.2f dB\n", e, l);
  };
  model::Cospa net(cfg);
  AdamState adam;
  train::History h;
  train::run(net.params().trainable(), adam, ex, train::cospa_loss(net), o, h);
  const double final_loss = h.epoch_loss.back();

  // Rerun the first epochs from scratch; the losses must repeat bitwise.
  model::Cospa again(cfg);
  AdamState adam2;
  train::History h2;
  train::Options o2 = o;
  o2.epochs = 3;
  o2.on_epoch = nullptr;
  train::run(again.params().trainable(), adam2, ex, train::cospa_loss(again), o2, h2);
  const bool deterministic = std::equal(h2.epoch_loss.begin(), h2.epoch_loss.end(), h.epoch_loss.begin());

  // Trend: every 10-epoch moving average stays at or below the first epoch.
  bool trend = true;
  for (std::size_t e = 10; e <= h.epoch_loss.size(); ++e) {
    double avg = 0.0;
    for (std::size_t k = e - 10; k < e; ++k) avg += h.epoch_loss[k] / 10.0;
    trend = trend && avg <= h.epoch_loss.front();
  }
  std::ostringstream d;
  d << "loss " << fmt("%.2f", final_loss) << " dB after " << h.epoch_loss.size() << " epochs (first "
    << fmt("%.2f", h.epoch_loss.front()) << " dB), deterministic " << (deterministic ? "yes" : "no") << ", trend "
    << (trend ? "ok" : "violated") << ", " << fmt("%.0f", seconds_since(t0)) << " s";
  return {final_loss <= kOverfitLossDb && deterministic && trend, d.str()};
}

Outcome evaluation_ordering(const std::vector<pipeline::SceneData>& test, const stft::FrameSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  model::CospaConfig cfg;
  cfg.seed = 2;
  const auto ex = examples_of(make_corpus(2000, kTrainScenes, kTrainDuration, spec, "train_"), spec);
  model::Cospa net(cfg);
  AdamState adam;
  train::History h;
  train::Options o;
  o.epochs = kTrainEpochs;
  o.learning_rate = kTrainLr;
  o.seed = 6;
  o.on_epoch = [](int e, double l) { std::fprintf(stderr, "  train epoch %d loss %.2f dB\n", e, l); };
  train::run(net.params().trainable(), adam, ex, train::cospa_loss(net), o, h);

  pipeline::Models models;
  models.cospa = &net;
  std::vector<eval::SceneMetrics> all;
  for (const auto& s : test) {
    const auto r = pipeline::evaluate_scene(s, {"omvdr", "ogmvdr", "cospa"}, models, spec);
    all.insert(all.end(), r.begin(), r.end());
  }
  double omvdr = 0, ogmvdr = 0, cospa_ds = 0;
  for (const auto& s : eval::summarize(all)) {
    if (s.method == "omvdr") omvdr = s.delta_sinr_mean;
    if (s.method == "ogmvdr") ogmvdr = s.delta_sinr_mean;
    if (s.method == "cospa") cospa_ds = s.delta_sinr_mean;
  }
  std::ostringstream d;
  d << "dSINR omvdr " << fmt("%.2f", omvdr) << " dB, ogmvdr " << fmt("%.2f", ogmvdr) << " dB, cospa "
    << fmt("%.2f", cospa_ds) << " dB (train loss " << fmt("%.2f", h.epoch_loss.back()) << " dB, "
    << fmt("%.0f", seconds_since(t0)) << " s)";
  return {ogmvdr >= omvdr && cospa_ds > 0.0, d.str()};
}

Outcome beampattern_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = stft::FrameSpec::sqrt_hann();
  const std::size_t M = 5;
  eval::BeampatternOptions bo;
  CTensor uniform({M, spec.bins()});
  for (auto& v : uniform.data()) v = 1.0 / double(M);
  const auto bp = eval::beampattern(uniform, M, spec, bo);
  double worst = 0.0;
  for (std::size_t a = 0; a < bp.angles_deg.size(); ++a) {
    const double c = std::cos(bp.angles_deg[a] * std::numbers::pi / 180.0);
    for (std::size_t f = 0; f < bp.bins; ++f) {
      const double psi = 2.0 * std::numbers::pi * spec.bin_frequency(f) * bo.spacing * c / bo.speed_of_sound;
      const double den = double(M) * std::sin(psi / 2.0);
      const double r = std::abs(den) < 1e-12 ? 1.0 : std::sin(double(M) * psi / 2.0) / den;
      const double ref = std::max(10.0 * std::log10(r * r), -120.0);
      worst = std::max(worst, std::abs(std::max(bp.at(a, f), -120.0) - ref));
    }
  }

  // Overfit one scene and read the direction of its spatial filter.
  model::CospaConfig cfg;
  cfg.seed = 3;
  const auto scene = make_scene(3000, kBeamDuration, spec, "beam");
  model::Cospa net(cfg);
  AdamState adam;
  train::History h;
  train::Options o;
  o.epochs = kBeamMaxEpochs;
  o.learning_rate = kBeamLr;
  o.lr_decay = kLrDecay;
  o.target_loss = kOverfitLossDb;
  train::run(net.params().trainable(), adam, {pipeline::cospa_example(scene, spec)}, train::cospa_loss(net), o, h);
  const CTensor masks = net.infer_masks(stft::analyze_multichannel(scene.mixture, spec));
  const auto prof = eval::angular_profile(eval::beampattern(masks, M, spec, bo), spec, 500.0, 4000.0);
  auto peak_of = [&](const std::vector<double>& p) {
    return bo.start_deg + bo.step_deg * double(std::max_element(p.begin(), p.end()) - p.begin());
  };
  const double peak = peak_of(prof);
  const double err = std::abs(peak - scene.doa_speech);
  // Reference: the oracle MVDR filter the model is trained to reproduce.
  const auto sp = pipeline::analyze(scene, spec);
  const double target_peak =
      peak_of(eval::angular_profile(eval::beampattern(pipeline::omvdr_masks(scene, sp, spec), M, spec, bo), spec, 500.0,
                                    4000.0));
  std::ostringstream d;
  d << "uniform vs array factor " << fmt("%.3g", worst) << " dB; overfit scene (loss " << fmt("%.2f", h.epoch_loss.back())
    << " dB, " << h.epoch_loss.size() << " epochs) peaks at " << peak << " deg, source at "
    << fmt("%.1f", scene.doa_speech) << " deg, oracle MVDR peaks at " << target_peak << " deg, "
    << fmt("%.0f", seconds_since(t0)) << " s";
  return {worst <= kArrayFactorTolDb && err <= kDoaTolDeg, d.str()};
}

Outcome parameter_count() {
  const model::Cospa net(model::CospaConfig{});
  const std::size_t n = net.params().real_dof();
  return {n >= kParamsLo && n <= kParamsHi, std::to_string(n) + " real parameters"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by name substring.
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& f) {
    if (!only.empty() && std::none_of(only.begin(), only.end(), [&](const std::string& o) {
          return std::string(name).find(o) != std::string::npos;
        })) {
      return;
    }
    Outcome r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.pass) ++failures;
    std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", name, r.detail.c_str());
    std::fflush(stdout);
  };

  const auto spec = stft::FrameSpec::sqrt_hann();
  std::vector<pipeline::SceneData> test;

  report("gradient suite", gradient_suite);
  report("stft round trip", stft_round_trip);
  report("mask certificates", mask_certificates);
  report("mvdr correctness", mvdr_correctness);
  report("rir validity", rir_validity);
  report("parameter count", parameter_count);
  report("target formulations", [&] {
    test = make_corpus(4000, kTestScenes, kTestDuration, spec, "test_");
    std::vector<const pipeline::SceneData*> ptrs;
    for (const auto& s : test) ptrs.push_back(&s);
    return target_forms(ptrs, spec);
  });
  report("beampattern sanity", beampattern_sanity);
  report("overfit training", overfit);
  report("evaluation ordering", [&] {
    if (test.empty()) test = make_corpus(4000, kTestScenes, kTestDuration, spec, "test_");
    return evaluation_ordering(test, spec);
  });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
