#include "cospa/model.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "cospa/beamforming.hpp"

namespace cospa::model {

using json = nlohmann::json;

namespace {

json config_json(const CospaConfig& c) {
  return json{{"mics", c.mics},
              {"frame_len", c.frame_len},
              {"hop", c.hop},
              {"sample_rate", c.sample_rate},
              {"l1", c.l1},
              {"l2", c.l2},
              {"l3", c.l3},
              {"l4", c.l4},
              {"l5", c.l5},
              {"l6", c.l6},
              {"down_kernel", c.down_kernel},
              {"down_stride", c.down_stride},
              {"slope", c.slope},
              {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps},
              {"crunet",
               {{"channels", c.crunet.channels},
                {"kernel", c.crunet.kernel},
                {"stride", c.crunet.stride},
                {"gru_hidden", c.crunet.gru_hidden}}},
              {"seed", c.seed}};
}

CospaConfig config_from(const json& j) {
  CospaConfig c;
  c.mics = j.value("mics", c.mics);
  c.frame_len = j.value("frame_len", c.frame_len);
  c.hop = j.value("hop", c.hop);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.l1 = j.value("l1", c.l1);
  c.l2 = j.value("l2", c.l2);
  c.l3 = j.value("l3", c.l3);
  c.l4 = j.value("l4", c.l4);
  c.l5 = j.value("l5", c.l5);
  c.l6 = j.value("l6", c.l6);
  c.down_kernel = j.value("down_kernel", c.down_kernel);
  c.down_stride = j.value("down_stride", c.down_stride);
  c.slope = j.value("slope", c.slope);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  if (j.contains("crunet")) {
    const auto& k = j.at("crunet");
    c.crunet.channels = k.value("channels", c.crunet.channels);
    c.crunet.kernel = k.value("kernel", c.crunet.kernel);
    c.crunet.stride = k.value("stride", c.crunet.stride);
    c.crunet.gru_hidden = k.value("gru_hidden", c.crunet.gru_hidden);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string make_header(const std::string& kind, const CospaConfig& cfg, const std::string& extra) {
  json h{{"model", kind}, {"config", config_json(cfg)}};
  h["extra"] = json::parse(extra.empty() ? "{}" : extra);
  return h.dump();
}

CospaConfig header_config(const Checkpoint& ckpt, const std::string& expected_kind) {
  json h;
  try {
    h = json::parse(ckpt.header);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::string kind = h.value("model", std::string());
  if (kind != expected_kind) {
    throw std::runtime_error("checkpoint holds a '" + kind + "' model, expected '" + expected_kind + "'");
  }
  if (!h.contains("config")) throw std::runtime_error("checkpoint header lacks the model config");
  return config_from(h.at("config"));
}

void load_tensors(ParameterSet& ps, const Checkpoint& ckpt) {
  for (const auto& e : ps.entries()) {
    const NamedTensor* found = nullptr;
    for (const auto& t : ckpt.tensors) {
      if (t.name == e.name) {
        found = &t;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint is missing tensor '" + e.name + "'");
    if (found->value->shape() != e.value->shape()) {
      throw ShapeError("checkpoint tensor '" + e.name + "' has shape " + shape_str(found->value->shape()) +
                       ", model expects " + shape_str(e.value->shape()));
    }
    std::copy(found->value->data().begin(), found->value->data().end(), e.value->data().begin());
  }
}

Checkpoint dump(const ParameterSet& ps, std::string header) {
  Checkpoint ck;
  ck.header = std::move(header);
  for (const auto& e : ps.entries()) {
    CTensor copy(e.value->shape(), std::vector<cplx>(e.value->data().begin(), e.value->data().end()));
    ck.tensors.push_back({e.name, e.kind, make_var(std::move(copy))});
  }
  return ck;
}

CTensor rows_of(const CTensor& X, std::size_t begin, std::size_t count) {
  const std::size_t F = X.cols();
  return CTensor({count, F}, std::vector<cplx>(X.data().begin() + long(begin * F),
                                               X.data().begin() + long((begin + count) * F)));
}

}  // namespace

// Config ------------------------------------------------------------------------

void CospaConfig::validate() const {
  if (mics == 0) throw std::invalid_argument("CospaConfig: mics must be >= 1");
  if (frame_len < 4 || frame_len % 2 != 0) throw std::invalid_argument("CospaConfig: frame_len must be even");
  if (hop == 0 || frame_len % hop != 0) throw std::invalid_argument("CospaConfig: hop must divide frame_len");
  if (!l1 || !l2 || !l3 || !l4 || !l5 || !l6) throw std::invalid_argument("CospaConfig: layer sizes must be >= 1");
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("CospaConfig: slope must lie in (0, 1)");
  if (down_stride == 0 || down_kernel == 0) throw std::invalid_argument("CospaConfig: bad downsampling conv");
  if (crunet.channels.empty()) throw std::invalid_argument("CospaConfig: crunet needs at least one block");
  op::conv_out_len(bins(), down_kernel, down_stride, down_kernel / 2);
}

CospaConfig CospaConfig::reduced() {
  CospaConfig c;
  c.mics = 2;
  c.frame_len = 16;
  c.hop = 8;
  c.l1 = 6;
  c.l2 = 5;
  c.l3 = 4;
  c.l4 = 7;
  c.l5 = 6;
  c.l6 = 5;
  c.crunet.channels = {2, 3};
  c.crunet.kernel = 3;
  c.crunet.gru_hidden = 4;
  return c;
}

std::string CospaConfig::to_json() const { return config_json(*this).dump(); }

CospaConfig CospaConfig::from_json(const std::string& text) { return config_from(json::parse(text)); }

bool CospaConfig::operator==(const CospaConfig& o) const { return config_json(*this) == config_json(o); }

// Crunet ------------------------------------------------------------------------

Crunet::Crunet(const CrunetConfig& cfg, std::size_t bins, double slope, std::mt19937_64& rng)
    : cfg_(cfg), bins_(bins), slope_(slope) {
  const std::size_t pad = cfg.kernel / 2;
  lengths_.push_back(bins);
  std::size_t cin = 1;
  for (std::size_t c : cfg.channels) {
    enc_.emplace_back(cin, c, cfg.kernel, cfg.stride, pad, rng);
    lengths_.push_back(op::conv_out_len(lengths_.back(), cfg.kernel, cfg.stride, pad));
    cin = c;
  }
  gru_ = layers::Gru(cfg.channels.back(), cfg.gru_hidden, rng);
  fc_ = layers::Linear(cfg.gru_hidden, cfg.channels.back(), rng);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::size_t cout = i == 0 ? 1 : cfg.channels[i - 1];
    dec_.emplace_back(2 * cfg.channels[i], cout, cfg.kernel, cfg.stride, pad, rng);
  }
}

Var Crunet::forward(Tape& t, const Var& x, Var& state) const {
  if (x->cols() != bins_) {
    throw ShapeError("Crunet: expected " + std::to_string(bins_) + " bins, got " + shape_str(x->shape()));
  }
  const std::size_t T = x->rows(), D = enc_.size();
  Var y = op::reshape(t, x, {T, bins_, 1});
  std::vector<Var> skips;
  for (std::size_t i = 0; i < D; ++i) {
    y = layers::cleaky_relu(t, enc_[i].forward(t, y), slope_);
    skips.push_back(y);
  }
  const std::size_t P = lengths_.back(), C = cfg_.channels.back();
  Var seq = op::reshape(t, y, {T * P, C});
  Var g = gru_.forward_sequence(t, seq, P, state);
  Var cur = op::reshape(t, fc_.forward(t, g), {T, P, C});
  for (std::size_t i = D; i-- > 0;) {
    const std::size_t len = lengths_[i + 1], c = cfg_.channels[i];
    Var cat = op::concat_cols(t, {op::reshape(t, cur, {T * len, c}), op::reshape(t, skips[i], {T * len, c})});
    cur = dec_[i].forward(t, op::reshape(t, cat, {T, len, 2 * c}), lengths_[i]);
    if (i > 0) cur = layers::cleaky_relu(t, cur, slope_);
  }
  return layers::bounded_mask(t, op::reshape(t, cur, {T, bins_}));
}

void Crunet::register_params(ParameterSet& ps, const std::string& prefix) const {
  for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].register_params(ps, prefix + ".enc" + std::to_string(i));
  gru_.register_params(ps, prefix + ".gru");
  fc_.register_params(ps, prefix + ".fc");
  for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].register_params(ps, prefix + ".dec" + std::to_string(i));
}

// Cospa -------------------------------------------------------------------------

Cospa::Cospa(const CospaConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t F = cfg_.bins(), M = cfg_.mics;
  crunet_ = Crunet(cfg_.crunet, F, cfg_.slope, rng);
  const std::size_t pad = cfg_.down_kernel / 2;
  conv_s_ = layers::Conv1d(1, 1, cfg_.down_kernel, cfg_.down_stride, pad, rng);
  conv_n_ = layers::Conv1d(1, 1, cfg_.down_kernel, cfg_.down_stride, pad, rng);
  const std::size_t down = conv_s_.out_len(F);
  fc_s_ = layers::Linear(down, cfg_.l1, rng);
  fc_n_ = layers::Linear(down, cfg_.l1, rng);
  comp_fc1_ = layers::Linear(2 * M * cfg_.l1, cfg_.l2, rng);
  comp_gru_ = layers::Gru(cfg_.l2, cfg_.l3, rng);
  comp_fc2_ = layers::Linear(cfg_.l3, M * cfg_.l4, rng);
  dec_fc1_ = layers::Linear(cfg_.l4, cfg_.l5, rng);
  dec_bn1_ = layers::BatchNorm(cfg_.l5, cfg_.bn_momentum, cfg_.bn_eps);
  dec_fc2_ = layers::Linear(cfg_.l5, cfg_.l6, rng);
  dec_bn2_ = layers::BatchNorm(cfg_.l6, cfg_.bn_momentum, cfg_.bn_eps);
  dec_fc3_ = layers::Linear(cfg_.l6, F, rng);

  crunet_.register_params(params_, "crunet");
  conv_s_.register_params(params_, "encoder.conv_s");
  conv_n_.register_params(params_, "encoder.conv_n");
  fc_s_.register_params(params_, "encoder.fc_s");
  fc_n_.register_params(params_, "encoder.fc_n");
  comp_fc1_.register_params(params_, "compandor.fc1");
  comp_gru_.register_params(params_, "compandor.gru");
  comp_fc2_.register_params(params_, "compandor.fc2");
  dec_fc1_.register_params(params_, "decoder.fc1");
  dec_bn1_.register_params(params_, "decoder.bn1");
  dec_fc2_.register_params(params_, "decoder.fc2");
  dec_bn2_.register_params(params_, "decoder.bn2");
  dec_fc3_.register_params(params_, "decoder.fc3");
}

Var Cospa::crunet_forward(Tape& t, const Var& x1, CospaState& state) const {
  return crunet_.forward(t, x1, state.crunet);
}

EncoderOutputs Cospa::encode(Tape& t, const Var& X, const Var& shared_mask) const {
  const std::size_t M = cfg_.mics, F = cfg_.bins();
  if (X->cols() != F || X->rows() % M != 0) throw ShapeError("Cospa::encode: bad spectra " + shape_str(X->shape()));
  const std::size_t TM = X->rows(), T = TM / M;
  if (shared_mask->rows() != T || shared_mask->cols() != F) throw ShapeError("Cospa::encode: bad shared mask");
  EncoderOutputs e;
  e.shared_mask = shared_mask;
  e.speech = op::mul(t, op::repeat_rows(t, shared_mask, M), X);
  e.noise = op::sub(t, X, e.speech);
  auto down = [&](const layers::Conv1d& conv, const layers::Linear& fc, const Var& v) {
    const Var c = conv.forward(t, op::reshape(t, v, {TM, F, 1}));
    return fc.forward(t, op::reshape(t, c, {TM, c->dim(1)}));
  };
  e.speech_down = down(conv_s_, fc_s_, e.speech);
  e.noise_down = down(conv_n_, fc_n_, e.noise);
  e.h = op::concat_cols(t, {op::reshape(t, e.speech_down, {T, M * cfg_.l1}),
                            op::reshape(t, e.noise_down, {T, M * cfg_.l1})});
  return e;
}

Var Cospa::compandor_forward(Tape& t, const Var& h, CospaState& state) const {
  const std::size_t T = h->rows();
  const Var a = layers::cleaky_relu(t, comp_fc1_.forward(t, h), cfg_.slope);
  const Var g = comp_gru_.forward_sequence(t, a, 1, state.compandor);
  const Var d = layers::cleaky_relu(t, comp_fc2_.forward(t, g), cfg_.slope);
  return op::reshape(t, d, {T * cfg_.mics, cfg_.l4});
}

Var Cospa::decode(Tape& t, const Var& excitations, bool training) const {
  Var y = layers::cleaky_relu(t, dec_bn1_.forward(t, dec_fc1_.forward(t, excitations), training), cfg_.slope);
  y = layers::cleaky_relu(t, dec_bn2_.forward(t, dec_fc2_.forward(t, y), training), cfg_.slope);
  return layers::bounded_mask(t, dec_fc3_.forward(t, y));
}

CospaOutputs Cospa::forward(Tape& t, const CTensor& Xv, CospaState& state, bool training) const {
  const std::size_t M = cfg_.mics;
  if (Xv.cols() != cfg_.bins() || Xv.rows() == 0 || Xv.rows() % M != 0) {
    throw ShapeError("Cospa: expected [T*" + std::to_string(M) + " x " + std::to_string(cfg_.bins()) + "], got " +
                     shape_str(Xv.shape()));
  }
  const Var X = op::constant(CTensor({Xv.rows(), Xv.cols()}, std::vector<cplx>(Xv.data().begin(), Xv.data().end())));
  const Var x1 = op::constant(channel_rows(Xv, M, 0));
  CospaOutputs out;
  out.enc = encode(t, X, crunet_forward(t, x1, state));
  out.excitations = compandor_forward(t, out.enc.h, state);
  out.masks = decode(t, out.excitations, training);
  out.output = op::sum_row_groups(t, op::mul(t, out.masks, X), M);
  return out;
}

CTensor Cospa::infer_masks(const CTensor& X, CTensor* output) const {
  const std::size_t M = cfg_.mics, F = cfg_.bins();
  if (X.cols() != F || X.rows() % M != 0) throw ShapeError("Cospa::infer_masks: bad spectra " + shape_str(X.shape()));
  const std::size_t T = X.rows() / M;
  CTensor masks({T * M, F});
  if (output) *output = CTensor({T, F});
  Tape tape;
  tape.set_recording(false);
  CospaState state;
  for (std::size_t tau = 0; tau < T; ++tau) {
    const CospaOutputs o = forward(tape, rows_of(X, tau * M, M), state, false);
    std::copy(o.masks->data().begin(), o.masks->data().end(), masks.data().begin() + long(tau * M * F));
    if (output) std::copy(o.output->data().begin(), o.output->data().end(), output->data().begin() + long(tau * F));
  }
  return masks;
}

Checkpoint Cospa::to_checkpoint(const std::string& extra) const {
  return dump(params_, make_header("cospa", cfg_, extra));
}

Cospa Cospa::from_checkpoint(const Checkpoint& ckpt) {
  Cospa m(header_config(ckpt, "cospa"));
  load_tensors(m.params_, ckpt);
  return m;
}

// CrunetModel -------------------------------------------------------------------

CrunetModel::CrunetModel(const CospaConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  net_ = Crunet(cfg_.crunet, cfg_.bins(), cfg_.slope, rng);
  net_.register_params(params_, "crunet");
}

Var CrunetModel::forward(Tape& t, const CTensor& x, Var& state) const {
  return net_.forward(t, op::constant(x), state);
}

CTensor CrunetModel::infer_mask(const CTensor& x) const {
  const std::size_t T = x.rows(), F = x.cols();
  CTensor mask({T, F});
  Tape tape;
  tape.set_recording(false);
  Var state;
  for (std::size_t tau = 0; tau < T; ++tau) {
    const Var g = net_.forward(tape, op::constant(rows_of(x, tau, 1)), state);
    std::copy(g->data().begin(), g->data().end(), mask.data().begin() + long(tau * F));
  }
  return mask;
}

Checkpoint CrunetModel::to_checkpoint(const std::string& extra) const {
  return dump(params_, make_header("crunet", cfg_, extra));
}

CrunetModel CrunetModel::from_checkpoint(const Checkpoint& ckpt) {
  CrunetModel m(header_config(ckpt, "crunet"));
  load_tensors(m.params_, ckpt);
  return m;
}

std::string checkpoint_model_kind(const Checkpoint& ckpt) {
  try {
    return json::parse(ckpt.header).value("model", std::string());
  } catch (const json::exception&) {
    return {};
  }
}

// Loss and shadow filtering -----------------------------------------------------

Var snr_loss(Tape& t, const std::vector<double>& target, const Var& estimate) {
  if (estimate->size() != target.size()) {
    throw ShapeError("snr_loss: target has " + std::to_string(target.size()) + " samples, estimate " +
                     std::to_string(estimate->size()));
  }
  double tt = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    tt += target[i] * target[i];
    ee += std::norm(cplx(target[i]) - (*estimate)[i]);
  }
  if (!(tt > 0.0)) throw std::invalid_argument("snr_loss: target has zero energy");
  const double denom = ee + 1e-10 * tt;
  const double J = -10.0 * std::log10(tt / denom);
  return t.record(CTensor::scalar(J), {estimate}, [estimate, target, denom](CTensor& y) {
    // dJ/ds* = 10 / (ln 10 denom) (s - t); a real output takes 2 Re of its upstream.
    const double c = 2.0 * y.grad()[0].real() * 10.0 / (std::log(10.0) * denom);
    auto g = estimate->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * ((*estimate)[i] - target[i]);
  });
}

double snr_loss_value(const std::vector<double>& target, const std::vector<double>& estimate) {
  if (target.size() != estimate.size()) throw ShapeError("snr_loss_value: length mismatch");
  double tt = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    tt += target[i] * target[i];
    ee += (target[i] - estimate[i]) * (target[i] - estimate[i]);
  }
  if (!(tt > 0.0)) throw std::invalid_argument("snr_loss_value: target has zero energy");
  return -10.0 * std::log10(tt / (ee + 1e-10 * tt));
}

std::vector<double> shadow_filter(const CTensor& masks, const CTensor& component, std::size_t mics,
                                  const stft::FrameSpec& spec, std::size_t num_samples) {
  if (masks.shape() != component.shape()) {
    throw ShapeError("shadow_filter: masks " + shape_str(masks.shape()) + " vs component " +
                     shape_str(component.shape()));
  }
  return stft::istft(bf::filter_and_sum(masks, component, mics), spec, num_samples);
}

CTensor channel_rows(const CTensor& X, std::size_t mics, std::size_t m) {
  if (mics == 0 || X.rows() % mics != 0 || m >= mics) throw ShapeError("channel_rows: bad channel selection");
  const std::size_t T = X.rows() / mics, F = X.cols();
  CTensor out({T, F});
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(X.data().begin() + long((t * mics + m) * F), F, out.data().begin() + long(t * F));
  }
  return out;
}

}  // namespace cospa::model
