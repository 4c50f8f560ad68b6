#include "cospa/clayers.hpp"

#include <cmath>

namespace cospa::layers {

Var init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> nd(0.0, std::sqrt(gain / (2.0 * double(fan_in))));
  CTensor w(std::move(shape));
  for (auto& z : w.data()) {
    const double re = nd(rng);
    const double im = nd(rng);
    z = {re, im};
  }
  return make_var(std::move(w), true);
}

Var zeros(Shape shape, bool requires_grad) { return make_var(CTensor(std::move(shape)), requires_grad); }

// Linear ----------------------------------------------------------------------

Linear::Linear(std::size_t in_, std::size_t out_, std::mt19937_64& rng, bool with_bias)
    : in(in_), out(out_), weight(init_weight({out_, in_}, in_, rng)), bias(with_bias ? zeros({out_}) : nullptr) {}

Var Linear::forward(Tape& t, const Var& x) const {
  if (x->cols() != in) {
    throw ShapeError("Linear: expected " + std::to_string(in) + " inputs, got " + shape_str(x->shape()));
  }
  return op::linear(t, x, weight, bias);
}

void Linear::register_params(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  if (bias) ps.add(prefix + ".bias", bias);
}

// Conv1d ----------------------------------------------------------------------

Conv1d::Conv1d(std::size_t cin_, std::size_t cout_, std::size_t kernel_, std::size_t stride_, std::size_t pad_,
               std::mt19937_64& rng)
    : cin(cin_),
      cout(cout_),
      kernel(kernel_),
      stride(stride_),
      pad(pad_),
      weight(init_weight({cout_, kernel_ * cin_}, kernel_ * cin_, rng, 2.0)),
      bias(zeros({cout_})) {
  if (stride == 0) throw ShapeError("Conv1d: stride must be >= 1");
}

Var Conv1d::forward(Tape& t, const Var& x) const {
  if (x->rank() != 3 || x->dim(2) != cin) {
    throw ShapeError("Conv1d: expected [N, len, " + std::to_string(cin) + "], got " + shape_str(x->shape()));
  }
  return op::conv1d(t, x, weight, bias, kernel, stride, pad);
}

void Conv1d::register_params(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

ConvTranspose1d::ConvTranspose1d(std::size_t cin_, std::size_t cout_, std::size_t kernel_, std::size_t stride_,
                                 std::size_t pad_, std::mt19937_64& rng)
    : cin(cin_),
      cout(cout_),
      kernel(kernel_),
      stride(stride_),
      pad(pad_),
      // Each output sees about kernel*cin/stride inputs.
      weight(init_weight({cin_, kernel_ * cout_}, std::max<std::size_t>(1, kernel_ * cin_ / stride_), rng, 2.0)),
      bias(zeros({cout_})) {
  if (stride == 0) throw ShapeError("ConvTranspose1d: stride must be >= 1");
}

Var ConvTranspose1d::forward(Tape& t, const Var& x, std::size_t out_len) const {
  if (x->rank() != 3 || x->dim(2) != cin) {
    throw ShapeError("ConvTranspose1d: expected [N, len, " + std::to_string(cin) + "], got " +
                     shape_str(x->shape()));
  }
  return op::conv_transpose1d(t, x, weight, bias, kernel, stride, pad, out_len);
}

void ConvTranspose1d::register_params(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

// GRU -------------------------------------------------------------------------

Gru::Gru(std::size_t in_, std::size_t hidden_, std::mt19937_64& rng)
    : in(in_),
      hidden(hidden_),
      w_ih(init_weight({3 * hidden_, in_}, in_, rng)),
      b_ih(zeros({3 * hidden_})),
      w_hh(init_weight({3 * hidden_, hidden_}, hidden_, rng)),
      b_hh(zeros({3 * hidden_})) {}

Var Gru::initial_state(std::size_t batch) const { return make_var(CTensor({batch, hidden})); }

Var Gru::combine(Tape& t, const Var& xp, std::size_t row, const Var& h) const {
  return op::gru_cell(t, xp, row, op::linear(t, h, w_hh, b_hh), h);
}

Var Gru::step(Tape& t, const Var& x, const Var& h) const {
  if (x->cols() != in) throw ShapeError("Gru: input width " + std::to_string(x->cols()) + " != " + std::to_string(in));
  if (h->cols() != hidden || h->rows() != x->rows()) {
    throw ShapeError("Gru: hidden state " + shape_str(h->shape()) + " incompatible with input " +
                     shape_str(x->shape()));
  }
  return combine(t, op::linear(t, x, w_ih, b_ih), 0, h);
}

Var Gru::forward_sequence(Tape& t, const Var& x, std::size_t batch, Var& h) const {
  if (x->cols() != in) throw ShapeError("Gru: input width " + std::to_string(x->cols()) + " != " + std::to_string(in));
  if (batch == 0 || x->rows() % batch != 0) throw ShapeError("Gru: rows not divisible by batch");
  if (!h) h = initial_state(batch);
  if (h->rows() != batch || h->cols() != hidden) throw ShapeError("Gru: bad hidden state " + shape_str(h->shape()));
  const std::size_t steps = x->rows() / batch;
  const Var xp = op::linear(t, x, w_ih, b_ih);  // all input projections in one product
  std::vector<Var> outs;
  outs.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    h = combine(t, xp, s * batch, h);
    outs.push_back(h);
  }
  return steps == 1 ? outs.front() : op::concat_rows(t, outs);
}

void Gru::register_params(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".w_ih", w_ih);
  ps.add(prefix + ".b_ih", b_ih);
  ps.add(prefix + ".w_hh", w_hh);
  ps.add(prefix + ".b_hh", b_hh);
}

// BatchNorm -------------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels_, double momentum_, double eps_)
    : channels(channels_), momentum(momentum_), eps(eps_) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw std::invalid_argument("BatchNorm: momentum must lie in (0, 1)");
  gamma = make_var(CTensor({channels}, std::vector<cplx>(channels, cplx(1.0, 0.0))), true);
  beta = zeros({channels});
  running_mean = make_var(CTensor({channels}));
  running_var = make_var(CTensor({channels}, std::vector<cplx>(channels, cplx(1.0, 1.0))));
}

Var BatchNorm::forward(Tape& t, const Var& x, bool training) const {
  if (x->cols() != channels) throw ShapeError("BatchNorm: channel mismatch " + shape_str(x->shape()));
  CTensor bm, bv;
  const Var xn = op::batch_normalize(t, x, training, eps, running_mean.get(), running_var.get(), &bm, &bv);
  if (training) {
    for (std::size_t j = 0; j < channels; ++j) {
      (*running_mean)[j] = (1.0 - momentum) * (*running_mean)[j] + momentum * bm[j];
      (*running_var)[j] = (1.0 - momentum) * (*running_var)[j] + momentum * bv[j];
    }
  }
  return op::add_cols(t, op::mul_cols(t, xn, gamma), beta);
}

void BatchNorm::register_params(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".gamma", gamma);
  ps.add(prefix + ".beta", beta);
  ps.add(prefix + ".running_mean", running_mean, TensorKind::kBuffer);
  ps.add(prefix + ".running_var", running_var, TensorKind::kBuffer);
}

Var cleaky_relu(Tape& t, const Var& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("cleaky_relu: slope must lie in (0, 1)");
  return op::leaky_relu(t, x, slope);
}

Var bounded_mask(Tape& t, const Var& o) { return op::bounded_mask(t, o); }

}  // namespace cospa::layers
