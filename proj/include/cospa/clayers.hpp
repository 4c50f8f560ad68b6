#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cospa/ctensor.hpp"
#include "cospa/ops.hpp"

namespace cospa::layers {

/// Complex weight with real and imaginary parts drawn from N(0, gain / (2 fan_in)).
Var init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0);
Var zeros(Shape shape, bool requires_grad = true);

/// Complex fully connected layer: y = W x + b.
struct Linear {
  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool with_bias = true);

  /// x: [N x in] -> [N x out].
  Var forward(Tape& t, const Var& x) const;
  void register_params(ParameterSet& ps, const std::string& prefix) const;

  std::size_t in = 0, out = 0;
  Var weight;  // [out x in]
  Var bias;    // [out] or null
};

/// Complex 1-D convolution over channel-last sequences [N, len, cin].
struct Conv1d {
  Conv1d() = default;
  Conv1d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, std::size_t pad,
         std::mt19937_64& rng);

  Var forward(Tape& t, const Var& x) const;
  std::size_t out_len(std::size_t len) const { return op::conv_out_len(len, kernel, stride, pad); }
  void register_params(ParameterSet& ps, const std::string& prefix) const;

  std::size_t cin = 0, cout = 0, kernel = 1, stride = 1, pad = 0;
  Var weight;  // [cout x kernel*cin]
  Var bias;    // [cout]
};

/// Transposed complex 1-D convolution; the output length is chosen by the caller
/// so decoder stages can match their skip connections.
struct ConvTranspose1d {
  ConvTranspose1d() = default;
  ConvTranspose1d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, std::size_t pad,
                  std::mt19937_64& rng);

  Var forward(Tape& t, const Var& x, std::size_t out_len) const;
  void register_params(ParameterSet& ps, const std::string& prefix) const;

  std::size_t cin = 0, cout = 0, kernel = 1, stride = 1, pad = 0;
  Var weight;  // [cin x kernel*cout]
  Var bias;    // [cout]
};

/// Complex GRU with split sigmoid/tanh gates:
///   r = sig(W_ir x + b_ir + W_hr h + b_hr)
///   z = sig(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r . (W_hn h + b_hn))
///   h' = (1 - z) . n + z . h
struct Gru {
  Gru() = default;
  Gru(std::size_t in, std::size_t hidden, std::mt19937_64& rng);

  /// x: [B x in], h: [B x hidden] -> next hidden state [B x hidden].
  Var step(Tape& t, const Var& x, const Var& h) const;

  /// Runs T steps over x: [T*B x in] (frame-major). `h` holds the state on
  /// entry ([B x hidden]) and the final state on exit. Returns [T*B x hidden].
  Var forward_sequence(Tape& t, const Var& x, std::size_t batch, Var& h) const;

  Var initial_state(std::size_t batch) const;
  void register_params(ParameterSet& ps, const std::string& prefix) const;

  std::size_t in = 0, hidden = 0;
  Var w_ih, b_ih;  // [3H x in], [3H]; gate order r, z, n
  Var w_hh, b_hh;  // [3H x H], [3H]

 private:
  Var combine(Tape& t, const Var& xp, std::size_t row, const Var& h) const;
};

/// Complex batch normalization with independent statistics for the real and
/// imaginary parts, followed by a trainable complex scale and shift.
struct BatchNorm {
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-8);

  /// x: [N x C]. Training mode normalizes with batch statistics and updates the
  /// running estimates; inference mode uses the running estimates only.
  Var forward(Tape& t, const Var& x, bool training) const;
  void register_params(ParameterSet& ps, const std::string& prefix) const;

  std::size_t channels = 0;
  double momentum = 0.1;
  double eps = 1e-8;
  Var gamma, beta;                  // [C], trainable
  Var running_mean, running_var;    // [C]; running_var holds (var_re, var_im)
};

Var cleaky_relu(Tape& t, const Var& x, double slope = 0.2);
Var bounded_mask(Tape& t, const Var& o);

}  // namespace cospa::layers
