#pragma once

// Differentiable complex primitives recorded on a Tape.
//
// Matrix-shaped ops interpret a tensor as rows() x cols() (see CTensor).
// Backward rules propagate the conjugate cogradient g = dL/dz*:
//   holomorphic y = f(z):      g_z = conj(f'(z)) g_y
//   general     y = f(z, z*):  g_z = conj(g_y) dy/dz* + g_y conj(dy/dz)

#include <vector>

#include "cospa/ctensor.hpp"

namespace cospa::op {

Var constant(CTensor value);

Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
/// Hadamard product.
Var mul(Tape& t, const Var& a, const Var& b);
/// alpha * a + beta with constant complex scalars.
Var affine(Tape& t, const Var& a, cplx alpha, cplx beta = {});
Var conj(Tape& t, const Var& a);
/// |a| as a complex tensor with zero imaginary part.
Var magnitude(Tape& t, const Var& a);

/// a [n x k] times b [k x m].
Var matmul(Tape& t, const Var& a, const Var& b);
/// x [N x in] times weight^T [in x out] plus bias [out] (bias may be null).
Var linear(Tape& t, const Var& x, const Var& weight, const Var& bias);
/// a [N x C] with each column c multiplied by v[c] / shifted by v[c].
Var mul_cols(Tape& t, const Var& a, const Var& v);
Var add_cols(Tape& t, const Var& a, const Var& v);

Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, const Var& a, std::size_t begin, std::size_t count);
Var slice_rows(Tape& t, const Var& a, std::size_t begin, std::size_t count);
Var reshape(Tape& t, const Var& a, Shape shape);
/// Every row repeated `times` times consecutively: [N x C] -> [N*times x C].
Var repeat_rows(Tape& t, const Var& a, std::size_t times);
/// Sums consecutive groups of `group` rows: [N*group x C] -> [N x C].
Var sum_row_groups(Tape& t, const Var& a, std::size_t group);

/// Sum of all entries as a [1] tensor.
Var sum(Tape& t, const Var& a);
/// Sum of |a|^2 as a real [1] tensor.
Var sum_abs2(Tape& t, const Var& a);

// Split-type activations: the real nonlinearity is applied to the real and
// imaginary parts independently.
Var leaky_relu(Tape& t, const Var& a, double slope);
Var sigmoid(Tape& t, const Var& a);
Var tanh(Tape& t, const Var& a);

/// Fused GRU update for rows [row, row + h.rows()) of the input projection
/// xp [* x 3H] and the hidden projection hp [B x 3H] (gate order r, z, n):
///   r = sig(xp_r + hp_r), z = sig(xp_z + hp_z), n = tanh(xp_n + r . hp_n)
///   h' = n + z . (h - n)
Var gru_cell(Tape& t, const Var& xp, std::size_t row, const Var& hp, const Var& h);

/// tanh(|o|) * o / |o|; zero where |o| < 1e-12.
Var bounded_mask(Tape& t, const Var& o);

/// Per-column normalization of real and imaginary parts of x [N x C].
/// Training mode uses the batch statistics and writes them (mean as complex,
/// biased variances as (var_re, var_im)) to `batch_mean` / `batch_var` when
/// non-null. Otherwise the supplied running statistics are used.
Var batch_normalize(Tape& t, const Var& x, bool training, double eps, const CTensor* running_mean,
                    const CTensor* running_var, CTensor* batch_mean, CTensor* batch_var);

/// Strided 1-D cross-correlation on channel-last input.
/// x: [N, len, cin]; weight: [cout, kernel*cin]; bias: [cout] or null.
/// Result: [N, (len + 2 pad - kernel) / stride + 1, cout].
Var conv1d(Tape& t, const Var& x, const Var& weight, const Var& bias, std::size_t kernel, std::size_t stride,
           std::size_t pad);

/// Transposed counterpart of conv1d. x: [N, len, cin]; weight: [cin, kernel*cout].
/// Output length `out_len` must lie in [(len-1)*stride - 2 pad + kernel,
/// that + stride - 1].
Var conv_transpose1d(Tape& t, const Var& x, const Var& weight, const Var& bias, std::size_t kernel,
                     std::size_t stride, std::size_t pad, std::size_t out_len);

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::size_t pad);

}  // namespace cospa::op
