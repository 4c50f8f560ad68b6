#include <doctest.h>

#include <cmath>

#include "cospa/ops.hpp"
#include "test_util.hpp"

using namespace cospa;
using testutil::probe_loss;
using testutil::random_param;
using testutil::random_tensor;

namespace {

double split_sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
cplx sig(cplx z) { return {split_sig(z.real()), split_sig(z.imag())}; }
cplx th(cplx z) { return {std::tanh(z.real()), std::tanh(z.imag())}; }

double check(const std::function<Var(Tape&)>& f, const std::vector<Var>& params) {
  return finite_diff_check(f, params, 1e-6);
}

}  // namespace

TEST_CASE("elementwise and structural ops pass finite differences") {
  std::mt19937_64 rng(1);
  Var a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
  Var v = random_param({4}, rng);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::add(t, a, b)); }, {a, b}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::sub(t, a, b)); }, {a, b}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::mul(t, a, b)); }, {a, b}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::affine(t, a, {0.3, -2.0}, {1, 1})); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::conj(t, a)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::magnitude(t, a)); }, {a}) < 1e-6);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::mul_cols(t, a, v)); }, {a, v}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::add_cols(t, a, v)); }, {a, v}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::concat_cols(t, {a, b})); }, {a, b}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::concat_rows(t, {a, b})); }, {a, b}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::slice_cols(t, a, 1, 2)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::slice_rows(t, a, 1, 2)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::reshape(t, a, {2, 6})); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::repeat_rows(t, a, 3)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::sum_row_groups(t, a, 3)); }, {a}) < 1e-7);
}

TEST_CASE("matrix products pass finite differences") {
  std::mt19937_64 rng(2);
  Var x = random_param({5, 3}, rng), w = random_param({4, 3}, rng), bias = random_param({4}, rng);
  Var m = random_param({3, 2}, rng);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::matmul(t, x, m)); }, {x, m}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::linear(t, x, w, bias)); }, {x, w, bias}) < 1e-7);
}

TEST_CASE("split activations pass finite differences") {
  std::mt19937_64 rng(3);
  Var a = random_param({4, 5}, rng);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::leaky_relu(t, a, 0.2)); }, {a}) < 1e-6);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::sigmoid(t, a)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::tanh(t, a)); }, {a}) < 1e-7);
  CHECK(check([&](Tape& t) { return probe_loss(t, op::bounded_mask(t, a)); }, {a}) < 1e-6);
}

TEST_CASE("leaky relu acts on each component separately") {
  Tape t;
  const Var y = op::leaky_relu(t, op::constant(CTensor({2}, {cplx(2.0, -1.0), cplx(-3.0, 4.0)})), 0.2);
  CHECK(std::abs((*y)[0] - cplx(2.0, -0.2)) < 1e-15);
  CHECK(std::abs((*y)[1] - cplx(-0.6, 4.0)) < 1e-15);
}

TEST_CASE("bounded mask matches tanh(|o|) o / |o|") {
  std::mt19937_64 rng(4);
  const CTensor o = random_tensor({200}, rng, 3.0);
  Tape t;
  const Var m = op::bounded_mask(t, op::constant(o));
  for (std::size_t i = 0; i < o.size(); ++i) {
    const cplx expect = std::tanh(std::abs(o[i])) * o[i] / std::abs(o[i]);
    CHECK(std::abs((*m)[i] - expect) < 1e-14);
  }
  const Var z = op::bounded_mask(t, op::constant(CTensor({1}, {cplx(1e-13, 0.0)})));
  CHECK((*z)[0] == cplx{});
}

TEST_CASE("fused gru cell matches the gate equations and gradients") {
  std::mt19937_64 rng(5);
  const std::size_t B = 2, H = 3;
  Var xp = random_param({3 * B, 3 * H}, rng), hp = random_param({B, 3 * H}, rng), h = random_param({B, H}, rng);
  Tape t;
  const Var y = op::gru_cell(t, xp, B, hp, h);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      const cplx r = sig(xp->at(B + b, j) + hp->at(b, j));
      const cplx z = sig(xp->at(B + b, H + j) + hp->at(b, H + j));
      const cplx n = th(xp->at(B + b, 2 * H + j) + r * hp->at(b, 2 * H + j));
      CHECK(std::abs(y->at(b, j) - (n + z * (h->at(b, j) - n))) < 1e-14);
    }
  }
  CHECK(check([&](Tape& tt) { return probe_loss(tt, op::gru_cell(tt, xp, B, hp, h)); }, {xp, hp, h}) < 1e-7);
}

TEST_CASE("conv1d matches a direct loop and passes finite differences") {
  std::mt19937_64 rng(6);
  const std::size_t n = 2, len = 9, cin = 2, cout = 3, k = 3, s = 2, p = 1;
  Var x = random_param({n, len, cin}, rng), w = random_param({cout, k * cin}, rng), b = random_param({cout}, rng);
  Tape t;
  const Var y = op::conv1d(t, x, w, b, k, s, p);
  const std::size_t lout = (len + 2 * p - k) / s + 1;
  REQUIRE(y->shape() == Shape{n, lout, cout});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < lout; ++o) {
      for (std::size_t co = 0; co < cout; ++co) {
        cplx acc = (*b)[co];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const long pos = long(o * s + kk) - long(p);
          if (pos < 0 || pos >= long(len)) continue;
          for (std::size_t ci = 0; ci < cin; ++ci) acc += w->at(co, kk * cin + ci) * (*x)[(i * len + pos) * cin + ci];
        }
        CHECK(std::abs((*y)[(i * lout + o) * cout + co] - acc) < 1e-13);
      }
    }
  }
  CHECK(check([&](Tape& tt) { return probe_loss(tt, op::conv1d(tt, x, w, b, k, s, p)); }, {x, w, b}) < 1e-7);
}

TEST_CASE("transposed conv1d matches a direct scatter loop") {
  std::mt19937_64 rng(7);
  const std::size_t n = 2, len = 5, cin = 3, cout = 2, k = 3, s = 2, p = 1, lout = 9;
  Var x = random_param({n, len, cin}, rng), w = random_param({cin, k * cout}, rng), b = random_param({cout}, rng);
  Tape t;
  const Var y = op::conv_transpose1d(t, x, w, b, k, s, p, lout);
  std::vector<cplx> ref(n * lout * cout);
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = (*b)[i % cout];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const long pos = long(l * s + kk) - long(p);
        if (pos < 0 || pos >= long(lout)) continue;
        for (std::size_t co = 0; co < cout; ++co) {
          for (std::size_t ci = 0; ci < cin; ++ci) {
            ref[(i * lout + pos) * cout + co] += (*x)[(i * len + l) * cin + ci] * w->at(ci, kk * cout + co);
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs((*y)[i] - ref[i]) < 1e-13);
  CHECK(check([&](Tape& tt) { return probe_loss(tt, op::conv_transpose1d(tt, x, w, b, k, s, p, lout)); },
              {x, w, b}) < 1e-7);
  CHECK_THROWS_AS(op::conv_transpose1d(t, x, w, b, k, s, p, 20), ShapeError);
}

TEST_CASE("batch normalization uses per-component batch statistics") {
  std::mt19937_64 rng(8);
  const CTensor x = random_tensor({6, 2}, rng);
  CTensor mean, var;
  Tape t;
  const Var y = op::batch_normalize(t, op::constant(x), true, 1e-8, nullptr, nullptr, &mean, &var);
  for (std::size_t c = 0; c < 2; ++c) {
    double mr = 0, mi = 0, vr = 0, vi = 0;
    for (std::size_t r = 0; r < 6; ++r) {
      mr += x.at(r, c).real() / 6;
      mi += x.at(r, c).imag() / 6;
    }
    for (std::size_t r = 0; r < 6; ++r) {
      vr += std::pow(x.at(r, c).real() - mr, 2) / 6;
      vi += std::pow(x.at(r, c).imag() - mi, 2) / 6;
    }
    CHECK(std::abs(mean[c] - cplx(mr, mi)) < 1e-14);
    CHECK(std::abs(var[c] - cplx(vr, vi)) < 1e-14);
    for (std::size_t r = 0; r < 6; ++r) {
      const cplx e((x.at(r, c).real() - mr) / std::sqrt(vr + 1e-8), (x.at(r, c).imag() - mi) / std::sqrt(vi + 1e-8));
      CHECK(std::abs(y->at(r, c) - e) < 1e-12);
    }
  }
  Var xp = random_param({6, 2}, rng);
  CHECK(check([&](Tape& tt) { return probe_loss(tt, op::batch_normalize(tt, xp, true, 1e-8, nullptr, nullptr,
                                                                        nullptr, nullptr)); },
              {xp}) < 1e-6);
}

TEST_CASE("mask certificate on random inputs") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> scale(0.0, 4.0);
  const CTensor o = random_tensor({10000}, rng, 1.0);
  CTensor scaled = o;
  for (auto& v : scaled.data()) v *= std::exp(scale(rng));
  Tape t;
  const Var m = op::bounded_mask(t, op::constant(scaled));
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    CHECK_LE(std::abs((*m)[i]), 1.0);
    if (std::abs(scaled[i]) >= 1e-12 && std::abs((*m)[i]) > 0) {
      CHECK(std::abs(std::arg((*m)[i] / scaled[i])) < 1e-9);
    }
  }
}
