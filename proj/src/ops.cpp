#include "cospa/ops.hpp"

#include <algorithm>
#include <cmath>

namespace cospa::op {

namespace {

bool needs(const Var& v) { return v && v->requires_grad(); }

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a->shape()) + " vs " +
                     shape_str(b->shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

// Real-valued split activation: y = f(re) + i f(im); `deriv` gets f(x) and x.
template <typename F, typename D>
Var split_activation(Tape& t, const Var& a, F f, D deriv) {
  CTensor out(a->shape());
  std::vector<cplx> dydx(a->size());
  auto in = a->data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double yr = f(in[i].real());
    const double yi = f(in[i].imag());
    o[i] = {yr, yi};
    dydx[i] = {deriv(yr, in[i].real()), deriv(yi, in[i].imag())};
  }
  return t.record(std::move(out), {a}, [a, d = std::move(dydx)](CTensor& y) {
    auto g = y.grad();
    auto ga = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += cplx(g[i].real() * d[i].real(), g[i].imag() * d[i].imag());
  });
}

// Gathers strided windows of src [N, src_len, C] into rows of
// [N*num_pos x kernel*C]; row (n, p) holds src[n, p*stride + k - pad, :].
CMatrix im2col(const cplx* s, std::size_t n_batch, std::size_t src_len, std::size_t channels,
               std::size_t num_pos, std::size_t kernel, std::size_t stride, std::size_t pad) {
  CMatrix cols = CMatrix::Zero(Eigen::Index(n_batch * num_pos), Eigen::Index(kernel * channels));
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t p = 0; p < num_pos; ++p) {
      cplx* row = cols.data() + (n * num_pos + p) * kernel * channels;
      for (std::size_t k = 0; k < kernel; ++k) {
        const long pos = long(p * stride + k) - long(pad);
        if (pos < 0 || pos >= long(src_len)) continue;
        std::copy_n(s + (n * src_len + std::size_t(pos)) * channels, channels, row + k * channels);
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds rows back into dst [N, dst_len, C].
void col2im_add(const CMatrix& cols, std::size_t n_batch, std::size_t num_pos, std::size_t kernel,
                std::size_t stride, std::size_t pad, std::size_t channels, std::size_t dst_len, cplx* dst) {
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t p = 0; p < num_pos; ++p) {
      const cplx* row = cols.data() + (n * num_pos + p) * kernel * channels;
      for (std::size_t k = 0; k < kernel; ++k) {
        const long pos = long(p * stride + k) - long(pad);
        if (pos < 0 || pos >= long(dst_len)) continue;
        cplx* d = dst + (n * dst_len + std::size_t(pos)) * channels;
        for (std::size_t c = 0; c < channels; ++c) d[c] += row[k * channels + c];
      }
    }
  }
}

}  // namespace

Var constant(CTensor value) { return make_var(std::move(value), false); }

Var add(Tape& t, const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  CTensor out(a->shape());
  out.mat() = a->mat() + b->mat();
  return t.record(std::move(out), {a, b}, [a, b](CTensor& y) {
    if (needs(a)) a->grad_mat() += y.grad_mat();
    if (needs(b)) b->grad_mat() += y.grad_mat();
  });
}

Var sub(Tape& t, const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  CTensor out(a->shape());
  out.mat() = a->mat() - b->mat();
  return t.record(std::move(out), {a, b}, [a, b](CTensor& y) {
    if (needs(a)) a->grad_mat() += y.grad_mat();
    if (needs(b)) b->grad_mat() -= y.grad_mat();
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  CTensor out(a->shape());
  out.mat() = a->mat().cwiseProduct(b->mat());
  return t.record(std::move(out), {a, b}, [a, b](CTensor& y) {
    if (needs(a)) a->grad_mat() += y.grad_mat().cwiseProduct(b->mat().conjugate());
    if (needs(b)) b->grad_mat() += y.grad_mat().cwiseProduct(a->mat().conjugate());
  });
}

Var affine(Tape& t, const Var& a, cplx alpha, cplx beta) {
  CTensor out(a->shape());
  out.mat() = (alpha * a->mat().array() + beta).matrix();
  return t.record(std::move(out), {a}, [a, alpha](CTensor& y) { a->grad_mat() += std::conj(alpha) * y.grad_mat(); });
}

Var conj(Tape& t, const Var& a) {
  CTensor out(a->shape());
  out.mat() = a->mat().conjugate();
  return t.record(std::move(out), {a}, [a](CTensor& y) { a->grad_mat() += y.grad_mat().conjugate(); });
}

Var magnitude(Tape& t, const Var& a) {
  CTensor out(a->shape());
  for (std::size_t i = 0; i < a->size(); ++i) out[i] = std::abs((*a)[i]);
  return t.record(std::move(out), {a}, [a](CTensor& y) {
    auto g = y.grad();
    auto ga = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r = y[i].real();
      if (r > 0.0) ga[i] += g[i].real() * (*a)[i] / r;
    }
  });
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  if (a->cols() != b->rows()) {
    throw ShapeError("matmul: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  }
  CTensor out(matrix_shape(a->rows(), b->cols()));
  out.mat().noalias() = a->mat() * b->mat();
  return t.record(std::move(out), {a, b}, [a, b](CTensor& y) {
    if (needs(a)) a->grad_mat().noalias() += y.grad_mat() * b->mat().adjoint();
    if (needs(b)) b->grad_mat().noalias() += a->mat().adjoint() * y.grad_mat();
  });
}

Var linear(Tape& t, const Var& x, const Var& weight, const Var& bias) {
  const std::size_t in = weight->cols();
  const std::size_t outn = weight->rows();
  if (x->cols() != in) {
    throw ShapeError("linear: input " + shape_str(x->shape()) + " vs weight " + shape_str(weight->shape()));
  }
  if (bias && bias->size() != outn) throw ShapeError("linear: bias size mismatch");
  CTensor out(matrix_shape(x->rows(), outn));
  out.mat().noalias() = x->mat() * weight->mat().transpose();
  if (bias) {
    Eigen::Map<const Eigen::Matrix<cplx, 1, Eigen::Dynamic>> b(bias->data().data(), Eigen::Index(outn));
    out.mat().rowwise() += b;
  }
  return t.record(std::move(out), {x, weight, bias}, [x, weight, bias](CTensor& y) {
    const auto gy = y.grad_mat();
    if (needs(x)) x->grad_mat().noalias() += gy * weight->mat().conjugate();
    if (needs(weight)) weight->grad_mat().noalias() += gy.transpose() * x->mat().conjugate();
    if (needs(bias)) {
      Eigen::Map<Eigen::Matrix<cplx, 1, Eigen::Dynamic>> gb(bias->ensure_grad().data(), Eigen::Index(bias->size()));
      gb += gy.colwise().sum();
    }
  });
}

Var mul_cols(Tape& t, const Var& a, const Var& v) {
  const std::size_t c = a->cols();
  if (v->size() != c) throw ShapeError("mul_cols: size mismatch");
  CTensor out(a->shape());
  for (std::size_t r = 0; r < a->rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = a->at(r, j) * (*v)[j];
  }
  return t.record(std::move(out), {a, v}, [a, v](CTensor& y) {
    const std::size_t c = a->cols();
    if (needs(a)) {
      auto ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += y.grad()[i] * std::conj((*v)[i % c]);
    }
    if (needs(v)) {
      auto gv = v->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) gv[i % c] += y.grad()[i] * std::conj((*a)[i]);
    }
  });
}

Var add_cols(Tape& t, const Var& a, const Var& v) {
  const std::size_t c = a->cols();
  if (v->size() != c) throw ShapeError("add_cols: size mismatch");
  CTensor out(a->shape());
  for (std::size_t i = 0; i < a->size(); ++i) out[i] = (*a)[i] + (*v)[i % c];
  return t.record(std::move(out), {a, v}, [a, v](CTensor& y) {
    const std::size_t c = a->cols();
    if (needs(a)) a->grad_mat() += y.grad_mat();
    if (needs(v)) {
      auto gv = v->ensure_grad();
      for (std::size_t i = 0; i < y.size(); ++i) gv[i % c] += y.grad()[i];
    }
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front()->rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p->rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p->cols();
  }
  CTensor out(matrix_shape(rows, cols));
  std::size_t off = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(Eigen::Index(off), Eigen::Index(p->cols())) = p->mat();
    off += p->cols();
  }
  return t.record(std::move(out), parts, [parts](CTensor& y) {
    std::size_t off = 0;
    const auto gy = y.grad_mat();
    for (const auto& p : parts) {
      if (needs(p)) p->grad_mat() += gy.middleCols(Eigen::Index(off), Eigen::Index(p->cols()));
      off += p->cols();
    }
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front()->cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p->cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p->rows();
  }
  CTensor out(matrix_shape(rows, cols));
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + long(off * cols));
    off += p->rows();
  }
  return t.record(std::move(out), parts, [parts](CTensor& y) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (needs(p)) p->accumulate_grad(y.grad().subspan(off * p->cols(), p->size()));
      off += p->rows();
    }
  });
}

Var slice_cols(Tape& t, const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a->cols()) throw ShapeError("slice_cols: out of range");
  CTensor out(matrix_shape(a->rows(), count));
  out.mat() = a->mat().middleCols(Eigen::Index(begin), Eigen::Index(count));
  return t.record(std::move(out), {a}, [a, begin, count](CTensor& y) {
    a->grad_mat().middleCols(Eigen::Index(begin), Eigen::Index(count)) += y.grad_mat();
  });
}

Var slice_rows(Tape& t, const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a->rows()) throw ShapeError("slice_rows: out of range");
  const std::size_t c = a->cols();
  CTensor out(matrix_shape(count, c));
  std::copy_n(a->data().begin() + long(begin * c), count * c, out.data().begin());
  return t.record(std::move(out), {a}, [a, begin](CTensor& y) {
    auto ga = a->ensure_grad();
    const std::size_t off = begin * a->cols();
    for (std::size_t i = 0; i < y.size(); ++i) ga[off + i] += y.grad()[i];
  });
}

Var reshape(Tape& t, const Var& a, Shape shape) {
  CTensor out(std::move(shape), std::vector<cplx>(a->data().begin(), a->data().end()));
  return t.record(std::move(out), {a}, [a](CTensor& y) { a->accumulate_grad(y.grad()); });
}

Var repeat_rows(Tape& t, const Var& a, std::size_t times) {
  const std::size_t r = a->rows(), c = a->cols();
  CTensor out(matrix_shape(r * times, c));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy_n(a->data().begin() + long(i * c), c, out.data().begin() + long((i * times + k) * c));
    }
  }
  return t.record(std::move(out), {a}, [a, times](CTensor& y) {
    const std::size_t r = a->rows(), c = a->cols();
    auto ga = a->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t k = 0; k < times; ++k) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y.grad()[(i * times + k) * c + j];
      }
    }
  });
}

Var sum_row_groups(Tape& t, const Var& a, std::size_t group) {
  const std::size_t r = a->rows(), c = a->cols();
  if (group == 0 || r % group != 0) throw ShapeError("sum_row_groups: rows not divisible by group");
  CTensor out(matrix_shape(r / group, c));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(i / group, j) += a->at(i, j);
  }
  return t.record(std::move(out), {a}, [a, group](CTensor& y) {
    const std::size_t r = a->rows(), c = a->cols();
    auto ga = a->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y.grad()[(i / group) * c + j];
    }
  });
}

Var sum(Tape& t, const Var& a) {
  cplx s{};
  for (const auto& z : a->data()) s += z;
  return t.record(CTensor::scalar(s), {a}, [a](CTensor& y) {
    const cplx g = y.grad()[0];
    for (auto& ga : a->ensure_grad()) ga += g;
  });
}

Var sum_abs2(Tape& t, const Var& a) {
  double s = 0.0;
  for (const auto& z : a->data()) s += std::norm(z);
  return t.record(CTensor::scalar(s), {a}, [a](CTensor& y) {
    // d|z|^2/dz* = z; only the real part of the upstream gradient matters.
    const double g = 2.0 * y.grad()[0].real();
    auto ga = a->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (*a)[i];
  });
}

Var leaky_relu(Tape& t, const Var& a, double slope) {
  return split_activation(
      t, a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double, double x) { return x >= 0.0 ? 1.0 : slope; });
}

Var sigmoid(Tape& t, const Var& a) {
  return split_activation(
      t, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double y, double) { return y * (1.0 - y); });
}

Var tanh(Tape& t, const Var& a) {
  return split_activation(
      t, a, [](double x) { return std::tanh(x); }, [](double y, double) { return 1.0 - y * y; });
}

Var gru_cell(Tape& t, const Var& xp, std::size_t row, const Var& hp, const Var& h) {
  const std::size_t B = h->rows(), H = h->cols();
  if (xp->cols() != 3 * H || hp->cols() != 3 * H || hp->rows() != B || row + B > xp->rows()) {
    throw ShapeError("gru_cell: inconsistent shapes " + shape_str(xp->shape()) + ", " + shape_str(hp->shape()) +
                     ", " + shape_str(h->shape()));
  }
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  // Saved per entry: r, z, n.
  std::vector<cplx> r(B * H), z(B * H), n(B * H);
  CTensor out({B, H});
  for (std::size_t b = 0; b < B; ++b) {
    const cplx* x = xp->data().data() + (row + b) * 3 * H;
    const cplx* p = hp->data().data() + b * 3 * H;
    const cplx* hv = h->data().data() + b * H;
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t i = b * H + j;
      const cplx ar = x[j] + p[j], az = x[H + j] + p[H + j];
      r[i] = {sig(ar.real()), sig(ar.imag())};
      z[i] = {sig(az.real()), sig(az.imag())};
      const cplx an = x[2 * H + j] + r[i] * p[2 * H + j];
      n[i] = {std::tanh(an.real()), std::tanh(an.imag())};
      out[i] = n[i] + z[i] * (hv[j] - n[i]);
    }
  }
  return t.record(std::move(out), {xp, hp, h},
                  [xp, row, hp, h, r = std::move(r), z = std::move(z), n = std::move(n)](CTensor& y) {
    const std::size_t B = h->rows(), H = h->cols();
    auto split = [](cplx g, cplx f, auto deriv) { return cplx(g.real() * deriv(f.real()), g.imag() * deriv(f.imag())); };
    auto dsig = [](double s) { return s * (1.0 - s); };
    auto dtanh = [](double v) { return 1.0 - v * v; };
    const bool need_x = needs(xp), need_p = needs(hp), need_h = needs(h);
    cplx* gx = need_x ? xp->ensure_grad().data() : nullptr;
    cplx* gp = need_p ? hp->ensure_grad().data() : nullptr;
    cplx* gh = need_h ? h->ensure_grad().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const cplx* p = hp->data().data() + b * 3 * H;
      const cplx* hv = h->data().data() + b * H;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t i = b * H + j;
        const cplx g = y.grad()[i];
        const cplx g_z = g * std::conj(hv[j] - n[i]);
        const cplx g_n = g * std::conj(1.0 - z[i]);
        if (gh) gh[i] += g * std::conj(z[i]);
        const cplx g_an = split(g_n, n[i], dtanh);
        const cplx g_r = g_an * std::conj(p[2 * H + j]);
        const cplx g_ar = split(g_r, r[i], dsig);
        const cplx g_az = split(g_z, z[i], dsig);
        if (gx) {
          cplx* gxr = gx + (row + b) * 3 * H;
          gxr[j] += g_ar;
          gxr[H + j] += g_az;
          gxr[2 * H + j] += g_an;
        }
        if (gp) {
          cplx* gpr = gp + b * 3 * H;
          gpr[j] += g_ar;
          gpr[H + j] += g_az;
          gpr[2 * H + j] += g_an * std::conj(r[i]);
        }
      }
    }
  });
}

Var bounded_mask(Tape& t, const Var& o) {
  CTensor out(o->shape());
  // Per entry: dy/dz and dy/dz* of y = phi(r) z with phi(r) = tanh(r) / r.
  std::vector<cplx> dz(o->size()), dzc(o->size());
  for (std::size_t i = 0; i < o->size(); ++i) {
    const cplx z = (*o)[i];
    const double r = std::abs(z);
    if (r < 1e-12) {
      out[i] = 0.0;
      dz[i] = 1.0;  // limit of phi at 0
      dzc[i] = 0.0;
      continue;
    }
    const double th = std::tanh(r);
    const double phi = th / r;
    const double dphi = ((1.0 - th * th) * r - th) / (r * r);
    out[i] = phi * z;
    while (std::abs(out[i]) > 1.0) out[i] *= std::nextafter(1.0, 0.0);
    dz[i] = phi + dphi * r / 2.0;        // phi + z phi'(r) z* / (2r)
    dzc[i] = dphi * z * z / (2.0 * r);   // z phi'(r) z / (2r)
  }
  return t.record(std::move(out), {o}, [o, dz = std::move(dz), dzc = std::move(dzc)](CTensor& y) {
    auto g = y.grad();
    auto go = o->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) go[i] += std::conj(g[i]) * dzc[i] + g[i] * std::conj(dz[i]);
  });
}

Var batch_normalize(Tape& t, const Var& x, bool training, double eps, const CTensor* running_mean,
                    const CTensor* running_var, CTensor* batch_mean, CTensor* batch_var) {
  const std::size_t n = x->rows(), c = x->cols();
  if (n == 0) throw ShapeError("batch_normalize: empty batch");
  std::vector<cplx> mean(c), inv_std(c);
  if (training) {
    std::vector<cplx> var(c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) mean[j] += x->at(i, j);
    }
    for (auto& m : mean) m /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const cplx d = x->at(i, j) - mean[j];
        var[j] += cplx(d.real() * d.real(), d.imag() * d.imag());
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= double(n);
      inv_std[j] = {1.0 / std::sqrt(var[j].real() + eps), 1.0 / std::sqrt(var[j].imag() + eps)};
    }
    if (batch_mean) *batch_mean = CTensor({c}, mean);
    if (batch_var) *batch_var = CTensor({c}, var);
  } else {
    if (!running_mean || !running_var || running_mean->size() != c || running_var->size() != c) {
      throw ShapeError("batch_normalize: running statistics missing or mis-sized");
    }
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = (*running_mean)[j];
      const cplx v = (*running_var)[j];
      inv_std[j] = {1.0 / std::sqrt(v.real() + eps), 1.0 / std::sqrt(v.imag() + eps)};
    }
  }
  CTensor out(x->shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const cplx d = x->at(i, j) - mean[j];
      out.at(i, j) = {d.real() * inv_std[j].real(), d.imag() * inv_std[j].imag()};
    }
  }
  return t.record(std::move(out), {x}, [x, training, inv_std = std::move(inv_std)](CTensor& y) {
    const std::size_t n = x->rows(), c = x->cols();
    auto gx = x->ensure_grad();
    if (!training) {
      for (std::size_t i = 0; i < n * c; ++i) {
        const std::size_t j = i % c;
        gx[i] += cplx(y.grad()[i].real() * inv_std[j].real(), y.grad()[i].imag() * inv_std[j].imag());
      }
      return;
    }
    // Standard batch-norm adjoint applied to each real component.
    std::vector<cplx> mean_g(c), mean_gy(c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const cplx g = y.grad()[i * c + j];
        const cplx yh = y.at(i, j);
        mean_g[j] += g;
        mean_gy[j] += cplx(g.real() * yh.real(), g.imag() * yh.imag());
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      mean_g[j] /= double(n);
      mean_gy[j] /= double(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const cplx g = y.grad()[i * c + j];
        const cplx yh = y.at(i, j);
        const double re = (g.real() - mean_g[j].real() - yh.real() * mean_gy[j].real()) * inv_std[j].real();
        const double im = (g.imag() - mean_g[j].imag() - yh.imag() * mean_gy[j].imag()) * inv_std[j].imag();
        gx[i * c + j] += cplx(re, im);
      }
    }
  });
}

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv: stride must be >= 1");
  if (len + 2 * pad < kernel) throw ShapeError("conv: input shorter than kernel");
  return (len + 2 * pad - kernel) / stride + 1;
}

Var conv1d(Tape& t, const Var& x, const Var& weight, const Var& bias, std::size_t kernel, std::size_t stride,
           std::size_t pad) {
  if (x->rank() != 3) throw ShapeError("conv1d: input must be [N, len, cin], got " + shape_str(x->shape()));
  const std::size_t n = x->dim(0), len = x->dim(1), cin = x->dim(2);
  const std::size_t cout = weight->rows();
  if (weight->cols() != kernel * cin) throw ShapeError("conv1d: weight " + shape_str(weight->shape()));
  if (bias && bias->size() != cout) throw ShapeError("conv1d: bias size mismatch");
  const std::size_t lout = conv_out_len(len, kernel, stride, pad);
  const CMatrix cols = im2col(x->data().data(), n, len, cin, lout, kernel, stride, pad);
  CTensor out({n, lout, cout});
  out.mat().noalias() = cols * weight->mat().transpose();
  if (bias) {
    Eigen::Map<const Eigen::Matrix<cplx, 1, Eigen::Dynamic>> b(bias->data().data(), Eigen::Index(cout));
    out.mat().rowwise() += b;
  }
  return t.record(std::move(out), {x, weight, bias}, [=](CTensor& y) {
    const auto gy = y.grad_mat();
    if (needs(weight)) {
      const CMatrix c = im2col(x->data().data(), n, len, cin, lout, kernel, stride, pad);
      weight->grad_mat().noalias() += gy.transpose() * c.conjugate();
    }
    if (needs(bias)) {
      Eigen::Map<Eigen::Matrix<cplx, 1, Eigen::Dynamic>> gb(bias->ensure_grad().data(), Eigen::Index(cout));
      gb += gy.colwise().sum();
    }
    if (needs(x)) {
      const CMatrix gcols = gy * weight->mat().conjugate();
      col2im_add(gcols, n, lout, kernel, stride, pad, cin, len, x->ensure_grad().data());
    }
  });
}

Var conv_transpose1d(Tape& t, const Var& x, const Var& weight, const Var& bias, std::size_t kernel,
                     std::size_t stride, std::size_t pad, std::size_t out_len) {
  if (x->rank() != 3) throw ShapeError("conv_transpose1d: input must be [N, len, cin]");
  const std::size_t n = x->dim(0), len = x->dim(1), cin = x->dim(2);
  if (weight->rows() != cin || weight->cols() % kernel != 0) {
    throw ShapeError("conv_transpose1d: weight " + shape_str(weight->shape()));
  }
  const std::size_t cout = weight->cols() / kernel;
  if (bias && bias->size() != cout) throw ShapeError("conv_transpose1d: bias size mismatch");
  const long base = long((len - 1) * stride + kernel) - 2 * long(pad);
  if (long(out_len) < base || long(out_len) >= base + long(stride)) {
    throw ShapeError("conv_transpose1d: output length " + std::to_string(out_len) + " inconsistent with input " +
                     std::to_string(len));
  }
  const CMatrix z = x->mat() * weight->mat();  // [n*len x kernel*cout]
  CTensor out({n, out_len, cout});
  col2im_add(z, n, len, kernel, stride, pad, cout, out_len, out.data().data());
  if (bias) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*bias)[i % cout];
  }
  return t.record(std::move(out), {x, weight, bias}, [=](CTensor& y) {
    const CMatrix gz = im2col(y.grad().data(), n, out_len, cout, len, kernel, stride, pad);
    if (needs(x)) x->grad_mat().noalias() += gz * weight->mat().adjoint();
    if (needs(weight)) weight->grad_mat().noalias() += x->mat().adjoint() * gz;
    if (needs(bias)) {
      auto gb = bias->ensure_grad();
      for (std::size_t i = 0; i < y.size(); ++i) gb[i % cout] += y.grad()[i];
    }
  });
}

}  // namespace cospa::op
