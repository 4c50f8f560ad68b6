#include "cospa/ctensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace cospa {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

CTensor::CTensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_)) {}

CTensor::CTensor(Shape shape, std::vector<cplx> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("CTensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

CTensor CTensor::from_real(Shape shape, std::span<const double> values) {
  std::vector<cplx> data(values.begin(), values.end());
  return CTensor(std::move(shape), std::move(data));
}

std::size_t CTensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("CTensor::dim: axis out of range");
  return shape_[axis];
}

std::size_t CTensor::rows() const noexcept {
  if (shape_.size() <= 1) return shape_.empty() ? 0 : 1;
  return data_.size() / shape_.back();
}

std::size_t CTensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

cplx CTensor::item() const {
  if (data_.size() != 1) throw ShapeError("CTensor::item on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void CTensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

std::span<cplx> CTensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), cplx{});
  return grad_;
}

CMatMap CTensor::grad_mat() {
  ensure_grad();
  return {grad_.data(), Eigen::Index(rows()), Eigen::Index(cols())};
}

void CTensor::accumulate_grad(std::span<const cplx> g) {
  if (g.size() != data_.size()) throw ShapeError("accumulate_grad: size mismatch");
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

bool CTensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

Var make_var(CTensor value, bool requires_grad) {
  auto v = std::make_shared<CTensor>(std::move(value));
  v->set_requires_grad(requires_grad);
  return v;
}

// Tape ------------------------------------------------------------------------

Var Tape::record(CTensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(CTensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  const bool needs_grad = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) {
                            return v && v->requires_grad();
                          });
  auto out = make_var(std::move(value), needs_grad);
  if (needs_grad) nodes_.push_back(Node{inputs, out, std::move(backward)});
  return out;
}

void Tape::backward(const Var& loss) {
  if (!loss || loss->size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  const cplx l = loss->item();
  if (std::abs(l.imag()) > 1e-12 * std::max(1.0, std::abs(l.real()))) {
    throw std::invalid_argument("backward: loss must be real");
  }
  if (!loss->requires_grad()) return;

  std::unordered_map<const CTensor*, std::size_t> index;
  index.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) index.emplace(nodes_[i].output.get(), i);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& in : nodes_[i].inputs) {
      auto it = index.find(in.get());
      if (it != index.end() && it->second >= i) throw std::logic_error("backward: tape is not acyclic");
    }
  }

  // dL/dL* for a real L is 1/2.
  loss->ensure_grad()[0] += 0.5;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->has_grad()) it->backward(*it->output);
  }
}

// Finite differences ----------------------------------------------------------

namespace {

double eval_scalar(const std::function<Var(Tape&)>& f) {
  Tape t;
  t.set_recording(false);
  const Var out = f(t);
  if (!out || out->size() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
  const double v = out->item().real();
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace

double finite_diff_check(const std::function<Var(Tape&)>& f, const std::vector<Var>& params, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("finite_diff_check: h must lie in [1e-7, 1e-3]");
  for (const auto& p : params) p->clear_grad();
  {
    Tape t;
    const Var loss = f(t);
    if (!std::isfinite(loss->item().real())) throw std::runtime_error("finite_diff_check: non-finite loss");
    t.backward(loss);
  }
  double worst = 0.0;
  for (const auto& p : params) {
    std::vector<cplx> tape_grad(p->size());
    if (p->has_grad()) std::copy(p->grad().begin(), p->grad().end(), tape_grad.begin());
    p->clear_grad();
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const cplx saved = (*p)[i];
      (*p)[i] = saved + cplx(h, 0);
      const double fxp = eval_scalar(f);
      (*p)[i] = saved - cplx(h, 0);
      const double fxm = eval_scalar(f);
      (*p)[i] = saved + cplx(0, h);
      const double fyp = eval_scalar(f);
      (*p)[i] = saved - cplx(0, h);
      const double fym = eval_scalar(f);
      (*p)[i] = saved;
      const cplx fd(0.5 * (fxp - fxm) / (2 * h), 0.5 * (fyp - fym) / (2 * h));
      diff2 += std::norm(tape_grad[i] - fd);
      ref2 += std::norm(fd);
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12));
  }
  return worst;
}

// Adam ------------------------------------------------------------------------

void adam_step(const std::vector<Var>& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
  }
  for (const auto& p : params) {
    if (!p->has_grad()) throw std::logic_error("adam_step: parameter without gradient");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) {
      m.assign(p.size(), cplx{});
      v.assign(p.size(), cplx{});
    }
    auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      // Real-component gradient: dL/dx + i dL/dy = 2 dL/dw*.
      const double gr = 2.0 * g[i].real();
      const double gi = 2.0 * g[i].imag();
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * cplx(gr, gi);
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * cplx(gr * gr, gi * gi);
      const double step_re = (m[i].real() / bc1) / (std::sqrt(v[i].real() / bc2) + state.epsilon);
      const double step_im = (m[i].imag() / bc1) / (std::sqrt(v[i].imag() / bc2) + state.epsilon);
      p[i] -= state.learning_rate * cplx(step_re, step_im);
    }
    p.clear_grad();
  }
}

double clip_grad_norm(const std::vector<Var>& params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params) {
    for (const auto& g : p->grad()) total += 4.0 * std::norm(g);
  }
  total = std::sqrt(total);
  if (total > max_norm && total > 0.0) {
    const double s = max_norm / total;
    for (const auto& p : params) {
      for (auto& g : p->grad()) g *= s;
    }
  }
  return total;
}

// ParameterSet ----------------------------------------------------------------

void ParameterSet::add(std::string name, Var value, TensorKind kind) {
  if (find(name)) throw std::invalid_argument("ParameterSet: duplicate name " + name);
  if (kind == TensorKind::kParameter) value->set_requires_grad(true);
  entries_.push_back(NamedTensor{std::move(name), kind, std::move(value)});
}

std::vector<Var> ParameterSet::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_) {
    if (e.kind == TensorKind::kParameter) out.push_back(e.value);
  }
  return out;
}

Var ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  return nullptr;
}

std::size_t ParameterSet::real_dof() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.kind == TensorKind::kParameter) n += 2 * e.value->size();
  }
  return n;
}

// Checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'O', 'S', 'P', 'A', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("corrupt checkpoint: truncated");
  return v;
}

std::string get_string(std::istream& is, std::uint64_t len) {
  if (len > (1u << 30)) throw std::runtime_error("corrupt checkpoint: bad string length");
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error("corrupt checkpoint: truncated");
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, Checkpoint::kFormatVersion);
  put<std::uint64_t>(os, ckpt.header.size());
  os.write(ckpt.header.data(), static_cast<std::streamsize>(ckpt.header.size()));
  put<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.kind));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value->rank()));
    for (auto d : t.value->shape()) put<std::uint64_t>(os, d);
    for (const auto& z : t.value->data()) {
      put<double>(os, z.real());
      put<double>(os, z.imag());
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("corrupt checkpoint: bad magic in " + path);
  }
  const auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header = get_string(is, get<std::uint64_t>(is));
  const auto count = get<std::uint64_t>(is);
  if (count > (1u << 24)) throw std::runtime_error("corrupt checkpoint: bad tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = get_string(is, get<std::uint32_t>(is));
    const auto kind = get<std::uint32_t>(is);
    if (kind > 2) throw std::runtime_error("corrupt checkpoint: bad tensor kind");
    t.kind = static_cast<TensorKind>(kind);
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: bad rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is);
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) throw std::runtime_error("corrupt checkpoint: bad shape");
    std::vector<cplx> data(n);
    for (auto& z : data) {
      const double re = get<double>(is);
      const double im = get<double>(is);
      z = {re, im};
    }
    t.value = make_var(CTensor(std::move(shape), std::move(data)));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::size_t param_count(const Checkpoint& ckpt) {
  std::size_t n = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.kind == TensorKind::kParameter) n += 2 * t.value->size();
  }
  return n;
}

std::size_t param_count(const std::string& checkpoint_path) { return param_count(load_checkpoint(checkpoint_path)); }

}  // namespace cospa
