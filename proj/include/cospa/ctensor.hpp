#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cospa {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;
/// Element storage aligned to the widest SIMD packet, so Eigen kernels see the
/// same alignment on every allocation and results are bitwise reproducible.
using CBuffer = std::vector<cplx, Eigen::aligned_allocator<cplx>>;

using CMatrix = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMatMap = Eigen::Map<CMatrix>;
using ConstCMatMap = Eigen::Map<const CMatrix>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense complex tensor with an optional gradient slot.
///
/// Storage is row-major. Most of the network treats a tensor as a matrix of
/// `rows() x cols()`, where `cols()` is the last dimension and `rows()` the
/// product of all leading dimensions.
class CTensor {
 public:
  CTensor() = default;
  explicit CTensor(Shape shape);
  CTensor(Shape shape, std::vector<cplx> data);

  static CTensor scalar(cplx v) { return CTensor({1}, {v}); }
  static CTensor from_real(Shape shape, std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<cplx> data() noexcept { return data_; }
  std::span<const cplx> data() const noexcept { return data_; }
  cplx& operator[](std::size_t i) { return data_[i]; }
  const cplx& operator[](std::size_t i) const { return data_[i]; }
  cplx& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const cplx& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  cplx item() const;

  CMatMap mat() { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
  ConstCMatMap mat() const { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }

  /// Changes the shape without touching data; the element count must match.
  void reshape(Shape shape);

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<cplx> grad() noexcept { return grad_; }
  std::span<const cplx> grad() const noexcept { return grad_; }
  /// Allocates a zero gradient if none is present and returns it.
  std::span<cplx> ensure_grad();
  CMatMap grad_mat();
  void accumulate_grad(std::span<const cplx> g);
  void clear_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  CBuffer data_;
  CBuffer grad_;
  bool requires_grad_ = false;
};

using Var = std::shared_ptr<CTensor>;

Var make_var(CTensor value, bool requires_grad = false);

/// Records differentiable operations in creation order.
///
/// Every op appends one node whose inputs were created earlier, so the node
/// list is already topologically sorted. A tape belongs to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(CTensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// With recording disabled, ops only compute values (inference mode).
  void set_recording(bool on) noexcept { recording_ = on; }
  bool recording() const noexcept { return recording_; }

  /// Wraps `value` as the output of an op over `inputs`. The backward rule is
  /// kept only when recording is on and some input requires a gradient.
  Var record(CTensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(CTensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Seeds `loss` (a real scalar) and propagates the conjugate cogradient
  /// dL/dw* into every reachable tensor that requires a gradient.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Var> inputs;
    Var output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

/// Compares tape gradients against central differences taken separately on
/// the real and imaginary part of every parameter entry.
///
/// Returns the largest per-tensor relative error
/// ||g_tape - g_fd|| / max(||g_fd||, 1e-12).
double finite_diff_check(const std::function<Var(Tape&)>& f, const std::vector<Var>& params,
                         double h = 1e-5);

// Adam ------------------------------------------------------------------------

struct AdamState {
  // Per parameter; real and imaginary parts carry independent moments, so the
  // second moment stores (v_re, v_im) in one complex slot.
  std::vector<std::vector<cplx>> first_moment;
  std::vector<std::vector<cplx>> second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update over `params`; clears their gradients afterwards.
void adam_step(const std::vector<Var>& params, AdamState& state);

/// Scales all gradients so their joint L2 norm (over real components) is at
/// most `max_norm`. Returns the norm before scaling.
double clip_grad_norm(const std::vector<Var>& params, double max_norm);

// Parameters and checkpoints --------------------------------------------------

enum class TensorKind : std::uint32_t { kParameter = 0, kBuffer = 1, kOptimizer = 2 };

struct NamedTensor {
  std::string name;
  TensorKind kind = TensorKind::kParameter;
  Var value;
};

/// Ordered registry of named tensors owned by a model.
class ParameterSet {
 public:
  void add(std::string name, Var value, TensorKind kind = TensorKind::kParameter);
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::vector<Var> trainable() const;
  Var find(const std::string& name) const;
  std::size_t real_dof() const;

 private:
  std::vector<NamedTensor> entries_;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;
  std::string header;  // free-form, usually JSON model config
  std::vector<NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Real degrees of freedom of the free parameters (2 per complex entry).
std::size_t param_count(const Checkpoint& ckpt);
std::size_t param_count(const std::string& checkpoint_path);

}  // namespace cospa
