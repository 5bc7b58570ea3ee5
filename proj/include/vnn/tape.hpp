#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "vnn/tensor.hpp"

namespace vnn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const Real> value() const;
  /// Gradient of the loss w.r.t. this value. Empty before backward or when the
  /// value does not depend on any trainable tensor.
  std::span<const Real> grad() const;
  /// Value of a single-element Var.
  Real item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeOptions {
  /// Test hook: name of one operation ("relu", "softmax", "layer_norm",
  /// "linear") whose adjoint is deliberately corrupted. Empty in real use.
  std::string broken_adjoint;
};

/// Records executed operations so that adjoints can be replayed in reverse.
///
/// Parameters bound with parameter() are referenced, not copied; backward()
/// accumulates into their grad buffers. A tape supports exactly one backward
/// pass.
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, std::span<const Real> upstream)>;

  explicit Tape(TapeOptions options = {});
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<Real> value);
  Var constant(const Tensor& tensor);
  /// References tensor without copying; tensor must outlive the tape.
  Var constant_view(const Tensor& tensor);
  /// References tensor; gradients flow into it when it requires grad.
  Var parameter(Tensor& tensor);

  void backward(Var loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  const TapeOptions& options() const { return options_; }
  bool adjoint_broken(std::string_view op) const { return options_.broken_adjoint == op; }

  // Interface for operation implementations.
  Var record(Shape shape, std::vector<Real> value, std::initializer_list<Var> inputs, Adjoint adjoint);
  Var record(Shape shape, std::vector<Real> value, std::span<const Var> inputs, Adjoint adjoint);
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  std::span<Real> grad_buffer(Var v);

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const Real> value(std::size_t id) const;
  std::span<const Real> grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<Real> owned;
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    std::vector<Real> grad;
    Adjoint adjoint;
  };

  void check_owner(Var v) const;

  TapeOptions options_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable operations. Vectors are rank-1, matrices rank-2 row-major,
// scalars have shape {1}.

/// W·x + b with x[m], W[k×m], b[k].
Var linear(Var x, Var weight, Var bias);
/// A·x with A[r×c], x[c].
Var matvec(Var matrix, Var x);
/// Aᵀ·y with A[r×c], y[r]; a weighted sum of the rows of A.
Var matvec_transposed(Var matrix, Var y);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
Var dot(Var a, Var b);
Var mean(std::span<const Var> scalars);
Var concat(std::span<const Var> vectors);
Var relu(Var x);
Var softmax(Var s);
/// Non-affine layer normalization with population variance.
Var layer_norm(Var v, Real eps);
/// -log softmax(logits)[label].
Var cross_entropy(Var logits, std::size_t label);
/// Columnwise maximum of a matrix; ties route the gradient to the first row.
Var column_max(Var matrix);
/// Sliding window of n consecutive rows of input[V×D], flattened and mapped
/// through kernel[D′×(n·D)] + bias[D′]. Yields V−n+1 rows, or V rows with
/// wraparound when circular.
Var window_conv(Var input, Var kernel, Var bias, std::size_t n, bool circular);

// Plain-value helpers shared by the tape ops and by callers that do not need
// gradients.
namespace math {

std::vector<Real> softmax(std::span<const Real> s);
Real log_sum_exp(std::span<const Real> s);
std::vector<Real> layer_norm(std::span<const Real> v, Real eps);
Real cross_entropy(std::span<const Real> logits, std::size_t label);

}  // namespace math

}  // namespace vnn
