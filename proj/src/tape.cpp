#include "vnn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vnn/errors.hpp"

namespace vnn {

const Shape& Var::shape() const { return tape_->shape(id_); }
std::size_t Var::size() const { return shape_size(shape()); }
std::span<const Real> Var::value() const { return tape_->value(id_); }
std::span<const Real> Var::grad() const { return tape_->grad(id_); }

Real Var::item() const {
  auto v = value();
  if (v.size() != 1) throw DimensionError("item() on non-scalar of shape " + shape_string(shape()));
  return v[0];
}

Tape::Tape(TapeOptions options) : options_(std::move(options)) {}

Var Tape::constant(Shape shape, std::vector<Real> value) {
  Tensor checked(std::move(shape), std::move(value));
  return constant(checked);
}

Var Tape::constant(const Tensor& tensor) {
  Node node;
  node.shape = tensor.shape();
  node.owned.assign(tensor.data().begin(), tensor.data().end());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_view(const Tensor& tensor) {
  Node node;
  node.shape = tensor.shape();
  node.external = &tensor;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& tensor) {
  Node node;
  node.shape = tensor.shape();
  node.external = &tensor;
  if (tensor.requires_grad()) {
    node.sink = &tensor;
    node.needs_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Shape shape, std::vector<Real> value, std::initializer_list<Var> inputs,
                 Adjoint adjoint) {
  return record(std::move(shape), std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(adjoint));
}

Var Tape::record(Shape shape, std::vector<Real> value, std::span<const Var> inputs, Adjoint adjoint) {
  if (consumed_) throw StateError("cannot record on a tape after backward");
  Node node;
  node.shape = std::move(shape);
  node.owned = std::move(value);
  for (const Var& in : inputs) {
    check_owner(in);
    node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (node.needs_grad) node.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<const Real> Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.external) return n.external->data();
  return n.owned;
}

std::span<Real> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad.assign(shape_size(n.shape), Real(0));
  return n.grad;
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this) throw StateError("variable belongs to a different tape");
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (consumed_) throw StateError("tape already consumed by a previous backward pass");
  if (loss.size() != 1) {
    throw DomainError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_buffer(loss)[0] = Real(1);
  for (std::size_t id = nodes_.size(); id-- > 0;) {
    Node& n = nodes_[id];
    if (n.adjoint && !n.grad.empty()) n.adjoint(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.sink) continue;
    auto dst = n.sink->grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  }
}

namespace {

void require_rank(Var v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(v.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Multiplier applied to an adjoint when the test hook marks it broken.
Real fault(const Tape& tape, std::string_view op) {
  return tape.adjoint_broken(op) ? Real(1.5) : Real(1);
}

}  // namespace

Var linear(Var x, Var weight, Var bias) {
  require_rank(x, 1, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t k = weight.shape()[0];
  const std::size_t m = weight.shape()[1];
  if (x.shape()[0] != m || bias.shape()[0] != k) {
    throw DimensionError("linear: weight " + shape_string(weight.shape()) + " does not conform to input " +
                         shape_string(x.shape()) + " and bias " + shape_string(bias.shape()));
  }
  auto xv = x.value();
  auto wv = weight.value();
  auto bv = bias.value();
  std::vector<Real> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Real* row = wv.data() + i * m;
    Real acc = bv[i];
    for (std::size_t j = 0; j < m; ++j) acc += row[j] * xv[j];
    out[i] = acc;
  }
  Tape& tape = x.tape();
  return tape.record({k}, std::move(out), {x, weight, bias}, [x, weight, bias, k, m](Tape& t, std::span<const Real> g) {
    const Real f = fault(t, "linear");
    auto xv = x.value();
    auto wv = weight.value();
    if (t.needs_grad(weight)) {
      auto gw = t.grad_buffer(weight);
      for (std::size_t i = 0; i < k; ++i) {
        const Real gi = f * g[i];
        if (gi == Real(0)) continue;
        Real* row = gw.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] += gi * xv[j];
      }
    }
    if (t.needs_grad(bias)) {
      auto gb = t.grad_buffer(bias);
      for (std::size_t i = 0; i < k; ++i) gb[i] += f * g[i];
    }
    if (t.needs_grad(x)) {
      auto gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < k; ++i) {
        const Real gi = f * g[i];
        if (gi == Real(0)) continue;
        const Real* row = wv.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) gx[j] += gi * row[j];
      }
    }
  });
}

Var matvec(Var matrix, Var x) {
  require_rank(matrix, 2, "matvec");
  require_rank(x, 1, "matvec");
  const std::size_t r = matrix.shape()[0];
  const std::size_t c = matrix.shape()[1];
  if (x.shape()[0] != c) {
    throw DimensionError("matvec: matrix " + shape_string(matrix.shape()) + " vs vector " + shape_string(x.shape()));
  }
  auto av = matrix.value();
  auto xv = x.value();
  std::vector<Real> out(r, Real(0));
  for (std::size_t i = 0; i < r; ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j] * xv[j];
    out[i] = acc;
  }
  return x.tape().record({r}, std::move(out), {matrix, x}, [matrix, x, r, c](Tape& t, std::span<const Real> g) {
    if (t.needs_grad(matrix)) {
      auto ga = t.grad_buffer(matrix);
      auto xv = x.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * xv[j];
    }
    if (t.needs_grad(x)) {
      auto gx = t.grad_buffer(x);
      auto av = matrix.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[j] += g[i] * av[i * c + j];
    }
  });
}

Var matvec_transposed(Var matrix, Var y) {
  require_rank(matrix, 2, "matvec_transposed");
  require_rank(y, 1, "matvec_transposed");
  const std::size_t r = matrix.shape()[0];
  const std::size_t c = matrix.shape()[1];
  if (y.shape()[0] != r) {
    throw DimensionError("matvec_transposed: matrix " + shape_string(matrix.shape()) + " vs vector " +
                         shape_string(y.shape()));
  }
  auto av = matrix.value();
  auto yv = y.value();
  std::vector<Real> out(c, Real(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += yv[i] * av[i * c + j];
  return y.tape().record({c}, std::move(out), {matrix, y}, [matrix, y, r, c](Tape& t, std::span<const Real> g) {
    if (t.needs_grad(matrix)) {
      auto ga = t.grad_buffer(matrix);
      auto yv = y.value();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += yv[i] * g[j];
    }
    if (t.needs_grad(y)) {
      auto gy = t.grad_buffer(y);
      auto av = matrix.value();
      for (std::size_t i = 0; i < r; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j] * g[j];
        gy[i] += acc;
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  auto av = a.value();
  auto bv = b.value();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(a.shape(), std::move(out), {a, b}, [a, b](Tape& t, std::span<const Real> g) {
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  auto av = a.value();
  auto bv = b.value();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(a.shape(), std::move(out), {a, b}, [a, b](Tape& t, std::span<const Real> g) {
    auto av = a.value();
    auto bv = b.value();
    if (t.needs_grad(a)) {
      auto ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, Real factor) {
  auto av = a.value();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape().record(a.shape(), std::move(out), {a}, [a, factor](Tape& t, std::span<const Real> g) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var dot(Var a, Var b) {
  require_same_shape(a, b, "dot");
  auto av = a.value();
  auto bv = b.value();
  Real acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return a.tape().record({1}, {acc}, {a, b}, [a, b](Tape& t, std::span<const Real> g) {
    auto av = a.value();
    auto bv = b.value();
    if (t.needs_grad(a)) {
      auto ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * av[i];
    }
  });
}

Var mean(std::span<const Var> scalars) {
  if (scalars.empty()) throw DomainError("mean of an empty set");
  Real acc = 0;
  for (const Var& s : scalars) acc += s.item();
  const Real inv = Real(1) / static_cast<Real>(scalars.size());
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  Tape& tape = scalars.front().tape();
  return tape.record({1}, {acc * inv}, inputs, [inputs, inv](Tape& t, std::span<const Real> g) {
    for (const Var& s : inputs) {
      if (t.needs_grad(s)) t.grad_buffer(s)[0] += g[0] * inv;
    }
  });
}

Var concat(std::span<const Var> vectors) {
  if (vectors.empty()) throw DomainError("concat of an empty set");
  std::vector<Real> out;
  for (const Var& v : vectors) {
    require_rank(v, 1, "concat");
    auto vv = v.value();
    out.insert(out.end(), vv.begin(), vv.end());
  }
  const std::size_t total = out.size();
  std::vector<Var> inputs(vectors.begin(), vectors.end());
  return inputs.front().tape().record({total}, std::move(out), inputs, [inputs](Tape& t, std::span<const Real> g) {
    std::size_t offset = 0;
    for (const Var& v : inputs) {
      const std::size_t n = v.size();
      if (t.needs_grad(v)) {
        auto gv = t.grad_buffer(v);
        for (std::size_t i = 0; i < n; ++i) gv[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var relu(Var x) {
  auto xv = x.value();
  std::vector<Real> out(xv.size());
  // NaN passes through so a poisoned input still surfaces as a non-finite loss.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xv[i] > Real(0) || std::isnan(xv[i])) ? xv[i] : Real(0);
  return x.tape().record(x.shape(), std::move(out), {x}, [x](Tape& t, std::span<const Real> g) {
    const bool broken = t.adjoint_broken("relu");
    auto xv = x.value();
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Zero gradient at exactly 0.
      if (xv[i] > Real(0) || broken) gx[i] += g[i];
    }
  });
}

Var softmax(Var s) {
  require_rank(s, 1, "softmax");
  std::vector<Real> out = math::softmax(s.value());
  std::vector<Real> saved = out;
  return s.tape().record(s.shape(), std::move(out), {s}, [s, y = std::move(saved)](Tape& t, std::span<const Real> g) {
    const Real f = fault(t, "softmax");
    Real inner = 0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += g[i] * y[i];
    auto gs = t.grad_buffer(s);
    for (std::size_t i = 0; i < y.size(); ++i) gs[i] += f * y[i] * (g[i] - inner);
  });
}

Var layer_norm(Var v, Real eps) {
  require_rank(v, 1, "layer_norm");
  auto vv = v.value();
  const std::size_t m = vv.size();
  if (m < 2) throw DomainError("layer_norm needs at least 2 elements, got " + std::to_string(m));
  Real mu = 0;
  for (Real x : vv) mu += x;
  mu /= static_cast<Real>(m);
  Real var = 0;
  for (Real x : vv) var += (x - mu) * (x - mu);
  var /= static_cast<Real>(m);
  const Real sigma = std::sqrt(var + eps);
  std::vector<Real> out(m, Real(0));
  if (sigma > Real(0)) {
    for (std::size_t i = 0; i < m; ++i) out[i] = (vv[i] - mu) / sigma;
  } else if (std::isnan(sigma)) {
    std::fill(out.begin(), out.end(), std::numeric_limits<Real>::quiet_NaN());
  }
  std::vector<Real> saved = out;
  return v.tape().record(v.shape(), std::move(out), {v}, [v, y = std::move(saved), sigma](Tape& t, std::span<const Real> g) {
    if (!(sigma > Real(0))) return;
    const Real f = fault(t, "layer_norm");
    const auto m = static_cast<Real>(y.size());
    Real mean_g = 0;
    Real mean_gy = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mean_g += g[i];
      mean_gy += g[i] * y[i];
    }
    mean_g /= m;
    mean_gy /= m;
    auto gv = t.grad_buffer(v);
    for (std::size_t i = 0; i < y.size(); ++i) gv[i] += f * (g[i] - mean_g - y[i] * mean_gy) / sigma;
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  require_rank(logits, 1, "cross_entropy");
  const Real loss = math::cross_entropy(logits.value(), label);
  std::vector<Real> probs = math::softmax(logits.value());
  return logits.tape().record({1}, {loss}, {logits}, [logits, label, p = std::move(probs)](Tape& t, std::span<const Real> g) {
    auto gl = t.grad_buffer(logits);
    for (std::size_t i = 0; i < p.size(); ++i) {
      gl[i] += g[0] * (p[i] - (i == label ? Real(1) : Real(0)));
    }
  });
}

Var column_max(Var matrix) {
  require_rank(matrix, 2, "column_max");
  const std::size_t r = matrix.shape()[0];
  const std::size_t c = matrix.shape()[1];
  auto av = matrix.value();
  std::vector<Real> out(c);
  std::vector<std::size_t> argmax(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    Real best = av[j];
    for (std::size_t i = 1; i < r; ++i) {
      if (av[i * c + j] > best || std::isnan(av[i * c + j])) {
        best = av[i * c + j];
        argmax[j] = i;
      }
    }
    out[j] = best;
  }
  return matrix.tape().record({c}, std::move(out), {matrix}, [matrix, c, idx = std::move(argmax)](Tape& t, std::span<const Real> g) {
    auto ga = t.grad_buffer(matrix);
    for (std::size_t j = 0; j < c; ++j) ga[idx[j] * c + j] += g[j];
  });
}

Var window_conv(Var input, Var kernel, Var bias, std::size_t n, bool circular) {
  require_rank(input, 2, "window_conv");
  require_rank(kernel, 2, "window_conv");
  require_rank(bias, 1, "window_conv");
  const std::size_t views = input.shape()[0];
  const std::size_t dim = input.shape()[1];
  const std::size_t out_dim = kernel.shape()[0];
  const std::size_t window = n * dim;
  if (n == 0) throw ConfigError("n-gram size must be at least 1");
  if (kernel.shape()[1] != window || bias.shape()[0] != out_dim) {
    throw DimensionError("window_conv: kernel " + shape_string(kernel.shape()) + " and bias " +
                         shape_string(bias.shape()) + " do not match n=" + std::to_string(n) +
                         " over input " + shape_string(input.shape()));
  }
  if (!circular && views < n) {
    throw ConfigError("view count |V|=" + std::to_string(views) + " is smaller than n-gram size n=" +
                      std::to_string(n));
  }
  const std::size_t rows = circular ? views : views - n + 1;
  auto fv = input.value();
  auto kv = kernel.value();
  auto bv = bias.value();

  auto gather = [fv, views, dim, n](std::size_t j, std::vector<Real>& w) {
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t row = (j + s) % views;
      std::copy_n(fv.data() + row * dim, dim, w.data() + s * dim);
    }
  };

  std::vector<Real> out(rows * out_dim);
  std::vector<Real> w(window);
  for (std::size_t j = 0; j < rows; ++j) {
    gather(j, w);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const Real* krow = kv.data() + o * window;
      Real acc = bv[o];
      for (std::size_t k = 0; k < window; ++k) acc += krow[k] * w[k];
      out[j * out_dim + o] = acc;
    }
  }

  return input.tape().record(
      {rows, out_dim}, std::move(out), {input, kernel, bias},
      [input, kernel, bias, n, rows, views, dim, out_dim, window](Tape& t, std::span<const Real> g) {
        auto fv = input.value();
        auto kv = kernel.value();
        std::vector<Real> w(window);
        const bool want_k = t.needs_grad(kernel);
        const bool want_b = t.needs_grad(bias);
        const bool want_x = t.needs_grad(input);
        std::span<Real> gk = want_k ? t.grad_buffer(kernel) : std::span<Real>();
        std::span<Real> gb = want_b ? t.grad_buffer(bias) : std::span<Real>();
        std::span<Real> gx = want_x ? t.grad_buffer(input) : std::span<Real>();
        for (std::size_t j = 0; j < rows; ++j) {
          const Real* gj = g.data() + j * out_dim;
          if (want_k) {
            for (std::size_t s = 0; s < n; ++s) {
              const std::size_t row = (j + s) % views;
              std::copy_n(fv.data() + row * dim, dim, w.data() + s * dim);
            }
          }
          for (std::size_t o = 0; o < out_dim; ++o) {
            const Real go = gj[o];
            if (go == Real(0)) continue;
            if (want_b) gb[o] += go;
            const Real* krow = kv.data() + o * window;
            if (want_k) {
              Real* gkrow = gk.data() + o * window;
              for (std::size_t k = 0; k < window; ++k) gkrow[k] += go * w[k];
            }
            if (want_x) {
              for (std::size_t s = 0; s < n; ++s) {
                Real* dst = gx.data() + ((j + s) % views) * dim;
                const Real* src = krow + s * dim;
                for (std::size_t d = 0; d < dim; ++d) dst[d] += go * src[d];
              }
            }
          }
        }
      });
}

namespace math {

Real log_sum_exp(std::span<const Real> s) {
  if (s.empty()) throw DomainError("log_sum_exp of an empty vector");
  const Real hi = *std::max_element(s.begin(), s.end());
  Real acc = 0;
  for (Real x : s) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

std::vector<Real> softmax(std::span<const Real> s) {
  if (s.empty()) throw DomainError("softmax of an empty vector");
  const Real hi = *std::max_element(s.begin(), s.end());
  std::vector<Real> out(s.size());
  Real total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s[i] - hi);
    total += out[i];
  }
  for (Real& x : out) x /= total;
  return out;
}

std::vector<Real> layer_norm(std::span<const Real> v, Real eps) {
  if (v.size() < 2) throw DomainError("layer_norm needs at least 2 elements, got " + std::to_string(v.size()));
  Tape tape;
  Var x = tape.constant({v.size()}, std::vector<Real>(v.begin(), v.end()));
  auto y = vnn::layer_norm(x, eps).value();
  return {y.begin(), y.end()};
}

Real cross_entropy(std::span<const Real> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  const Real hi = *std::max_element(logits.begin(), logits.end());
  Real acc = 0;
  for (Real x : logits) acc += std::exp(x - hi);
  return (hi - logits[label]) + std::log(acc);
}

}  // namespace math

}  // namespace vnn
