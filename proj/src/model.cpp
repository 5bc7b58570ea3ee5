#include "vnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "vnn/errors.hpp"
#include "vnn/rng.hpp"

namespace vnn {

ViewMatrix::ViewMatrix(std::size_t views, std::size_t dim, std::vector<Real> values)
    : tensor_({views, dim}, std::move(values)) {}

std::string to_string(Aggregation a) { return a == Aggregation::attention ? "attention" : "max_pool"; }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "attention") return Aggregation::attention;
  if (s == "max_pool" || s == "maxpool") return Aggregation::max_pool;
  throw ConfigError("unknown aggregation '" + s + "' (expected attention or max_pool)");
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input dimension D must be positive");
  if (num_classes == 0) throw ConfigError("class count C must be positive");
  if (branches.empty()) throw ConfigError("at least one n-gram branch is required");
  for (const auto& b : branches) {
    if (b.n == 0) throw ConfigError("n-gram size must be at least 1");
    if (b.d_prime == 0) throw ConfigError("branch output dimension D' must be at least 1");
    if (aggregation == Aggregation::attention && b.d_prime < 2) {
      throw ConfigError("attention aggregation needs D' >= 2 for layer normalization");
    }
  }
  if (!(layer_norm_eps >= 0)) throw ConfigError("layer norm eps must be non-negative");
}

std::size_t ModelConfig::fused_dim() const {
  std::size_t total = 0;
  for (const auto& b : branches) total += b.d_prime;
  return total;
}

std::size_t ModelConfig::max_gram() const {
  std::size_t m = 0;
  for (const auto& b : branches) m = std::max(m, b.n);
  return m;
}

std::size_t learnable_scalar_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& b : config.branches) total += b.d_prime * b.n * config.input_dim + b.d_prime;
  total += kDescriptorDim * config.fused_dim() + kDescriptorDim;
  total += config.num_classes * kDescriptorDim + config.num_classes;
  return total;
}

ModelParameters zero_parameters(const ModelConfig& config, bool requires_grad) {
  config.validate();
  ModelParameters p;
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    const auto& b = config.branches[i];
    const std::string prefix = "branch" + std::to_string(i);
    p.tensors.add(prefix + ".kernel", Tensor::zeros({b.d_prime, b.n * config.input_dim}, requires_grad));
    p.tensors.add(prefix + ".bias", Tensor::zeros({b.d_prime}, requires_grad));
  }
  p.tensors.add("fc1.weight", Tensor::zeros({kDescriptorDim, config.fused_dim()}, requires_grad));
  p.tensors.add("fc1.bias", Tensor::zeros({kDescriptorDim}, requires_grad));
  p.tensors.add("fc2.weight", Tensor::zeros({config.num_classes, kDescriptorDim}, requires_grad));
  p.tensors.add("fc2.bias", Tensor::zeros({config.num_classes}, requires_grad));
  return p;
}

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ModelParameters p = zero_parameters(config, true);
  Rng rng(seed);
  for (auto& entry : p.tensors) {
    Tensor& t = entry.tensor;
    if (t.rank() != 2) continue;  // biases stay zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.extent(1)));
    for (Real& w : t.data()) w = static_cast<Real>(rng.uniform(-bound, bound));
  }
  return p;
}

namespace {

template <typename Bind>
BoundParameters bind_with(std::size_t branches, Bind&& bind) {
  BoundParameters b;
  for (std::size_t i = 0; i < branches; ++i) {
    b.kernels.push_back(bind(2 * i));
    b.biases.push_back(bind(2 * i + 1));
  }
  b.fc1_weight = bind(2 * branches);
  b.fc1_bias = bind(2 * branches + 1);
  b.fc2_weight = bind(2 * branches + 2);
  b.fc2_bias = bind(2 * branches + 3);
  return b;
}

std::size_t branch_count(const ParameterSet& tensors) {
  if (tensors.size() < 6 || tensors.size() % 2 != 0) {
    throw DimensionError("parameter set has an invalid tensor count " + std::to_string(tensors.size()));
  }
  return (tensors.size() - 4) / 2;
}

}  // namespace

BoundParameters bind_trainable(Tape& tape, ModelParameters& params) {
  return bind_with(branch_count(params.tensors), [&](std::size_t i) { return tape.parameter(params.tensors[i].tensor); });
}

BoundParameters bind_frozen(Tape& tape, const ModelParameters& params) {
  return bind_with(branch_count(params.tensors),
                   [&](std::size_t i) { return tape.constant_view(params.tensors[i].tensor); });
}

Var nglu_forward(Var views, const BranchConfig& branch, Var kernel, Var bias) {
  Var grams = window_conv(views, kernel, bias, branch.n, branch.circular);
  return branch.post_conv_activation ? relu(grams) : grams;
}

Var row_max_pool(Var grams) {
  if (grams.shape().size() != 2) {
    throw DimensionError("row_max_pool expects a matrix, got " + shape_string(grams.shape()));
  }
  return column_max(grams);
}

Var attention_scores(Var grams, Var pooled) {
  if (grams.shape().size() != 2 || pooled.shape().size() != 1 || grams.shape()[1] != pooled.shape()[0]) {
    throw DimensionError("attention_scores: grams " + shape_string(grams.shape()) + " vs pooled " +
                         shape_string(pooled.shape()));
  }
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(grams.shape()[1]));
  return softmax(scale(matvec(grams, pooled), inv_sqrt));
}

Var attention_aggregate(Var grams, Real eps) {
  Var pooled = row_max_pool(grams);
  Var beta = attention_scores(grams, pooled);
  Var attended = matvec_transposed(grams, beta);
  return layer_norm(add(attended, pooled), eps);
}

Var branch_forward(Var views, const BranchConfig& branch, Var kernel, Var bias, Aggregation aggregation, Real eps) {
  Var grams = nglu_forward(views, branch, kernel, bias);
  if (aggregation == Aggregation::max_pool) return row_max_pool(grams);
  return attention_aggregate(grams, eps);
}

ForwardResult multi_scale_forward(Var views, const ModelConfig& config, const BoundParameters& params) {
  if (config.branches.empty()) throw ConfigError("at least one n-gram branch is required");
  if (params.kernels.size() != config.branches.size()) {
    throw DimensionError("model has " + std::to_string(params.kernels.size()) + " branches, config has " +
                         std::to_string(config.branches.size()));
  }
  if (views.shape().size() != 2 || views.shape()[1] != config.input_dim) {
    throw DimensionError("view matrix " + shape_string(views.shape()) + " does not match model input dim " +
                         std::to_string(config.input_dim));
  }
  std::vector<Var> outputs;
  outputs.reserve(config.branches.size());
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    outputs.push_back(branch_forward(views, config.branches[i], params.kernels[i], params.biases[i],
                                     config.aggregation, config.layer_norm_eps));
  }
  Var fused = outputs.size() == 1 ? outputs.front() : concat(outputs);
  Var descriptor = relu(linear(fused, params.fc1_weight, params.fc1_bias));
  Var logits = linear(descriptor, params.fc2_weight, params.fc2_bias);
  return {logits, descriptor};
}

std::vector<Real> extract_descriptor(const Model& model, const ViewMatrix& views) {
  Tape tape;
  Var f = tape.constant_view(views.tensor());
  auto out = multi_scale_forward(f, model.config, bind_frozen(tape, model.params)).descriptor.value();
  return {out.begin(), out.end()};
}

std::vector<Real> predict_logits(const Model& model, const ViewMatrix& views) {
  Tape tape;
  Var f = tape.constant_view(views.tensor());
  auto out = multi_scale_forward(f, model.config, bind_frozen(tape, model.params)).logits.value();
  return {out.begin(), out.end()};
}

}  // namespace vnn
