#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vnn/tape.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

/// Length of the retrieval descriptor taken from the first head layer.
inline constexpr std::size_t kDescriptorDim = 512;
inline constexpr Real kLayerNormEps = Real(1e-5);

/// Per-shape view features F, one row per view in rendering order.
class ViewMatrix {
 public:
  ViewMatrix() = default;
  ViewMatrix(std::size_t views, std::size_t dim, std::vector<Real> values);

  std::size_t views() const { return tensor_.extent(0); }
  std::size_t dim() const { return tensor_.extent(1); }
  const Tensor& tensor() const { return tensor_; }
  std::span<const Real> row(std::size_t i) const { return tensor_.data().subspan(i * dim(), dim()); }
  std::span<const Real> values() const { return tensor_.data(); }

  bool operator==(const ViewMatrix& other) const { return tensor_ == other.tensor_; }

 private:
  Tensor tensor_;
};

struct BranchConfig {
  std::size_t n = 3;
  std::size_t d_prime = 512;
  bool circular = false;
  bool post_conv_activation = true;
};

enum class Aggregation {
  attention,  // max-pool proxy, scaled dot-product weights, residual, layer norm
  max_pool,   // g_p only
};

std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<BranchConfig> branches;
  Aggregation aggregation = Aggregation::attention;
  Real layer_norm_eps = kLayerNormEps;

  void validate() const;
  std::size_t fused_dim() const;
  std::size_t max_gram() const;
};

/// Learnable tensors in fixed order: for each branch b, "branch{b}.kernel"
/// [D′×(n·D)] and "branch{b}.bias" [D′]; then "fc1.weight" [512×ΣD′],
/// "fc1.bias" [512], "fc2.weight" [C×512], "fc2.bias" [C].
struct ModelParameters {
  ParameterSet tensors;

  Tensor& kernel(std::size_t branch) { return tensors[2 * branch].tensor; }
  Tensor& bias(std::size_t branch) { return tensors[2 * branch + 1].tensor; }
  const Tensor& kernel(std::size_t branch) const { return tensors[2 * branch].tensor; }
  const Tensor& bias(std::size_t branch) const { return tensors[2 * branch + 1].tensor; }

  bool operator==(const ModelParameters& o) const { return tensors == o.tensors; }
};

/// Learnable scalar count implied by config. Attention and layer norm add none.
std::size_t learnable_scalar_count(const ModelConfig& config);

/// Zero-filled parameters with the layout above.
ModelParameters zero_parameters(const ModelConfig& config, bool requires_grad = true);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from Rng(seed); biases zero.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Parameters bound to a tape, in layout order.
struct BoundParameters {
  std::vector<Var> kernels;
  std::vector<Var> biases;
  Var fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// Binds for training: gradients accumulate into the tensors.
BoundParameters bind_trainable(Tape& tape, ModelParameters& params);
/// Binds read-only for inference.
BoundParameters bind_frozen(Tape& tape, const ModelParameters& params);

// Building blocks. All accept values on the same tape.

/// n-gram learning unit: window convolution followed by optional ReLU.
Var nglu_forward(Var views, const BranchConfig& branch, Var kernel, Var bias);
Var row_max_pool(Var grams);
/// softmax over rows of (G_j · g_p) / sqrt(D′).
Var attention_scores(Var grams, Var pooled);
/// layer_norm(Σ_j β_j G_j + g_p). No learnable parameters.
Var attention_aggregate(Var grams, Real eps = kLayerNormEps);
Var branch_forward(Var views, const BranchConfig& branch, Var kernel, Var bias, Aggregation aggregation,
                   Real eps = kLayerNormEps);

struct ForwardResult {
  Var logits;
  Var descriptor;
};

/// Runs every branch, concatenates, fc1 + ReLU (descriptor), fc2 (logits).
ForwardResult multi_scale_forward(Var views, const ModelConfig& config, const BoundParameters& params);

struct Model {
  ModelConfig config;
  ModelParameters params;
};

/// Penultimate-layer descriptor (post-ReLU fc1 output).
std::vector<Real> extract_descriptor(const Model& model, const ViewMatrix& views);
std::vector<Real> predict_logits(const Model& model, const ViewMatrix& views);

}  // namespace vnn
