#pragma once

#include <span>
#include <vector>

#include "vnn/tensor.hpp"

namespace vnn {

/// SGD with momentum and L2 weight decay.
///
/// Per element, with gradient g already clipped:
///   g' = g + weight_decay * theta
///   v  = momentum * v + g'
///   theta -= learning_rate * v
struct OptimizerState {
  Real learning_rate = Real(0.001);
  Real momentum = Real(0.9);
  Real weight_decay = Real(0.0001);
  Real clip_bound = Real(0.01);
  std::vector<Tensor> velocity;
};

/// Zero velocities shaped like params.
OptimizerState make_optimizer(const ParameterSet& params, Real learning_rate, Real momentum, Real weight_decay,
                              Real clip_bound);

/// Elementwise clamp into [-bound, bound].
void clip_values(std::span<Real> values, Real bound);
void clip_gradients(ParameterSet& params, Real bound);

void sgd_step(ParameterSet& params, OptimizerState& state);

}  // namespace vnn
