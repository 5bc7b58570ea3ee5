#include "vnn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "vnn/errors.hpp"

namespace vnn {

OptimizerState make_optimizer(const ParameterSet& params, Real learning_rate, Real momentum, Real weight_decay,
                              Real clip_bound) {
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (!(clip_bound > 0)) throw ConfigError("clip bound must be positive");
  OptimizerState state{learning_rate, momentum, weight_decay, clip_bound, {}};
  state.velocity.reserve(params.size());
  for (const auto& p : params) state.velocity.push_back(Tensor::zeros(p.tensor.shape()));
  return state;
}

void clip_values(std::span<Real> values, Real bound) {
  if (!(bound > 0)) throw DomainError("clip bound must be positive");
  for (Real& x : values) x = std::clamp(x, -bound, bound);
}

void clip_gradients(ParameterSet& params, Real bound) {
  for (auto& p : params) clip_values(p.tensor.grad(), bound);
}

void sgd_step(ParameterSet& params, OptimizerState& state) {
  if (state.velocity.size() != params.size()) {
    throw DimensionError("optimizer tracks " + std::to_string(state.velocity.size()) + " tensors but model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i].tensor;
    Tensor& vel = state.velocity[i];
    if (vel.shape() != theta.shape() || theta.grad().size() != theta.size()) {
      throw DimensionError("parameter '" + params[i].name + "' " + shape_string(theta.shape()) +
                           " does not match its velocity " + shape_string(vel.shape()) + " or gradient");
    }
    auto w = theta.data();
    auto g = theta.grad();
    auto v = vel.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const Real decayed = g[k] + state.weight_decay * w[k];
      v[k] = state.momentum * v[k] + decayed;
      w[k] -= state.learning_rate * v[k];
    }
  }
}

}  // namespace vnn
