#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "vnn/tape.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
};

/// Builds a scalar loss on the given tape from params. Must be deterministic.
using LossBuilder = std::function<Var(Tape&, ParameterSet&)>;

/// Compares reverse-mode gradients against central differences for every
/// element of every tensor in params that requires grad. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8). Parameter values are restored afterwards.
GradCheckResult finite_diff_check(ParameterSet& params, const LossBuilder& loss, Real step,
                                  const TapeOptions& options = {});

}  // namespace vnn
