#include "vnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vnn/errors.hpp"

namespace vnn {
namespace {

Real evaluate(ParameterSet& params, const LossBuilder& loss, const TapeOptions& options) {
  Tape tape(options);
  const Real value = loss(tape, params).item();
  if (!std::isfinite(value)) throw NumericError("loss is not finite during gradient check");
  return value;
}

}  // namespace

GradCheckResult finite_diff_check(ParameterSet& params, const LossBuilder& loss, Real step,
                                  const TapeOptions& options) {
  if (!(step > 0)) throw DomainError("finite-difference step must be positive");
  params.zero_grad();
  {
    Tape tape(options);
    Var l = loss(tape, params);
    if (!std::isfinite(l.item())) throw NumericError("loss is not finite during gradient check");
    tape.backward(l);
  }

  GradCheckResult result;
  for (auto& entry : params) {
    Tensor& t = entry.tensor;
    if (!t.requires_grad()) continue;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Real original = t[i];
      t[i] = original + step;
      const Real plus = evaluate(params, loss, options);
      t[i] = original - step;
      const Real minus = evaluate(params, loss, options);
      t[i] = original;

      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * step);
      const double analytic = t.grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.elements_checked;
      if (rel > result.max_relative_error || result.worst_parameter.empty()) {
        if (rel >= result.max_relative_error) {
          result.max_relative_error = rel;
          result.worst_parameter = entry.name;
          result.worst_index = i;
          result.worst_analytic = analytic;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace vnn
