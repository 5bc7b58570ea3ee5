#include "vnn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "vnn/errors.hpp"

namespace vnn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), Real(0));
  } else {
    grad_.clear();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), Real(0)); }

Tensor& ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
  }
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

Tensor& ParameterSet::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw IndexError("no parameter named '" + name + "'");
}

const Tensor& ParameterSet::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!(entries_[i].tensor == other.entries_[i].tensor)) return false;
  }
  return true;
}

}  // namespace vnn
