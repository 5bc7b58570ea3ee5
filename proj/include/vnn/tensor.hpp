#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vnn {

#ifdef VNN_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. When requires_grad is set, grad() holds a buffer of
/// the same shape that backward passes accumulate into.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  std::span<Real> grad() { return grad_; }
  std::span<const Real> grad() const { return grad_; }
  void zero_grad();

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
  bool requires_grad_ = false;
  std::vector<Real> grad_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered collection of named tensors. Order is stable and is the order used
/// for serialization, optimizer state and gradient checks.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor tensor);

  std::size_t size() const { return entries_.size(); }
  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const;
  void zero_grad();

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace vnn
