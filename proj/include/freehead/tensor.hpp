#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace freehead {

using Index = std::int64_t;
using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
Index numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major (NCHW for images) array with value semantics.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(numel(shape_))) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(Array::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
  }
  Tensor(Shape shape, std::initializer_list<T> values) : shape_(std::move(shape)), data_(values.size()) {
    if (Index(values.size()) != numel(shape_)) throw ShapeError("initializer size does not match shape " + shape_str(shape_));
    Index i = 0;
    for (T v : values) data_[i++] = v;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, T(v)); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1));
  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi);

  const Shape& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : i); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  T& operator[](Index i) { return data_[i]; }
  const T& operator[](Index i) const { return data_[i]; }

  T& at(int n, int c, int h, int w) { return data_[((Index(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w]; }
  const T& at(int n, int c, int h, int w) const {
    return data_[((Index(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, data_.template cast<U>().eval());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Array data_;
};

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist{0.0, double(stddev)};
  for (Index i = 0; i < t.size(); ++i) t[i] = T(dist(rng));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist{double(lo), double(hi)};
  for (Index i = 0; i < t.size(); ++i) t[i] = T(dist(rng));
  return t;
}

}  // namespace freehead
