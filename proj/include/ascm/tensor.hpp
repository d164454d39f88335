#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ascm {

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor extents must be positive, got " + shape_to_string(shape));
    }
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

/// Dense row-major array. Feature maps use the channels x height x width layout.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Accessors for C x H x W maps.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  std::size_t plane() const { return static_cast<std::size_t>(dim(1)) * static_cast<std::size_t>(dim(2)); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  const Real& at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

  std::span<Real> channel(int c) { return {data_.data() + static_cast<std::size_t>(c) * plane(), plane()}; }
  std::span<const Real> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * plane(), plane()};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(x);
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  if (t.empty()) return {};
  std::vector<To> out(t.size());
  std::transform(t.values().begin(), t.values().end(), out.begin(), [](From v) { return static_cast<To>(v); });
  return Tensor<To>(t.shape(), std::move(out));
}

/// Throws std::invalid_argument unless `t` is a rank-3 map.
template <class Real>
void require_map(const Tensor<Real>& t, const char* what) {
  if (t.rank() != 3) {
    throw std::invalid_argument(std::string(what) + ": expected C x H x W tensor, got " +
                                shape_to_string(t.shape()));
  }
}

/// Throws std::domain_error naming `what` if any value is NaN or infinite.
template <class Real>
void require_finite(const Tensor<Real>& t, const char* what) {
  if (!t.all_finite()) throw std::domain_error(std::string(what) + ": non-finite value");
}

}  // namespace ascm
