#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "asldn/error.hpp"

namespace asldn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array, last dimension fastest. The shape is fixed at
// construction; element values stay writable so kernels can fill outputs in
// place.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    require(data_.size() == element_count(shape_), ErrorCode::ShapeMismatch,
            "buffer of " + std::to_string(data_.size()) + " values for shape " +
                shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  Tensor reshape(Shape shape) const& {
    require(element_count(shape) == size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  Tensor reshape(Shape shape) && {
    require(element_count(shape) == size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), std::move(data_));
  }

  template <typename Fn>
  Tensor map(Fn&& fn) const {
    Tensor out(shape_);
    std::transform(data_.begin(), data_.end(), out.data_.begin(), std::forward<Fn>(fn));
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (auto d : shape)
      require(d > 0, ErrorCode::InvalidArgument, "zero dimension in shape " + shape_string(shape));
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    require(index.size() == shape_.size(), ErrorCode::ShapeMismatch,
            "index rank " + std::to_string(index.size()) + " for shape " + shape_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      require(i < shape_[axis], ErrorCode::InvalidArgument, "index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  std::transform(t.values().begin(), t.values().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor<To>(t.shape(), std::move(out));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>* const> items) {
  require(!items.empty(), ErrorCode::InvalidArgument, "stack of zero tensors");
  Shape shape = items.front()->shape();
  std::vector<T> data;
  data.reserve(items.size() * items.front()->size());
  for (const auto* t : items) {
    require(t->shape() == shape, ErrorCode::ShapeMismatch, "stack: differing shapes");
    data.insert(data.end(), t->values().begin(), t->values().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

// Slice `index` of the leading axis.
template <typename T>
Tensor<T> slice_leading(const Tensor<T>& t, std::size_t index) {
  require(t.rank() >= 2 && index < t.dim(0), ErrorCode::InvalidArgument, "slice_leading");
  Shape shape(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = element_count(shape);
  std::vector<T> data(t.values().begin() + static_cast<std::ptrdiff_t>(index * n),
                      t.values().begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace asldn
