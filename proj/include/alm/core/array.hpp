#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "alm/core/errors.hpp"

namespace alm::core {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. `T` is float for training and inference; double is
/// used by the gradient checks.
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Array(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
  }

  static Array scalar(T v) { return Array(Shape{}, std::vector<T>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  /// Trailing dimension; a rank-0 array is treated as 1x1.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  /// Product of all leading dimensions.
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape));
    return data[0];
  }

  T* row(std::size_t r) { return data.data() + r * cols(); }
  const T* row(std::size_t r) const { return data.data() + r * cols(); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out(shape);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

}  // namespace alm::core
