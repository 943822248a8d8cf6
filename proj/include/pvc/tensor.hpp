#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pvc {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operands disagree on shape or a dimension is invalid.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major strides for `shape` (last stride is 1).
Shape row_major_strides(const Shape& shape);

/// Dense row-major tensor owning its storage.
///
/// A default-constructed tensor is empty with shape {0}. Every other
/// constructor rejects zero-sized dimensions so that a tensor of
/// nonzero rank always holds at least one element.
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_nonzero();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_nonzero();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    if (rows.size() == 0) throw ShapeError("from_rows needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<T> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
      if (row.size() != cols) throw ShapeError("ragged rows in from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  Shape strides() const { return row_major_strides(shape_); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  std::size_t flat_index(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) +
                       " does not match tensor rank " + std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
      if (index[axis] >= shape_[axis]) {
        throw std::out_of_range("index " + std::to_string(index[axis]) + " out of range for axis " +
                                std::to_string(axis) + " of size " + std::to_string(shape_[axis]));
      }
      flat = flat * shape_[axis] + index[axis];
    }
    return flat;
  }

  Shape unflatten(std::size_t flat) const {
    if (flat >= data_.size()) throw std::out_of_range("flat index out of range");
    Shape index(shape_.size());
    for (std::size_t axis = shape_.size(); axis-- > 0;) {
      index[axis] = flat % shape_[axis];
      flat /= shape_[axis];
    }
    return index;
  }

  T& at(std::initializer_list<std::size_t> index) {
    return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
  }
  const T& at(std::initializer_list<std::size_t> index) const {
    return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
  }

  /// Same storage viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                       shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    if (data_.empty()) return Tensor<U>();
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  void check_nonzero() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Elementwise and linear-algebra primitives. All reductions accumulate
// sequentially in ascending flat-index order.

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> elementwise_sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// a += factor * b, the only in-place mutation (used by optimizers and
/// gradient accumulation).
template <typename T>
void axpy_inplace(Tensor<T>& a, const Tensor<T>& b, T factor = T{1});

template <typename T>
T sum(const Tensor<T>& a);

/// Σ a[i]·b[i] accumulated in double.
template <typename T>
double inner_product(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

template <typename T>
struct MaxReduction {
  Tensor<T> values;
  std::vector<std::size_t> argmax;
};

/// Column-wise max over the rows of an n×c tensor; ties resolve to the
/// lowest row index.
template <typename T>
MaxReduction<T> reduce_max_over_points(const Tensor<T>& x);

/// Routes each output cotangent to its argmax row; everything else is zero.
template <typename T>
Tensor<T> reduce_max_backward(const Tensor<T>& grad_values, std::span<const std::size_t> argmax,
                              std::size_t rows);

/// Concatenate 2-D tensors with equal row count along the column axis.
template <typename T>
Tensor<T> concat_columns(const std::vector<const Tensor<T>*>& parts);

/// Inverse of concat_columns: split columns by widths.
template <typename T>
std::vector<Tensor<T>> split_columns(const Tensor<T>& x, std::span<const std::size_t> widths);

template <typename T>
bool all_finite(const Tensor<T>& x);

}  // namespace pvc
