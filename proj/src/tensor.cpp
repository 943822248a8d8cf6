#include "pvc/tensor.hpp"

#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace pvc {

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t axis = shape.size(); axis-- > 1;) {
    strides[axis - 1] = strides[axis] * shape[axis];
  }
  return strides;
}

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> elementwise_sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
void axpy_inplace(Tensor<T>& a, const Tensor<T>& b, T factor) {
  require_same_shape(a, b, "axpy_inplace");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

template <typename T>
T sum(const Tensor<T>& a) {
  T total{0};
  for (T v : a.data()) total += v;
  return total;
}

template <typename T>
double inner_product(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "inner_product");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return total;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects 2-D operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ, {} vs {}", shape_to_string(a.shape()),
                                 shape_to_string(b.shape())));
  }
  Tensor<T> out({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  // i-l-j order: each out[i,j] still sums over l in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* row = po + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const T av = pa[i * k + l];
      const T* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d expects a 2-D tensor");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

template <typename T>
MaxReduction<T> reduce_max_over_points(const Tensor<T>& x) {
  if (x.rank() != 2 || x.empty()) throw ShapeError("reduce_max_over_points expects a nonempty n x c tensor");
  const std::size_t n = x.dim(0), c = x.dim(1);
  MaxReduction<T> out{Tensor<T>({c}), std::vector<std::size_t>(c, 0)};
  for (std::size_t j = 0; j < c; ++j) out.values[j] = x[j];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const T v = x[i * c + j];
      if (v > out.values[j]) {
        out.values[j] = v;
        out.argmax[j] = i;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_max_backward(const Tensor<T>& grad_values, std::span<const std::size_t> argmax,
                              std::size_t rows) {
  const std::size_t c = grad_values.size();
  if (argmax.size() != c) throw ShapeError("reduce_max_backward: argmax length differs from cotangent");
  Tensor<T> grad({rows, c});
  for (std::size_t j = 0; j < c; ++j) {
    if (argmax[j] >= rows) throw std::out_of_range("reduce_max_backward: argmax row out of range");
    grad[argmax[j] * c + j] += grad_values[j];
  }
  return grad;
}

template <typename T>
Tensor<T> concat_columns(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns needs at least one part");
  const std::size_t n = parts.front()->dim(0);
  std::size_t total = 0;
  for (const auto* p : parts) {
    if (p->rank() != 2 || p->dim(0) != n) throw ShapeError("concat_columns: row counts differ");
    total += p->dim(1);
  }
  Tensor<T> out({n, total});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t offset = 0;
    for (const auto* p : parts) {
      const std::size_t w = p->dim(1);
      std::copy_n(p->data().begin() + i * w, w, out.data().begin() + i * total + offset);
      offset += w;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_columns(const Tensor<T>& x, std::span<const std::size_t> widths) {
  if (x.rank() != 2) throw ShapeError("split_columns expects a 2-D tensor");
  const std::size_t n = x.dim(0), total = x.dim(1);
  if (std::accumulate(widths.begin(), widths.end(), std::size_t{0}) != total) {
    throw ShapeError("split_columns: widths do not sum to column count");
  }
  std::vector<Tensor<T>> parts;
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    Tensor<T> part({n, w});
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.data().begin() + i * total + offset, w, part.data().begin() + i * w);
    parts.push_back(std::move(part));
    offset += w;
  }
  return parts;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

#define PVC_INSTANTIATE_TENSOR_OPS(T)                                                                  \
  template Tensor<T> elementwise_add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> elementwise_sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> elementwise_mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template void axpy_inplace(Tensor<T>&, const Tensor<T>&, T);                                         \
  template T sum(const Tensor<T>&);                                                                    \
  template double inner_product(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> transpose2d(const Tensor<T>&);                                                    \
  template MaxReduction<T> reduce_max_over_points(const Tensor<T>&);                                   \
  template Tensor<T> reduce_max_backward(const Tensor<T>&, std::span<const std::size_t>, std::size_t); \
  template Tensor<T> concat_columns(const std::vector<const Tensor<T>*>&);                             \
  template std::vector<Tensor<T>> split_columns(const Tensor<T>&, std::span<const std::size_t>);       \
  template bool all_finite(const Tensor<T>&);

PVC_INSTANTIATE_TENSOR_OPS(float)
PVC_INSTANTIATE_TENSOR_OPS(double)

}  // namespace pvc
