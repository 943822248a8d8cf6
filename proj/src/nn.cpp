#include "pvc/nn.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pvc {

namespace {

struct Extent {
  std::size_t b, c, d, h, w;
};

Extent volume_extent(const Shape& s, const char* op) {
  if (s.size() != 5) throw ShapeError(fmt::format("{}: expected [b, c, d, h, w], got {}", op, shape_to_string(s)));
  return {s[0], s[1], s[2], s[3], s[4]};
}

// Output positions o with 0 <= o + k - 1 < size for kernel tap k in {0,1,2}.
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t k, std::size_t size) {
  if (k == 0) return {1, size};
  if (k == 1) return {0, size};
  return {0, size - 1};
}

template <typename T>
Tensor<T> kaiming_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

// View of a tensor as [outer, channels, inner] around axis 1.
struct ChannelView {
  std::size_t outer, channels, inner;
  std::size_t count() const { return outer * inner; }
};

ChannelView channel_view(const Shape& s) {
  if (s.size() < 2) throw ShapeError("batch_norm expects rank >= 2 with channels on axis 1");
  std::size_t inner = 1;
  for (std::size_t a = 2; a < s.size(); ++a) inner *= s[a];
  return {s[0], s[1], inner};
}

}  // namespace

template <typename T>
Conv3dParams<T> Conv3dParams<T>::kaiming(std::size_t c_in, std::size_t c_out, Rng& rng) {
  return {kaiming_tensor<T>({c_out, c_in, 3, 3, 3}, c_in * 27, rng), Tensor<T>({c_out})};
}

template <typename T>
Conv3dParams<T> Conv3dParams<T>::zeros(std::size_t c_in, std::size_t c_out) {
  return {Tensor<T>({c_out, c_in, 3, 3, 3}), Tensor<T>({c_out})};
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p) {
  const Extent e = volume_extent(x.shape(), "conv3d");
  if (p.weight.shape() != Shape{p.c_out(), e.c, 3, 3, 3}) {
    throw ShapeError(fmt::format("conv3d: input has {} channels but weight is {}", e.c,
                                 shape_to_string(p.weight.shape())));
  }
  if (p.bias.shape() != Shape{p.c_out()}) throw ShapeError("conv3d: bias must have c_out entries");
  const std::size_t c_out = p.c_out(), plane = e.h * e.w, cells = e.d * plane;
  Tensor<T> y({e.b, c_out, e.d, e.h, e.w});
  const T* xin = x.data().data();
  const T* wt = p.weight.data().data();
  T* out = y.data().data();

  for (std::size_t b = 0; b < e.b; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      T* yo = out + (b * c_out + co) * cells;
      std::fill(yo, yo + cells, p.bias[co]);
      for (std::size_t ci = 0; ci < e.c; ++ci) {
        const T* xi = xin + (b * e.c + ci) * cells;
        const T* kernel = wt + (co * e.c + ci) * 27;
        for (std::size_t kd = 0; kd < 3; ++kd) {
          const TapRange rd = tap_range(kd, e.d);
          for (std::size_t kh = 0; kh < 3; ++kh) {
            const TapRange rh = tap_range(kh, e.h);
            for (std::size_t kw = 0; kw < 3; ++kw) {
              const TapRange rw = tap_range(kw, e.w);
              const T wv = kernel[(kd * 3 + kh) * 3 + kw];
              for (std::size_t od = rd.lo; od < rd.hi; ++od) {
                for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                  T* yrow = yo + od * plane + oh * e.w;
                  const T* xrow = xi + (od + kd - 1) * plane + (oh + kh - 1) * e.w + kw - 1;
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) yrow[ow] += wv * xrow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out) {
  const Extent e = volume_extent(x.shape(), "conv3d_backward");
  const std::size_t c_out = p.c_out(), plane = e.h * e.w, cells = e.d * plane;
  if (grad_out.shape() != Shape{e.b, c_out, e.d, e.h, e.w}) {
    throw ShapeError("conv3d_backward: cotangent shape " + shape_to_string(grad_out.shape()) +
                     " does not match output");
  }
  Conv3dGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  const T* xin = x.data().data();
  const T* wt = p.weight.data().data();
  const T* dy = grad_out.data().data();
  T* dx = g.input.data().data();
  T* dw = g.weight.data().data();

  for (std::size_t b = 0; b < e.b; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      const T* dyo = dy + (b * c_out + co) * cells;
      T bias_acc{0};
      for (std::size_t i = 0; i < cells; ++i) bias_acc += dyo[i];
      g.bias[co] += bias_acc;
      for (std::size_t ci = 0; ci < e.c; ++ci) {
        const T* xi = xin + (b * e.c + ci) * cells;
        T* dxi = dx + (b * e.c + ci) * cells;
        const T* kernel = wt + (co * e.c + ci) * 27;
        T* dkernel = dw + (co * e.c + ci) * 27;
        for (std::size_t kd = 0; kd < 3; ++kd) {
          const TapRange rd = tap_range(kd, e.d);
          for (std::size_t kh = 0; kh < 3; ++kh) {
            const TapRange rh = tap_range(kh, e.h);
            for (std::size_t kw = 0; kw < 3; ++kw) {
              const TapRange rw = tap_range(kw, e.w);
              const std::size_t tap = (kd * 3 + kh) * 3 + kw;
              const T wv = kernel[tap];
              T wacc{0};
              for (std::size_t od = rd.lo; od < rd.hi; ++od) {
                for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                  const T* dyrow = dyo + od * plane + oh * e.w;
                  const std::size_t in_off = (od + kd - 1) * plane + (oh + kh - 1) * e.w + kw - 1;
                  const T* xrow = xi + in_off;
                  T* dxrow = dxi + in_off;
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) {
                    dxrow[ow] += wv * dyrow[ow];
                    wacc += dyrow[ow] * xrow[ow];
                  }
                }
              }
              dkernel[tap] += wacc;
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor<T>::ones({channels});
  s.beta = Tensor<T>({channels});
  s.running_mean = Tensor<T>({channels});
  s.running_var = Tensor<T>::ones({channels});
  return s;
}

template <typename T>
BatchNormOutput<T> batch_norm_forward(const Tensor<T>& x, const BatchNormState<T>& state, Mode mode) {
  const ChannelView v = channel_view(x.shape());
  if (v.channels != state.channels()) {
    throw ShapeError(fmt::format("batch_norm: input has {} channels, state has {}", v.channels, state.channels()));
  }
  const std::size_t c = v.channels;
  BatchNormOutput<T> result;
  auto& cache = result.cache;
  cache.mode = mode;
  cache.inv_std = Tensor<T>({c});

  Tensor<T> mean({c}), var({c});
  if (mode == Mode::train) {
    if (v.count() < 2) {
      throw std::invalid_argument(
          fmt::format("batch_norm: train mode needs at least 2 values per channel, got {}", v.count()));
    }
    const double count = static_cast<double>(v.count());
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = x.data().data() + (o * c + ch) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) sum[ch] += src[i];
      }
    for (std::size_t ch = 0; ch < c; ++ch) sum[ch] /= count;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = x.data().data() + (o * c + ch) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) {
          const double d = static_cast<double>(src[i]) - sum[ch];
          sq[ch] += d * d;
        }
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = static_cast<T>(sum[ch]);
      var[ch] = static_cast<T>(sq[ch] / count);
    }
    cache.batch_mean = mean;
    cache.batch_var = var;
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  for (std::size_t ch = 0; ch < c; ++ch) cache.inv_std[ch] = T{1} / std::sqrt(var[ch] + state.epsilon);

  cache.x_hat = Tensor<T>(x.shape());
  result.out = Tensor<T>(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (o * c + ch) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        const T xh = (x[base + i] - mean[ch]) * cache.inv_std[ch];
        cache.x_hat[base + i] = xh;
        result.out[base + i] = state.gamma[ch] * xh + state.beta[ch];
      }
    }
  return result;
}

template <typename T>
void update_running_stats(BatchNormState<T>& state, const BatchNormCache<T>& cache) {
  if (cache.mode != Mode::train) return;
  const T m = state.momentum;
  for (std::size_t ch = 0; ch < state.channels(); ++ch) {
    state.running_mean[ch] = (T{1} - m) * state.running_mean[ch] + m * cache.batch_mean[ch];
    state.running_var[ch] = (T{1} - m) * state.running_var[ch] + m * cache.batch_var[ch];
  }
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  auto result = batch_norm_forward(x, state, mode);
  update_running_stats(state, result.cache);
  return std::move(result.out);
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                      const BatchNormCache<T>& cache) {
  require_same_shape(grad_out, cache.x_hat, "batch_norm_backward");
  const ChannelView v = channel_view(grad_out.shape());
  const std::size_t c = v.channels;
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({c}), Tensor<T>({c})};

  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (o * c + ch) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        g.beta[ch] += grad_out[base + i];
        g.gamma[ch] += grad_out[base + i] * cache.x_hat[base + i];
      }
    }

  const T count = static_cast<T>(v.count());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (o * c + ch) * v.inner;
      const T scale_factor = state.gamma[ch] * cache.inv_std[ch];
      for (std::size_t i = 0; i < v.inner; ++i) {
        if (cache.mode == Mode::eval) {
          g.input[base + i] = scale_factor * grad_out[base + i];
        } else {
          g.input[base + i] = scale_factor / count *
                              (count * grad_out[base + i] - g.beta[ch] - cache.x_hat[base + i] * g.gamma[ch]);
        }
      }
    }
  return g;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> out = x;
  for (auto& v : out.data())
    if (v < T{0}) v *= slope;
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, T slope) {
  require_same_shape(x, grad_out, "leaky_relu_backward");
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < T{0}) g[i] *= slope;
  return g;
}

template <typename T>
LinearParams<T> LinearParams<T>::kaiming(std::size_t c_in, std::size_t c_out, Rng& rng) {
  return {kaiming_tensor<T>({c_out, c_in}, c_in, rng), Tensor<T>({c_out})};
}

template <typename T>
LinearParams<T> LinearParams<T>::zeros(std::size_t c_in, std::size_t c_out) {
  return {Tensor<T>({c_out, c_in}), Tensor<T>({c_out})};
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.c_in()) {
    throw ShapeError(fmt::format("linear: input {} does not match weight {}", shape_to_string(x.shape()),
                                 shape_to_string(p.weight.shape())));
  }
  const std::size_t n = x.dim(0), c_in = p.c_in(), c_out = p.c_out();
  Tensor<T> y({n, c_out});
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.data().data() + i * c_in;
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* wo = p.weight.data().data() + o * c_in;
      T acc{0};
      for (std::size_t k = 0; k < c_in; ++k) acc += wo[k] * xi[k];
      y[i * c_out + o] = acc + p.bias[o];
    }
  }
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p, const Tensor<T>& grad_out) {
  const std::size_t n = x.dim(0), c_out = p.c_out();
  if (grad_out.shape() != Shape{n, c_out}) throw ShapeError("linear_backward: cotangent shape mismatch");
  LinearGrads<T> g;
  g.input = matmul(grad_out, p.weight);
  g.weight = matmul(transpose2d(grad_out), x);
  g.bias = Tensor<T>({c_out});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < c_out; ++o) g.bias[o] += grad_out[i * c_out + o];
  return g;
}

template <typename T>
SharedMlpOutput<T> shared_mlp_forward(const Tensor<T>& x, const LinearParams<T>& p, const BatchNormState<T>& bn,
                                      T slope, Mode mode) {
  SharedMlpOutput<T> result;
  result.cache.pre_norm = linear(x, p);
  auto normed = batch_norm_forward(result.cache.pre_norm, bn, mode);
  result.cache.norm = std::move(normed.cache);
  result.cache.pre_act = std::move(normed.out);
  result.out = leaky_relu(result.cache.pre_act, slope);
  return result;
}

template <typename T>
SharedMlpGrads<T> shared_mlp_backward(const Tensor<T>& x, const LinearParams<T>& p, const BatchNormState<T>& bn,
                                      const SharedMlpCache<T>& cache, const Tensor<T>& grad_out, T slope) {
  SharedMlpGrads<T> g;
  const Tensor<T> d_pre_act = leaky_relu_backward(cache.pre_act, grad_out, slope);
  g.norm = batch_norm_backward(d_pre_act, bn, cache.norm);
  g.linear = linear_backward(x, p, g.norm.input);
  g.input = g.linear.input;
  return g;
}

#define PVC_INSTANTIATE_NN(T)                                                                                   \
  template struct Conv3dParams<T>;                                                                              \
  template struct BatchNormState<T>;                                                                            \
  template struct LinearParams<T>;                                                                              \
  template Tensor<T> conv3d(const Tensor<T>&, const Conv3dParams<T>&);                                          \
  template Conv3dGrads<T> conv3d_backward(const Tensor<T>&, const Conv3dParams<T>&, const Tensor<T>&);          \
  template BatchNormOutput<T> batch_norm_forward(const Tensor<T>&, const BatchNormState<T>&, Mode);             \
  template void update_running_stats(BatchNormState<T>&, const BatchNormCache<T>&);                             \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNormState<T>&, Mode);                                    \
  template BatchNormGrads<T> batch_norm_backward(const Tensor<T>&, const BatchNormState<T>&,                    \
                                                 const BatchNormCache<T>&);                                     \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                           \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                                          \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const LinearParams<T>&, const Tensor<T>&);          \
  template SharedMlpOutput<T> shared_mlp_forward(const Tensor<T>&, const LinearParams<T>&,                      \
                                                 const BatchNormState<T>&, T, Mode);                            \
  template SharedMlpGrads<T> shared_mlp_backward(const Tensor<T>&, const LinearParams<T>&,                      \
                                                 const BatchNormState<T>&, const SharedMlpCache<T>&,            \
                                                 const Tensor<T>&, T);

PVC_INSTANTIATE_NN(float)
PVC_INSTANTIATE_NN(double)

}  // namespace pvc
