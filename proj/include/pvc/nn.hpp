#pragma once

#include <cstddef>

#include "pvc/rng.hpp"
#include "pvc/tensor.hpp"

namespace pvc {

enum class Mode { train, eval };

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---------------------------------------------------------------------------
// 3x3x3 volumetric convolution, stride 1, zero padding 1.

template <typename T>
struct Conv3dParams {
  Tensor<T> weight;  // [c_out, c_in, 3, 3, 3]
  Tensor<T> bias;    // [c_out]

  std::size_t c_out() const { return weight.dim(0); }
  std::size_t c_in() const { return weight.dim(1); }

  /// Kaiming fan-in normal init (std = sqrt(2 / fan_in)), zero bias.
  static Conv3dParams kaiming(std::size_t c_in, std::size_t c_out, Rng& rng);
  static Conv3dParams zeros(std::size_t c_in, std::size_t c_out);
};

template <typename T>
struct Conv3dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Cross-correlation of x [b, c_in, d, h, w] with a 3^3 kernel plus bias.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p);

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization over every axis except axis 1 (the channel axis of
// both [n, c] point tensors and [b, c, r, r, r] volumes).

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = static_cast<T>(kBatchNormMomentum);
  T epsilon = static_cast<T>(kBatchNormEpsilon);

  std::size_t channels() const { return gamma.size(); }

  /// gamma = 1, beta = 0, running mean 0 and variance 1.
  static BatchNormState identity(std::size_t channels);
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<T> x_hat;
  Tensor<T> inv_std;     // [c]
  Tensor<T> batch_mean;  // [c], train mode only
  Tensor<T> batch_var;   // [c], biased, train mode only
};

template <typename T>
struct BatchNormOutput {
  Tensor<T> out;
  BatchNormCache<T> cache;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// Normalizes with batch statistics (train) or running statistics (eval).
/// Does not touch `state`; see update_running_stats.
template <typename T>
BatchNormOutput<T> batch_norm_forward(const Tensor<T>& x, const BatchNormState<T>& state, Mode mode);

/// running <- (1 - momentum) * running + momentum * batch.
template <typename T>
void update_running_stats(BatchNormState<T>& state, const BatchNormCache<T>& cache);

/// Forward plus running-statistics update in train mode.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode);

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                      const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

/// Multiplies by 1 where x >= 0 and by `slope` elsewhere.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, T slope);

// ---------------------------------------------------------------------------
// Per-point linear layer y = x W^T + b applied to every row.

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [c_out, c_in]
  Tensor<T> bias;    // [c_out]

  std::size_t c_out() const { return weight.dim(0); }
  std::size_t c_in() const { return weight.dim(1); }

  static LinearParams kaiming(std::size_t c_in, std::size_t c_out, Rng& rng);
  static LinearParams zeros(std::size_t c_in, std::size_t c_out);
};

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Shared MLP layer: linear -> batch norm over points -> leaky ReLU.

template <typename T>
struct SharedMlpCache {
  Tensor<T> pre_norm;
  BatchNormCache<T> norm;
  Tensor<T> pre_act;
};

template <typename T>
struct SharedMlpOutput {
  Tensor<T> out;
  SharedMlpCache<T> cache;
};

template <typename T>
struct SharedMlpGrads {
  Tensor<T> input;
  LinearGrads<T> linear;
  BatchNormGrads<T> norm;
};

template <typename T>
SharedMlpOutput<T> shared_mlp_forward(const Tensor<T>& x, const LinearParams<T>& p, const BatchNormState<T>& bn,
                                      T slope, Mode mode);

template <typename T>
SharedMlpGrads<T> shared_mlp_backward(const Tensor<T>& x, const LinearParams<T>& p, const BatchNormState<T>& bn,
                                      const SharedMlpCache<T>& cache, const Tensor<T>& grad_out, T slope);

}  // namespace pvc
