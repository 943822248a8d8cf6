#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvc/nn.hpp"
#include "pvc/param_io.hpp"
#include "pvc/point_cloud.hpp"
#include "pvc/voxel.hpp"

namespace pvc {

struct BlockSpec {
  std::size_t channels = 0;
  std::size_t resolution = 0;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

/// Network shape. Block channels and resolutions are base values that the
/// width and resolution multipliers scale.
struct PVCNNConfig {
  std::vector<BlockSpec> blocks;
  double width_multiplier = 1.0;
  double resolution_multiplier = 1.0;
  std::size_t num_classes = 2;
  std::vector<std::size_t> head_widths;
  std::size_t in_channels = 3;
  std::size_t voxel_convs_per_block = 2;
  DevoxMode devox_mode = DevoxMode::trilinear;
  /// Upper bound applied after the resolution multiplier; 0 disables it.
  std::size_t resolution_cap = 0;

  /// round(width_multiplier * base), at least 1.
  std::size_t effective_channels(std::size_t base) const;
  /// round(resolution_multiplier * base), at least 1, then capped.
  std::size_t effective_resolution(std::size_t base) const;

  /// Throws std::invalid_argument describing the first problem found.
  void validate() const;

  /// PointNet-style backbone 64/128/1024 at r = 32, resolutions capped at 8.
  static PVCNNConfig toy(double width_multiplier = 0.125, double resolution_multiplier = 1.0,
                         std::size_t num_classes = 2);
  /// Small three-block network that trains on a single core in minutes.
  static PVCNNConfig desk(std::size_t num_classes = 2);

  friend bool operator==(const PVCNNConfig&, const PVCNNConfig&) = default;
};

void to_json(nlohmann::json& j, const PVCNNConfig& cfg);
void from_json(const nlohmann::json& j, PVCNNConfig& cfg);

template <typename T>
struct VoxelConvLayer {
  Conv3dParams<T> conv;
  BatchNormState<T> norm;
};

/// One fused block: a voxel branch (voxelize, L x conv/BN/leaky-ReLU,
/// devoxelize) summed with a point branch (shared MLP).
template <typename T>
struct PVConvBlock {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t r = 1;
  std::vector<VoxelConvLayer<T>> voxel_convs;
  LinearParams<T> point_linear;
  BatchNormState<T> point_norm;
  T activation_slope = static_cast<T>(kLeakySlope);
  DevoxMode devox_mode = DevoxMode::trilinear;

  static PVConvBlock make(std::size_t c_in, std::size_t c_out, std::size_t r, std::size_t num_convs,
                          DevoxMode devox_mode, Rng& rng);
  /// Same structure with every tensor zeroed; used as a gradient buffer.
  PVConvBlock zeros_like() const;
};

enum class ParamKind { trainable, buffer };

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor, ParamKind kind)>;

template <typename T>
void visit_block(PVConvBlock<T>& block, const std::string& prefix, const ParamVisitor<T>& visit);

template <typename T>
struct PVConvCache {
  VoxelGrid<T> grid;
  std::vector<Tensor<T>> conv_inputs;  // volume fed to each conv
  std::vector<BatchNormCache<T>> norm_caches;
  std::vector<Tensor<T>> pre_acts;
  SharedMlpCache<T> point;
};

template <typename T>
Tensor<T> pvconv_forward(const PVConvBlock<T>& block, const NormalizedCloud& nc, const Tensor<T>& x, Mode mode,
                         PVConvCache<T>* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns d/dx.
template <typename T>
Tensor<T> pvconv_backward(const PVConvBlock<T>& block, const NormalizedCloud& nc, const Tensor<T>& x,
                          const PVConvCache<T>& cache, const Tensor<T>& grad_out, PVConvBlock<T>& grads);

template <typename T>
void update_running_stats(PVConvBlock<T>& block, const PVConvCache<T>& cache);

template <typename T>
struct HeadLayer {
  LinearParams<T> linear;
  BatchNormState<T> norm;
};

/// All parameters of a PVCNN segmentation network.
template <typename T>
struct ModelParams {
  PVCNNConfig config;
  std::vector<PVConvBlock<T>> blocks;
  std::vector<HeadLayer<T>> head;
  LinearParams<T> classifier;

  /// Visits every tensor in registry order: blocks, head, classifier.
  void visit(const ParamVisitor<T>& visitor);
  void visit(const std::function<void(const std::string&, const Tensor<T>&, ParamKind)>& visitor) const;

  NamedTensors<T> named_tensors() const;
  /// Replaces every tensor from `tensors`; names, count and shapes must match.
  void assign(const NamedTensors<T>& tensors);

  std::size_t trainable_count() const;
  ModelParams zeros_like() const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Deterministic Kaiming-style initialization from `seed`.
template <typename T>
ModelParams<T> build_pvcnn(const PVCNNConfig& cfg, std::uint64_t seed);

/// Closed-form number of trainable scalars for `cfg`.
std::size_t count_parameters(const PVCNNConfig& cfg);

/// Scalars held by every block's voxel grid at its output width:
/// sum over blocks of r^3 * c_out.
std::size_t voxel_grid_scalars(const PVCNNConfig& cfg);

template <typename T>
struct ModelCache {
  NormalizedCloud nc;
  Tensor<T> input;
  std::vector<Tensor<T>> block_inputs;
  std::vector<PVConvCache<T>> blocks;
  std::vector<Tensor<T>> block_outputs;
  MaxReduction<T> global;
  std::vector<Tensor<T>> head_inputs;
  std::vector<SharedMlpCache<T>> head;
  Tensor<T> classifier_input;
};

/// Per-point class logits. Coordinates are normalized once and shared by
/// every block.
template <typename T>
Tensor<T> pvcnn_forward(const ModelParams<T>& params, const PointCloud& pc, Mode mode,
                        ModelCache<T>* cache = nullptr);

/// Same as above with caller-provided features (n x in_channels).
template <typename T>
Tensor<T> pvcnn_forward(const ModelParams<T>& params, const NormalizedCloud& nc, const Tensor<T>& features,
                        Mode mode, ModelCache<T>* cache = nullptr);

template <typename T>
struct ModelGrads {
  ModelParams<T> params;
  Tensor<T> input;
};

template <typename T>
ModelGrads<T> pvcnn_backward(const ModelParams<T>& params, const ModelCache<T>& cache, const Tensor<T>& grad_logits);

/// Folds the batch statistics seen in a train-mode forward into the
/// running statistics.
template <typename T>
void update_running_stats(ModelParams<T>& params, const ModelCache<T>& cache);

std::vector<std::int32_t> argmax_rows(const Tensor<float>& logits);
std::vector<std::int32_t> argmax_rows(const Tensor<double>& logits);

}  // namespace pvc
