#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvc/point_cloud.hpp"
#include "pvc/tensor.hpp"

namespace pvc {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d logits
};

/// Mean over points of -log softmax(logits)[label], stabilized by
/// subtracting the row max. The gradient is (softmax - onehot) / n.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

template <typename T>
using ParamRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
using GradRefs = std::vector<std::pair<std::string, const Tensor<T>*>>;

/// One bias-corrected Adam update. Tensors are visited in ascending name
/// order; `grads` must name exactly the tensors in `params`.
template <typename T>
void adam_step(const ParamRefs<T>& params, const GradRefs<T>& grads, AdamState<T>& state);

struct ClassIoU {
  std::int32_t label = 0;
  double iou = 0.0;
  std::size_t shapes = 0;
};

struct IoUReport {
  std::vector<double> per_shape_miou;
  double mean_miou = 0.0;
  std::vector<ClassIoU> per_class_iou;
};

/// Part-averaged IoU. For each shape, every candidate class (from
/// `parts_per_shape`, or every class seen in that shape's prediction or
/// ground truth when the list is empty) whose prediction/ground-truth union
/// is nonempty contributes intersection / union; the shape score is their
/// mean and the report mean is the mean over shapes. A shape where every
/// candidate is skipped scores 1.
IoUReport evaluate_miou(const std::vector<Labels>& preds, const std::vector<Labels>& gts,
                        const std::vector<std::set<std::int32_t>>& parts_per_shape = {});

void to_json(nlohmann::json& j, const IoUReport& report);
void from_json(const nlohmann::json& j, IoUReport& report);

/// Fraction of points whose prediction equals the ground truth.
double point_accuracy(const std::vector<Labels>& preds, const std::vector<Labels>& gts);

}  // namespace pvc
