#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvc/metrics.hpp"
#include "pvc/pvcnn.hpp"

namespace pvc {

/// Raised when the loss or a parameter stops being finite.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Seed of the synthetic validation split that pairs with a training split
/// generated from `seed`.
inline std::uint64_t validation_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  DevoxMode devox_mode = DevoxMode::trilinear;
  std::size_t voxel_convs_per_block = 2;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_miou = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// `{"epoch":..,"loss":..,"train_acc":..,"val_miou":..}` on one line.
std::string to_jsonl(const EpochLog& log);
EpochLog epoch_log_from_json(const std::string& line);

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochLog> log;
};

/// Per-cloud forward/backward; the gradients of a batch are averaged before
/// one Adam step. The ablation flags of `tc` override the matching fields of
/// `model_cfg`. Deterministic in (model_cfg, data, tc).
TrainResult train(PVCNNConfig model_cfg, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& val_set, const TrainConfig& tc,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct Evaluation {
  IoUReport iou;
  double accuracy = 0.0;
  std::vector<Labels> predictions;
};

/// Eval-mode predictions on labeled clouds, scored with evaluate_miou over
/// the classes {0, ..., num_classes - 1}.
Evaluation evaluate(const ModelParams<float>& params, const std::vector<PointCloud>& clouds);

/// Trainable tensors of `params` paired with the matching gradient tensors.
template <typename T>
void collect_trainable(ModelParams<T>& params, const ModelParams<T>& grads, ParamRefs<T>& param_refs,
                       GradRefs<T>& grad_refs);

}  // namespace pvc
