#include "pvc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "pvc/rng.hpp"

namespace pvc {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite nonnegative number");
  if (voxel_convs_per_block < 1 || voxel_convs_per_block > 3) {
    throw std::invalid_argument("voxel_convs_per_block must be 1, 2 or 3");
  }
}

std::string to_jsonl(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["loss"] = log.loss;
  j["train_acc"] = log.train_acc;
  j["val_miou"] = log.val_miou;
  return j.dump();
}

EpochLog epoch_log_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  return {j.at("epoch").get<std::size_t>(), j.at("loss").get<double>(), j.at("train_acc").get<double>(),
          j.at("val_miou").get<double>()};
}

template <typename T>
void collect_trainable(ModelParams<T>& params, const ModelParams<T>& grads, ParamRefs<T>& param_refs,
                       GradRefs<T>& grad_refs) {
  params.visit(ParamVisitor<T>([&](const std::string& name, Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) param_refs.emplace_back(name, &t);
  }));
  grads.visit([&](const std::string& name, const Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) grad_refs.emplace_back(name, &t);
  });
}

namespace {

void require_labeled(const std::vector<PointCloud>& clouds, std::size_t num_classes, const char* what) {
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto& pc = clouds[i];
    if (!pc.labels) throw std::invalid_argument(fmt::format("{} cloud {} is unlabeled", what, i));
    for (auto label : *pc.labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw std::invalid_argument(fmt::format("{} cloud {} has label {} outside [0, {})", what, i, label, num_classes));
      }
    }
  }
}

void accumulate(ModelParams<float>& total, const ModelParams<float>& part) {
  NamedTensors<float> parts = part.named_tensors();
  std::size_t i = 0;
  total.visit(ParamVisitor<float>([&](const std::string&, Tensor<float>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) axpy_inplace(t, parts[i].second);
    ++i;
  }));
}

}  // namespace

Evaluation evaluate(const ModelParams<float>& params, const std::vector<PointCloud>& clouds) {
  require_labeled(clouds, params.config.num_classes, "evaluation");
  Evaluation ev;
  std::vector<Labels> gts;
  for (const auto& pc : clouds) {
    ev.predictions.push_back(argmax_rows(pvcnn_forward(params, pc, Mode::eval)));
    gts.push_back(*pc.labels);
  }
  std::set<std::int32_t> all_classes;
  for (std::size_t c = 0; c < params.config.num_classes; ++c) all_classes.insert(static_cast<std::int32_t>(c));
  ev.iou = evaluate_miou(ev.predictions, gts, std::vector<std::set<std::int32_t>>(clouds.size(), all_classes));
  ev.accuracy = point_accuracy(ev.predictions, gts);
  return ev;
}

TrainResult train(PVCNNConfig model_cfg, const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& val_set, const TrainConfig& tc,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  tc.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  model_cfg.devox_mode = tc.devox_mode;
  model_cfg.voxel_convs_per_block = tc.voxel_convs_per_block;
  require_labeled(train_set, model_cfg.num_classes, "training");
  require_labeled(val_set, model_cfg.num_classes, "validation");

  TrainResult result{build_pvcnn<float>(model_cfg, tc.seed), {}};
  ModelParams<float>& params = result.params;
  AdamState<float> adam;
  adam.config.lr = tc.lr;
  Rng shuffle_rng(tc.seed ^ 0xA5A5A5A5DEADBEEFULL);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    // Fisher-Yates on our own generator so the order is library-independent.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0, points = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      ModelParams<float> grad_sum = params.zeros_like();
      for (std::size_t b = start; b < stop; ++b) {
        const PointCloud& pc = train_set[order[b]];
        ModelCache<float> cache;
        const Tensor<float> logits = pvcnn_forward(params, pc, Mode::train, &cache);
        const auto loss = cross_entropy(logits, *pc.labels);
        if (!std::isfinite(loss.loss)) throw NumericalError(fmt::format("loss became {} in epoch {}", loss.loss, epoch));
        loss_sum += loss.loss;
        const auto predictions = argmax_rows(logits);
        for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == (*pc.labels)[i];
        points += predictions.size();
        update_running_stats(params, cache);
        accumulate(grad_sum, pvcnn_backward(params, cache, loss.grad).params);
      }
      const float inv_batch = 1.0f / static_cast<float>(stop - start);
      grad_sum.visit(ParamVisitor<float>([&](const std::string&, Tensor<float>& t, ParamKind) {
        for (auto& v : t.data()) v *= inv_batch;
      }));
      ParamRefs<float> param_refs;
      GradRefs<float> grad_refs;
      collect_trainable(params, grad_sum, param_refs, grad_refs);
      adam_step(param_refs, grad_refs, adam);
      for (const auto& [name, t] : param_refs) {
        if (!all_finite(*t)) throw NumericalError("parameter " + name + " is no longer finite");
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(train_set.size());
    entry.train_acc = static_cast<double>(correct) / static_cast<double>(points);
    entry.val_miou = val_set.empty() ? 0.0 : evaluate(params, val_set).iou.mean_miou;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

template void collect_trainable(ModelParams<float>&, const ModelParams<float>&, ParamRefs<float>&, GradRefs<float>&);
template void collect_trainable(ModelParams<double>&, const ModelParams<double>&, ParamRefs<double>&,
                                GradRefs<double>&);

}  // namespace pvc
