#include "pvc/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pvc {

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects n x C logits");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError(fmt::format("cross_entropy: {} labels for {} rows", labels.size(), n));
  }
  LossResult<T> result;
  result.grad = Tensor<T>(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range(fmt::format("cross_entropy: label {} outside [0, {})", label, classes));
    }
    const T* row = logits.data().data() + i * classes;
    const double row_max = static_cast<double>(*std::max_element(row, row + classes));
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(row[j]) - row_max);
    const double log_denom = std::log(denom);
    result.loss += (log_denom - (static_cast<double>(row[label]) - row_max)) * inv_n;
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - row_max - log_denom);
      const double onehot = static_cast<std::size_t>(label) == j ? 1.0 : 0.0;
      result.grad[i * classes + j] = static_cast<T>((p - onehot) * inv_n);
    }
  }
  return result;
}

template <typename T>
void adam_step(const ParamRefs<T>& params, const GradRefs<T>& grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  std::vector<std::size_t> order(params.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return params[a].first < params[b].first; });
  std::map<std::string, const Tensor<T>*> grad_by_name;
  for (const auto& [name, g] : grads) grad_by_name[name] = g;

  state.step += 1;
  const AdamConfig& cfg = state.config;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t idx : order) {
    const auto& [name, param] = params[idx];
    const auto it = grad_by_name.find(name);
    if (it == grad_by_name.end()) throw ShapeError("adam_step: no gradient for " + name);
    const Tensor<T>& grad = *it->second;
    require_same_shape(*param, grad, "adam_step");
    auto [m_it, inserted_m] = state.m.try_emplace(name, Tensor<T>(param->shape()));
    auto [v_it, inserted_v] = state.v.try_emplace(name, Tensor<T>(param->shape()));
    Tensor<T>& m = m_it->second;
    Tensor<T>& v = v_it->second;
    require_same_shape(*param, m, "adam_step");
    for (std::size_t i = 0; i < param->size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = cfg.lr * (mi / bias1) / (std::sqrt(vi / bias2) + cfg.epsilon);
      (*param)[i] = static_cast<T>(static_cast<double>((*param)[i]) - update);
    }
  }
}

IoUReport evaluate_miou(const std::vector<Labels>& preds, const std::vector<Labels>& gts,
                        const std::vector<std::set<std::int32_t>>& parts_per_shape) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument(fmt::format("evaluate_miou: {} predictions for {} shapes", preds.size(), gts.size()));
  }
  if (!parts_per_shape.empty() && parts_per_shape.size() != gts.size()) {
    throw std::invalid_argument("evaluate_miou: parts_per_shape must list one class set per shape");
  }
  IoUReport report;
  std::map<std::int32_t, std::pair<double, std::size_t>> class_sums;
  for (std::size_t s = 0; s < gts.size(); ++s) {
    const Labels& pred = preds[s];
    const Labels& gt = gts[s];
    if (pred.size() != gt.size()) {
      throw std::invalid_argument(fmt::format("evaluate_miou: shape {} has {} predictions for {} points", s,
                                              pred.size(), gt.size()));
    }
    std::set<std::int32_t> candidates;
    if (parts_per_shape.empty()) {
      candidates.insert(pred.begin(), pred.end());
      candidates.insert(gt.begin(), gt.end());
    } else {
      candidates = parts_per_shape[s];
    }
    double total = 0.0;
    std::size_t evaluated = 0;
    for (std::int32_t cls : candidates) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool in_pred = pred[i] == cls, in_gt = gt[i] == cls;
        inter += in_pred && in_gt;
        uni += in_pred || in_gt;
      }
      if (uni == 0) continue;
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      total += iou;
      ++evaluated;
      auto& acc = class_sums[cls];
      acc.first += iou;
      acc.second += 1;
    }
    report.per_shape_miou.push_back(evaluated == 0 ? 1.0 : total / static_cast<double>(evaluated));
  }
  double sum = 0.0;
  for (double v : report.per_shape_miou) sum += v;
  report.mean_miou = report.per_shape_miou.empty() ? 0.0 : sum / static_cast<double>(report.per_shape_miou.size());
  for (const auto& [cls, acc] : class_sums) {
    report.per_class_iou.push_back({cls, acc.first / static_cast<double>(acc.second), acc.second});
  }
  return report;
}

double point_accuracy(const std::vector<Labels>& preds, const std::vector<Labels>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("point_accuracy: shape count mismatch");
  std::size_t correct = 0, total = 0;
  for (std::size_t s = 0; s < gts.size(); ++s) {
    if (preds[s].size() != gts[s].size()) throw std::invalid_argument("point_accuracy: point count mismatch");
    for (std::size_t i = 0; i < gts[s].size(); ++i) correct += preds[s][i] == gts[s][i];
    total += gts[s].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

template LossResult<float> cross_entropy(const Tensor<float>&, std::span<const std::int32_t>);
template LossResult<double> cross_entropy(const Tensor<double>&, std::span<const std::int32_t>);
template void adam_step(const ParamRefs<float>&, const GradRefs<float>&, AdamState<float>&);
template void adam_step(const ParamRefs<double>&, const GradRefs<double>&, AdamState<double>&);

void to_json(nlohmann::json& j, const IoUReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : report.per_class_iou) {
    classes.push_back({{"label", c.label}, {"iou", c.iou}, {"shapes", c.shapes}});
  }
  j = {{"mean_miou", report.mean_miou}, {"per_shape_miou", report.per_shape_miou}, {"per_class_iou", classes}};
}

void from_json(const nlohmann::json& j, IoUReport& report) {
  report.mean_miou = j.at("mean_miou").get<double>();
  report.per_shape_miou = j.at("per_shape_miou").get<std::vector<double>>();
  report.per_class_iou.clear();
  for (const auto& c : j.at("per_class_iou")) {
    report.per_class_iou.push_back(
        {c.at("label").get<std::int32_t>(), c.at("iou").get<double>(), c.at("shapes").get<std::size_t>()});
  }
}

}  // namespace pvc
