#include "pvc/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pvc/rng.hpp"

namespace pvc {

GradCheckReport grad_check(const std::string& op_name, const ForwardFn& forward,
                           const BackwardFn& backward, const Tensor64& input,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op_name = op_name;
  report.epsilon = options.epsilon;
  report.tolerance = options.tolerance;

  const Tensor64 base_out = forward(input);
  Rng rng(options.seed);
  Tensor64 cotangent(base_out.shape());
  for (auto& v : cotangent.data()) v = rng.uniform(-1.0, 1.0);

  const Tensor64 analytic = backward(input, cotangent);
  if (analytic.shape() != input.shape()) {
    throw ShapeError("grad_check(" + op_name + "): backward returned shape " +
                     shape_to_string(analytic.shape()) + " for input " + shape_to_string(input.shape()));
  }

  Tensor64 probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + options.epsilon;
    const double plus = inner_product(forward(probe), cotangent);
    probe[i] = original - options.epsilon;
    const double minus = inner_product(forward(probe), cotangent);
    probe[i] = original;

    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
    if (!std::isfinite(abs_err)) report.max_rel_err = INFINITY;
  }
  report.passed = report.max_rel_err <= options.tolerance;
  return report;
}

GradCheckReport merge_reports(const std::string& op_name, const std::vector<GradCheckReport>& parts) {
  GradCheckReport merged;
  merged.op_name = op_name;
  merged.passed = true;
  for (const auto& part : parts) {
    merged.max_abs_err = std::max(merged.max_abs_err, part.max_abs_err);
    merged.max_rel_err = std::max(merged.max_rel_err, part.max_rel_err);
    merged.passed = merged.passed && part.passed;
    merged.epsilon = part.epsilon;
    merged.tolerance = part.tolerance;
  }
  return merged;
}

}  // namespace pvc
