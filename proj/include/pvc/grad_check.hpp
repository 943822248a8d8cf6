#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "pvc/tensor.hpp"

namespace pvc {

struct GradCheckReport {
  std::string op_name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool passed = false;
  double epsilon = 0.0;
  double tolerance = 0.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0x5eed;
};

using ForwardFn = std::function<Tensor64(const Tensor64&)>;
/// Given the input and an output cotangent, returns the input cotangent.
using BackwardFn = std::function<Tensor64(const Tensor64&, const Tensor64&)>;

/// Compares the analytic input cotangent against central finite
/// differences of ⟨forward(x), g⟩ for a fixed random output cotangent g.
///
/// The relative error of one entry is |analytic - numeric| divided by
/// max(1, |analytic|, |numeric|), so entries with vanishing gradient are
/// judged by their absolute error.
GradCheckReport grad_check(const std::string& op_name, const ForwardFn& forward,
                           const BackwardFn& backward, const Tensor64& input,
                           const GradCheckOptions& options = {});

/// Merges several reports (e.g. one per differentiable argument) into one
/// row carrying the worst errors.
GradCheckReport merge_reports(const std::string& op_name, const std::vector<GradCheckReport>& parts);

}  // namespace pvc
