#pragma once

#include <string>
#include <vector>

#include "pvc/grad_check.hpp"

namespace pvc {

/// Names of the op groups covered by the gradient battery, in run order.
const std::vector<std::string>& gradcheck_op_names();

/// Runs the finite-difference battery over every differentiable op on small
/// randomized float64 inputs kept away from activation kinks. With a
/// non-empty `only`, runs that single group (throws on an unknown name).
std::vector<GradCheckReport> run_gradcheck_battery(const GradCheckOptions& options, const std::string& only = "");

}  // namespace pvc
