#ifndef CHARBENCH_GRADCHECK_HPP
#define CHARBENCH_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "charbench/ops.hpp"

namespace charbench {

struct GradCheckResult {
    std::string op_name;
    double max_rel_error = 0.0;
    bool passed = false;
};

// A differentiable scenario under test. `forward` runs the float32 op path
// on a tape and reduces to a scalar; `forward64` evaluates the same function
// at 64-bit precision from flat double inputs, independently of the tape
// implementation. Central differences on forward64 supply the numeric side.
struct GradCheckCase {
    std::string op_name;
    std::vector<Tensor> inputs; // leaves; requires_grad marks checked inputs
    std::function<Tensor(Tape&, std::vector<Tensor>&)> forward;
    std::function<double(const std::vector<std::vector<double>>&)> forward64;
};

/// Central differences with the given step, evaluated at 64-bit.
/// max_rel_error = max over coords of |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const GradCheckCase& c, double tolerance, double step = 1e-3);

/// Names of the built-in per-primitive scenarios.
const std::vector<std::string>& gradcheck_op_names();

/// Deterministic scenario for one primitive; samplers keep relu/maxpool
/// inputs away from kink neighborhoods.
GradCheckCase make_gradcheck_case(const std::string& op_name, uint64_t seed);

struct GradCheckSummary {
    std::string op_name;
    double max_rel_error = 0.0;
    bool passed = false;
    int seeds = 0;
};

/// Runs each named op over `num_seeds` seeds; per-op worst case is reported.
std::vector<GradCheckSummary> run_gradcheck_suite(const std::vector<std::string>& ops,
                                                  int num_seeds, double tolerance);

} // namespace charbench

#endif
