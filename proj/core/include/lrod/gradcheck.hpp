#pragma once

#include <functional>

#include "lrod/tape.hpp"

namespace lrod::ad {

/// Scalar function built on a tape from one input Var.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    Tensor analytic;
    Tensor numeric;
};

/// Compare the reverse-mode gradient of `f` at `point` with central
/// differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps. The per-coordinate error
/// is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-5);

}  // namespace lrod::ad
