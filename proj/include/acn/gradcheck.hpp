#pragma once

#include <functional>
#include <span>

#include "acn/autodiff.hpp"

namespace acn {

// Builds a scalar loss on the given tape from the current parameter values.
inline constexpr double kGradFloor = 1e-6;

using LossBuilder = std::function<Var(Tape&)>;

// Compares tape gradients of `loss` against central differences with step h.
// Returns max over components of |a - n| / max(|a|, |n|, kGradFloor). The
// floor keeps exactly-zero gradients (e.g. a bias cancelled by a following
// layer norm) from turning difference round-off into a large ratio.
// Parameter values are restored and gradients left zeroed on return.
double finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                         double h = 1e-5);

}  // namespace acn
