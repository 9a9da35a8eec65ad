// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>

#include "ssom/autograd.hpp"

namespace ssom {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Max relative error between reverse-mode gradients of the scalar f at x
/// and central differences with step eps, eps in (0, 1e-3].
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps);

/// Same comparison over every component of the given trainable parameters.
/// `loss` builds the scalar on the supplied tape from the current parameter values.
double grad_check_parameters(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                             double eps);

}  // namespace ssom
