// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "ssom/adalora.hpp"
#include "ssom/autograd.hpp"

namespace ssom::objective {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouEps = 1e-8;
inline constexpr double kDefaultLambdaReg = 0.1;

/// Mean binary cross-entropy over all pixels; predictions clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Var pred_probs, const Tensor& target);

/// 1 - TP / (TP + FP + FN + 1e-8) with soft counts TP = sum y p, FP = sum (1-y) p, FN = sum y (1-p).
Var iou_loss(Var pred_probs, const Tensor& target);

struct LossBreakdown {
    Var total;  // on the tape, ready for backward
    double bce = 0.0;
    double iou = 0.0;
    double ortho = 0.0;
    double total_value = 0.0;
    double lambda_reg = 0.0;
};

/// bce + iou + lambda_reg * sum of orthogonality regularisers over all triplets.
LossBreakdown total_loss(Var pred_probs, const Tensor& target, std::span<const adalora::SvdTriplet> triplets,
                         double lambda_reg);

/// Mini-batch form: bce and iou are averaged over the samples, the regulariser is added once.
LossBreakdown batch_loss(std::span<const Var> pred_probs, std::span<const Tensor* const> targets,
                         std::span<const adalora::SvdTriplet> triplets, double lambda_reg);

void require_binary(const Tensor& t, const char* what);

}  // namespace ssom::objective
