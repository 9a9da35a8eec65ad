// SPDX-License-Identifier: Apache-2.0

#include "ssom/objective.hpp"

#include <string>

#include "ssom/error.hpp"

namespace ssom::objective {

void require_binary(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (v != 0.0 && v != 1.0) throw ContractError(std::string(what) + ": target values must be 0 or 1");
    }
}

namespace {

void check_pair(const Var& pred, const Tensor& target, const char* op) {
    if (pred.shape() != target.shape()) {
        throw ShapeError(std::string(op) + ": prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
    }
    require_binary(target, op);
}

Tensor complement(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = 1.0 - t[i];
    return out;
}

Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

}  // namespace

Var bce_loss(Var pred_probs, const Tensor& target) {
    check_pair(pred_probs, target, "bce_loss");
    Tape& tape = pred_probs.tape();
    const Var p = clamp(pred_probs, kProbClamp, 1.0 - kProbClamp);
    const Var y = tape.constant(target);
    const Var not_y = tape.constant(complement(target));
    const Var ll = add(mul(y, log(p)), mul(not_y, log(one_minus(p))));
    return scale(mean(ll), -1.0);
}

Var iou_loss(Var pred_probs, const Tensor& target) {
    check_pair(pred_probs, target, "iou_loss");
    Tape& tape = pred_probs.tape();
    const Var p = clamp(pred_probs, kProbClamp, 1.0 - kProbClamp);
    const Var y = tape.constant(target);
    const Var not_y = tape.constant(complement(target));
    const Var tp = sum(mul(y, p));
    const Var fp = sum(mul(not_y, p));
    const Var fn = sum(mul(y, one_minus(p)));
    const Var denom = add_scalar(add(add(tp, fp), fn), kIouEps);
    return one_minus(div(tp, denom));
}

namespace {

LossBreakdown combine(Var bce, Var iou, Tape& tape, std::span<const adalora::SvdTriplet> triplets,
                      double lambda_reg) {
    Var ortho = tape.constant(Tensor::scalar(0.0));
    for (const auto& t : triplets) ortho = add(ortho, adalora::orthogonality_regularizer(tape, t));
    LossBreakdown out;
    out.total = add(add(bce, iou), scale(ortho, lambda_reg));
    out.bce = bce.value().item();
    out.iou = iou.value().item();
    out.ortho = ortho.value().item();
    out.total_value = out.total.value().item();
    out.lambda_reg = lambda_reg;
    return out;
}

}  // namespace

LossBreakdown total_loss(Var pred_probs, const Tensor& target, std::span<const adalora::SvdTriplet> triplets,
                         double lambda_reg) {
    return combine(bce_loss(pred_probs, target), iou_loss(pred_probs, target), pred_probs.tape(), triplets,
                   lambda_reg);
}

LossBreakdown batch_loss(std::span<const Var> pred_probs, std::span<const Tensor* const> targets,
                         std::span<const adalora::SvdTriplet> triplets, double lambda_reg) {
    if (pred_probs.empty() || pred_probs.size() != targets.size()) {
        throw ContractError("batch_loss: need one target per prediction and a non-empty batch");
    }
    Tape& tape = pred_probs[0].tape();
    Var bce_sum = bce_loss(pred_probs[0], *targets[0]);
    Var iou_sum = iou_loss(pred_probs[0], *targets[0]);
    for (std::size_t i = 1; i < pred_probs.size(); ++i) {
        bce_sum = add(bce_sum, bce_loss(pred_probs[i], *targets[i]));
        iou_sum = add(iou_sum, iou_loss(pred_probs[i], *targets[i]));
    }
    const double inv_batch = 1.0 / static_cast<double>(pred_probs.size());
    return combine(scale(bce_sum, inv_batch), scale(iou_sum, inv_batch), tape, triplets, lambda_reg);
}

}  // namespace ssom::objective
