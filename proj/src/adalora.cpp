// SPDX-License-Identifier: Apache-2.0

#include "ssom/adalora.hpp"

#include <algorithm>
#include <cmath>

#include "ssom/error.hpp"

namespace ssom::adalora {

namespace {
constexpr double kFactorInitStd = 0.02;
}

SvdTriplet make_triplet(ParameterStore& store, Parameter& base, const std::string& prefix, std::size_t rank,
                        Rng& rng) {
    if (!base.frozen) throw ContractError("adapter base " + base.name + " must be frozen");
    if (base.value.rank() != 2) throw ShapeError("adapter base " + base.name + " must be a matrix");
    const std::size_t d = base.value.rows(), k = base.value.cols();
    if (rank == 0 || 2 * rank > std::min(d, k)) {
        throw ContractError("adapter rank " + std::to_string(rank) + " exceeds min(d, k)/2 for " + base.name +
                            " " + shape_string(base.value.shape()));
    }
    SvdTriplet t;
    t.base = &base;
    t.base_name = base.name;
    t.rank_cap = rank;
    t.p = &store.add(prefix + ".p", rng.normal_tensor(Shape{d, rank}, kFactorInitStd), false);
    t.lambda = &store.add(prefix + ".lambda", Tensor(Shape{rank}), false);
    t.q = &store.add(prefix + ".q", rng.normal_tensor(Shape{rank, k}, kFactorInitStd), false);
    return t;
}

Var adapted_forward(Var x, Parameter& w0, const SvdTriplet& triplet) {
    if (!w0.frozen) throw ContractError("adapted_forward: base " + w0.name + " is not frozen");
    if (w0.name != triplet.base_name) {
        throw ContractError("adapted_forward: triplet adapts " + triplet.base_name + ", not " + w0.name);
    }
    if (w0.value.shape() != Shape{triplet.out_dim(), triplet.in_dim()}) {
        throw ShapeError("adapted_forward: base " + shape_string(w0.value.shape()) + " does not match triplet " +
                         shape_string(Shape{triplet.out_dim(), triplet.in_dim()}));
    }
    Tape& tape = x.tape();
    Var base = matmul(tape.param(w0), x);
    Var qx = matmul(tape.param(*triplet.q), x);
    Var scaled = scale_rows(qx, tape.param(*triplet.lambda));
    return add(base, matmul(tape.param(*triplet.p), scaled));
}

Var orthogonality_regularizer(Tape& tape, const SvdTriplet& triplet) {
    const Var p = tape.param(*triplet.p);
    const Var q = tape.param(*triplet.q);
    const Var eye = tape.constant(Tensor::identity(triplet.rank_cap));
    const Var ptp = matmul(transpose(p), p);
    const Var qqt = matmul(q, transpose(q));
    return add(frobenius_norm_sq(sub(ptp, eye)), frobenius_norm_sq(sub(qqt, eye)));
}

void BudgetSchedule::validate() const {
    if (warmup_steps + final_steps >= total_steps) {
        throw ContractError("budget schedule requires warmup + final < total steps (" +
                            std::to_string(warmup_steps) + " + " + std::to_string(final_steps) +
                            " vs " + std::to_string(total_steps) + ")");
    }
    if (b_target > b_init) throw ContractError("budget schedule requires b_target <= b_init");
}

std::size_t BudgetSchedule::budget_at(std::size_t t) const {
    if (t > total_steps) {
        throw ContractError("budget_at: step " + std::to_string(t) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    if (t < warmup_steps) return b_init;
    if (t >= total_steps - final_steps) return b_target;
    const double span = static_cast<double>(total_steps - warmup_steps - final_steps);
    const double progress = static_cast<double>(t - warmup_steps) / span;
    const double remain = 1.0 - progress;
    const double b = static_cast<double>(b_target) +
                     static_cast<double>(b_init - b_target) * remain * remain * remain;
    return static_cast<std::size_t>(std::floor(b + 0.5));
}

RankAllocator::RankAllocator(std::vector<SvdTriplet> triplets, BudgetSchedule schedule)
    : triplets_(std::move(triplets)), schedule_(schedule) {
    schedule_.validate();
}

void RankAllocator::set_schedule(BudgetSchedule schedule) {
    schedule.validate();
    schedule_ = schedule;
}

std::size_t RankAllocator::total_slots() const {
    std::size_t n = 0;
    for (const auto& t : triplets_) n += t.lambda->value.numel();
    return n;
}

std::size_t RankAllocator::nonzero_count() const {
    std::size_t n = 0;
    for (const auto& t : triplets_)
        for (double v : t.lambda->value.values())
            if (v != 0.0) ++n;
    return n;
}

std::vector<ImportanceEntry> RankAllocator::importance_scores() const {
    std::vector<ImportanceEntry> out;
    out.reserve(total_slots());
    for (std::size_t ti = 0; ti < triplets_.size(); ++ti) {
        const auto& lam = triplets_[ti].lambda->value;
        for (std::size_t i = 0; i < lam.numel(); ++i) out.push_back({ti, i, std::abs(lam[i])});
    }
    return out;
}

PruneReport RankAllocator::allocate(std::size_t t) {
    PruneReport report = prune_to(schedule_.budget_at(t), t);
    step_ = t;
    return report;
}

PruneReport RankAllocator::prune_to(std::size_t budget, std::size_t t) {
    const auto scores = importance_scores();
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a].score > scores[b].score; });

    std::vector<char> keep(scores.size(), 0);
    const std::size_t kept_count = std::min(budget, scores.size());
    for (std::size_t i = 0; i < kept_count; ++i) keep[order[i]] = 1;

    PruneReport report;
    report.step = t;
    report.budget = budget;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const SlotRef ref{scores[i].triplet, scores[i].index};
        if (keep[i]) {
            report.kept.push_back(ref);
        } else {
            triplets_[ref.triplet].lambda->value[ref.index] = 0.0;
            report.pruned.push_back(ref);
        }
    }
    return report;
}

}  // namespace ssom::adalora
