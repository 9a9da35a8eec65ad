// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ssom/autograd.hpp"
#include "ssom/random.hpp"
#include "ssom/tensor.hpp"

namespace ssom::adalora {

/// Low-rank increment P diag(lambda) Q attached to a frozen base matrix W0 [d x k].
///
/// P is d x r, lambda has r entries, Q is r x k. The increment is never
/// materialised; the adapted product is W0 x + P (lambda * (Q x)).
struct SvdTriplet {
    Parameter* p = nullptr;
    Parameter* lambda = nullptr;
    Parameter* q = nullptr;
    Parameter* base = nullptr;
    std::string base_name;
    std::size_t rank_cap = 0;

    std::size_t out_dim() const { return p->value.rows(); }
    std::size_t in_dim() const { return q->value.cols(); }
};

/// Registers `<prefix>.p`, `<prefix>.lambda` and `<prefix>.q` in the store.
/// P and Q are drawn from N(0, 0.02^2); lambda starts at zero so the adapted
/// layer reproduces the base exactly. Requires a frozen base and r <= min(d, k) / 2.
SvdTriplet make_triplet(ParameterStore& store, Parameter& base, const std::string& prefix, std::size_t rank,
                        Rng& rng);

/// h = W0 x + P diag(lambda) Q x for tokens stored as columns of x [k x m].
Var adapted_forward(Var x, Parameter& w0, const SvdTriplet& triplet);

/// ||P^T P - I||_F^2 + ||Q Q^T - I||_F^2 with I of size r x r.
Var orthogonality_regularizer(Tape& tape, const SvdTriplet& triplet);

struct BudgetSchedule {
    std::size_t total_steps = 0;   // T
    std::size_t warmup_steps = 0;  // t_i
    std::size_t final_steps = 0;   // t_f
    std::size_t b_init = 0;
    std::size_t b_target = 0;

    void validate() const;
    /// b_init before warm-up ends, b_target for the last t_f steps, and a cubic
    /// decay rounded half-up in between.
    std::size_t budget_at(std::size_t t) const;
};

struct ImportanceEntry {
    std::size_t triplet = 0;
    std::size_t index = 0;
    double score = 0.0;

    bool operator==(const ImportanceEntry&) const = default;
};

struct SlotRef {
    std::size_t triplet = 0;
    std::size_t index = 0;

    bool operator==(const SlotRef&) const = default;
};

struct PruneReport {
    std::size_t step = 0;
    std::size_t budget = 0;
    std::vector<SlotRef> kept;    // enumeration order
    std::vector<SlotRef> pruned;  // enumeration order
};

/// Global top-b magnitude pruning of singular values across all triplets.
class RankAllocator {
public:
    RankAllocator() = default;
    RankAllocator(std::vector<SvdTriplet> triplets, BudgetSchedule schedule);

    const std::vector<SvdTriplet>& triplets() const noexcept { return triplets_; }
    const BudgetSchedule& schedule() const noexcept { return schedule_; }
    void set_schedule(BudgetSchedule schedule);
    std::size_t step() const noexcept { return step_; }
    void set_step(std::size_t t) noexcept { step_ = t; }

    std::size_t total_slots() const;
    std::size_t nonzero_count() const;

    /// One entry per (triplet, singular index), score = |lambda|, in enumeration order.
    std::vector<ImportanceEntry> importance_scores() const;

    /// Keeps the top budget_at(t) scores verbatim and zeroes the rest. Ties go
    /// to the lower (triplet, index). Not recorded on any tape.
    PruneReport allocate(std::size_t t);
    /// Same projection with an explicit budget.
    PruneReport prune_to(std::size_t budget, std::size_t t = 0);

private:
    std::vector<SvdTriplet> triplets_;
    BudgetSchedule schedule_;
    std::size_t step_ = 0;
};

}  // namespace ssom::adalora
