// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "ssom/adalora.hpp"
#include "ssom/error.hpp"
#include "ssom/grad_check.hpp"
#include "ssom/grad_suite.hpp"
#include "test_util.hpp"

using namespace ssom;
using namespace ssom::adalora;
using test::random_tensor;

namespace {

struct Fixture {
    ParameterStore store;
    std::vector<SvdTriplet> triplets;

    SvdTriplet& add(std::size_t d, std::size_t k, std::size_t r, Rng& rng) {
        const std::string name = "w" + std::to_string(triplets.size());
        Parameter& base = store.add(name, random_tensor(rng, {d, k}), true);
        triplets.push_back(make_triplet(store, base, name + ".adapter", r, rng));
        return triplets.back();
    }
};

Tensor dense_delta(const SvdTriplet& t) {
    const std::size_t d = t.out_dim(), k = t.in_dim(), r = t.rank_cap;
    Tensor w(Shape{d, k});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < r; ++s) acc += t.p->value.at(i, s) * t.lambda->value[s] * t.q->value.at(s, j);
            w.at(i, j) = acc;
        }
    return w;
}

// Independent reference: sort indices by |lambda| descending, ties by enumeration order.
std::vector<std::vector<double>> brute_force_prune(const std::vector<std::vector<double>>& lambdas, std::size_t b) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t t = 0; t < lambdas.size(); ++t)
        for (std::size_t i = 0; i < lambdas[t].size(); ++i) slots.emplace_back(t, i);
    auto out = lambdas;
    for (auto& v : out) std::fill(v.begin(), v.end(), 0.0);
    std::vector<bool> taken(slots.size(), false);
    for (std::size_t round = 0; round < std::min(b, slots.size()); ++round) {
        std::size_t best = slots.size();
        for (std::size_t s = 0; s < slots.size(); ++s) {
            if (taken[s]) continue;
            const double v = std::abs(lambdas[slots[s].first][slots[s].second]);
            if (best == slots.size() || v > std::abs(lambdas[slots[best].first][slots[best].second])) best = s;
        }
        taken[best] = true;
        out[slots[best].first][slots[best].second] = lambdas[slots[best].first][slots[best].second];
    }
    return out;
}

BudgetSchedule schedule(std::size_t T, std::size_t ti, std::size_t tf, std::size_t b0, std::size_t b1) {
    BudgetSchedule s;
    s.total_steps = T;
    s.warmup_steps = ti;
    s.final_steps = tf;
    s.b_init = b0;
    s.b_target = b1;
    return s;
}

}  // namespace

TEST_CASE("adapted forward hand case") {
    ParameterStore store;
    Rng rng(1);
    Parameter& base = store.add("w", Tensor::identity(2), true);
    SvdTriplet t = make_triplet(store, base, "w.adapter", 1, rng);
    t.p->value = Tensor::matrix(2, 1, {1, 0});
    t.lambda->value = Tensor::vector({2});
    t.q->value = Tensor::matrix(1, 2, {0, 1});
    Tape tape;
    const Tensor h = adapted_forward(tape.constant(Tensor::matrix(2, 1, {1, 1})), base, t).value();
    CHECK(h == Tensor::matrix(2, 1, {3, 1}));
}

TEST_CASE("adapted forward matches dense construction") {
    Rng rng(21);
    Fixture f;
    SvdTriplet& t = f.add(8, 8, 2, rng);
    t.lambda->value = random_tensor(rng, {2});
    const Tensor x = random_tensor(rng, {8, 5});
    Tape tape;
    const Tensor h = adapted_forward(tape.constant(x), *t.base, t).value();
    Tensor w = dense_delta(t);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] += t.base->value[i];
    CHECK(test::max_abs_diff(h, kernels::matmul(w, x)) < 1e-12);
}

TEST_CASE("zero increment is bitwise the base product") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Fixture f;
        SvdTriplet& t = f.add(6 + trial, 4 + trial, 2, rng);
        const Tensor x = random_tensor(rng, {t.in_dim(), 3}, -5, 5);
        Tape tape;
        const Tensor h = adapted_forward(tape.constant(x), *t.base, t).value();
        CHECK(test::bitwise_equal(h, kernels::matmul(t.base->value, x)));
    }
}

TEST_CASE("adapter construction and forward contracts") {
    ParameterStore store;
    Rng rng(2);
    Parameter& live = store.add("live", Tensor(Shape{8, 8}), false);
    CHECK_THROWS_AS(make_triplet(store, live, "x", 2, rng), ContractError);
    Parameter& base = store.add("base", Tensor(Shape{8, 6}), true);
    CHECK_THROWS_AS(make_triplet(store, base, "y", 4, rng), ContractError);
    CHECK_THROWS_AS(make_triplet(store, base, "z", 0, rng), ContractError);
    const SvdTriplet t = make_triplet(store, base, "ok", 3, rng);
    CHECK(t.lambda->value == Tensor(Shape{3}));
    CHECK(t.p->value.shape() == Shape{8, 3});
    CHECK(t.q->value.shape() == Shape{3, 6});
    Tape tape;
    CHECK_THROWS_AS(adapted_forward(tape.constant(Tensor(Shape{5, 2})), base, t), ShapeError);
    Parameter& other = store.add("other", Tensor(Shape{8, 6}), true);
    CHECK_THROWS_AS(adapted_forward(tape.constant(Tensor(Shape{6, 2})), other, t), ContractError);
}

TEST_CASE("gradients reach only the triplet") {
    Rng rng(8);
    Fixture f;
    SvdTriplet& t = f.add(6, 6, 2, rng);
    t.lambda->value = random_tensor(rng, {2});
    Tape tape;
    tape.backward(sum(adapted_forward(tape.constant(random_tensor(rng, {6, 3})), *t.base, t)));
    CHECK(t.base->grad == Tensor(Shape{6, 6}));
    double mass = 0.0;
    for (Parameter* p : {t.p, t.lambda, t.q})
        for (double g : p->grad.values()) mass += std::abs(g);
    CHECK(mass > 0.0);
}

TEST_CASE("orthogonality regularizer values") {
    Rng rng(5);
    Fixture f;
    SvdTriplet& t = f.add(6, 5, 2, rng);
    // columns e0, e1 of P; rows e2, e3 of Q
    t.p->value = Tensor(Shape{6, 2});
    t.p->value.at(0, 0) = 1.0;
    t.p->value.at(1, 1) = 1.0;
    t.q->value = Tensor(Shape{2, 5});
    t.q->value.at(0, 2) = 1.0;
    t.q->value.at(1, 3) = 1.0;
    {
        Tape tape;
        CHECK(orthogonality_regularizer(tape, t).value().item() == 0.0);
    }
    // rotated orthonormal frame
    const double c = std::cos(0.3), s = std::sin(0.3);
    t.p->value = Tensor(Shape{6, 2});
    t.p->value.at(0, 0) = c;
    t.p->value.at(1, 0) = s;
    t.p->value.at(0, 1) = -s;
    t.p->value.at(1, 1) = c;
    {
        Tape tape;
        CHECK(orthogonality_regularizer(tape, t).value().item() < 1e-30);
    }
    t.p->value.fill(0.0);
    t.q->value.fill(0.0);
    {
        Tape tape;
        CHECK(orthogonality_regularizer(tape, t).value().item() == 4.0);  // 2r
    }
    for (int trial = 0; trial < 20; ++trial) {
        t.p->value = random_tensor(rng, {6, 2}, -2, 2);
        t.q->value = random_tensor(rng, {2, 5}, -2, 2);
        Tape tape;
        CHECK(orthogonality_regularizer(tape, t).value().item() > 0.0);
    }
}

TEST_CASE("gradient descent drives the regularizer to zero") {
    Rng rng(17);
    Fixture f;
    SvdTriplet& t = f.add(16, 16, 4, rng);
    t.p->value = random_tensor(rng, {16, 4}, -0.5, 0.5);
    t.q->value = random_tensor(rng, {4, 16}, -0.5, 0.5);
    double r = 0.0;
    for (int step = 0; step < 500; ++step) {
        f.store.zero_grad();
        Tape tape;
        const Var loss = orthogonality_regularizer(tape, t);
        r = loss.value().item();
        tape.backward(loss);
        for (Parameter* p : {t.p, t.q})
            for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] -= 0.05 * p->grad[i];
    }
    CHECK(r < 1e-3);
}

TEST_CASE("adapter gradients pass central differences") {
    for (const auto& r : primitive_grad_suite()) {
        if (r.name.rfind("adapted_forward", 0) != 0 && r.name != "orthogonality_regularizer") continue;
        INFO(r.name);
        CHECK(r.max_rel_error < kPrimitiveTolerance);
    }
}

TEST_CASE("importance scores") {
    Rng rng(3);
    Fixture f;
    f.add(4, 4, 2, rng).lambda->value = Tensor::vector({1, 2});
    f.add(4, 2, 1, rng).lambda->value = Tensor::vector({-3});
    RankAllocator alloc(f.triplets, schedule(1, 0, 0, 3, 3));
    const std::vector<ImportanceEntry> want{{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 3.0}};
    CHECK(alloc.importance_scores() == want);
    f.triplets[0].lambda->value = Tensor::vector({0.5, -0.2});
    const auto s = alloc.importance_scores();
    CHECK(s[0].score == 0.5);
    CHECK(s[1].score == 0.2);
    f.triplets[0].lambda->value.fill(0.0);
    f.triplets[1].lambda->value.fill(0.0);
    for (const auto& e : alloc.importance_scores()) CHECK(e.score == 0.0);
}

TEST_CASE("budget schedule") {
    const BudgetSchedule s = schedule(100, 0, 0, 16, 4);
    CHECK(s.budget_at(0) == 16);
    CHECK(s.budget_at(100) == 4);
    CHECK(s.budget_at(50) == 6);  // 4 + 12 * 0.125 = 5.5 rounds up
    CHECK_THROWS_AS(s.budget_at(101), ContractError);
    CHECK_THROWS_AS(schedule(10, 5, 5, 4, 2).validate(), ContractError);
    CHECK_THROWS_AS(schedule(10, 0, 0, 2, 4).validate(), ContractError);

    const BudgetSchedule p = schedule(50, 5, 10, 32, 16);
    CHECK(p.budget_at(4) == 32);
    CHECK(p.budget_at(5) == 32);
    CHECK(p.budget_at(40) == 16);
    for (std::size_t t = 0; t <= 50; ++t) {
        const double u = t < 5 ? 0.0 : std::min(1.0, (t - 5.0) / 35.0);
        const double expect = t >= 40 ? 16.0 : 16.0 + 16.0 * std::pow(1.0 - u, 3);
        CHECK(static_cast<double>(p.budget_at(t)) == std::floor(expect + 0.5));
    }
}

TEST_CASE("budget schedule is non-increasing") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t T = 1 + rng.below(300);
        const std::size_t ti = rng.below(T);
        const std::size_t tf = rng.below(T - ti);
        const std::size_t b0 = rng.below(64);
        const std::size_t b1 = rng.below(b0 + 1);
        const BudgetSchedule s = schedule(T, ti, tf, b0, b1);
        REQUIRE_NOTHROW(s.validate());
        CHECK(s.budget_at(0) == b0);
        CHECK(s.budget_at(T) == b1);
        for (std::size_t t = 0; t < T; ++t) CHECK(s.budget_at(t + 1) <= s.budget_at(t));
    }
}

TEST_CASE("pruning examples") {
    Rng rng(6);
    SUBCASE("single triplet") {
        Fixture f;
        f.add(6, 6, 3, rng).lambda->value = Tensor::vector({0.5, -0.2, 0.9});
        RankAllocator alloc(f.triplets, schedule(1, 0, 0, 3, 3));
        const PruneReport rep = alloc.prune_to(2, 7);
        CHECK(f.triplets[0].lambda->value == Tensor::vector({0.5, 0, 0.9}));
        CHECK(rep.step == 7);
        CHECK(rep.budget == 2);
        CHECK(rep.kept == std::vector<SlotRef>{{0, 0}, {0, 2}});
        CHECK(rep.pruned == std::vector<SlotRef>{{0, 1}});
        alloc.prune_to(3);
        CHECK(f.triplets[0].lambda->value == Tensor::vector({0.5, 0, 0.9}));
    }
    SUBCASE("two triplets") {
        Fixture f;
        f.add(4, 4, 2, rng).lambda->value = Tensor::vector({0.1, 0.7});
        f.add(4, 4, 2, rng).lambda->value = Tensor::vector({0.4, 0.05});
        RankAllocator alloc(f.triplets, schedule(1, 0, 0, 2, 2));
        alloc.allocate(0);
        CHECK(f.triplets[0].lambda->value == Tensor::vector({0, 0.7}));
        CHECK(f.triplets[1].lambda->value == Tensor::vector({0.4, 0}));
    }
    SUBCASE("budget beyond capacity changes nothing") {
        Fixture f;
        f.add(4, 4, 2, rng).lambda->value = Tensor::vector({0.3, -0.1});
        RankAllocator alloc(f.triplets, schedule(1, 0, 0, 10, 10));
        alloc.allocate(1);
        CHECK(f.triplets[0].lambda->value == Tensor::vector({0.3, -0.1}));
        CHECK(alloc.step() == 1);
    }
    SUBCASE("ties go to the lower slot") {
        Fixture f;
        f.add(4, 4, 2, rng).lambda->value = Tensor::vector({0.5, -0.5});
        f.add(4, 4, 2, rng).lambda->value = Tensor::vector({0.5, 0.2});
        RankAllocator alloc(f.triplets, schedule(1, 0, 0, 2, 2));
        alloc.prune_to(2);
        CHECK(f.triplets[0].lambda->value == Tensor::vector({0.5, -0.5}));
        CHECK(f.triplets[1].lambda->value == Tensor::vector({0, 0}));
    }
}

TEST_CASE("pruning matches a brute-force global top-b") {
    Rng rng(2024);
    for (int inst = 0; inst < 200; ++inst) {
        Fixture f;
        std::vector<std::vector<double>> lambdas;
        for (std::size_t t = 0; t < 3; ++t) {
            const std::size_t r = 1 + rng.below(3);
            SvdTriplet& tr = f.add(8, 8, r, rng);
            std::vector<double> v(r);
            for (auto& x : v) x = rng.below(4) == 0 ? std::round(rng.uniform(-2, 2)) : rng.uniform(-2, 2);
            for (std::size_t i = 0; i < r; ++i) tr.lambda->value[i] = v[i];
            lambdas.push_back(v);
        }
        std::size_t total = 0;
        for (auto& v : lambdas) total += v.size();
        const std::size_t b = rng.below(total + 2);
        RankAllocator alloc(f.triplets, schedule(1, 0, 0, b, b));
        const PruneReport rep = alloc.allocate(0);
        const auto want = brute_force_prune(lambdas, b);
        std::size_t nnz = 0;
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t i = 0; i < lambdas[t].size(); ++i) {
                CHECK(f.triplets[t].lambda->value[i] == want[t][i]);
                if (want[t][i] != 0.0) ++nnz;
            }
        CHECK(rep.kept.size() + rep.pruned.size() == total);
        CHECK(alloc.nonzero_count() == nnz);
    }
}

TEST_CASE("allocation invariants over a schedule sweep") {
    Rng rng(77);
    Fixture f;
    for (int i = 0; i < 4; ++i) f.add(8, 8, 3, rng);
    RankAllocator alloc(f.triplets, schedule(60, 6, 12, 12, 5));
    for (std::size_t t = 0; t <= 60; ++t) {
        // emulate an update that can revive pruned entries
        for (auto& tr : f.triplets)
            for (auto& v : tr.lambda->value.values()) v += rng.uniform(-0.1, 0.1) + (v == 0.0 ? 1e-3 : 0.0);
        std::vector<Tensor> before;
        for (auto& tr : f.triplets) before.push_back(tr.lambda->value);
        const PruneReport rep = alloc.allocate(t);
        CHECK(alloc.nonzero_count() == std::min(alloc.schedule().budget_at(t), alloc.total_slots()));
        for (const SlotRef& k : rep.kept) {
            const double a = f.triplets[k.triplet].lambda->value[k.index];
            const double b = before[k.triplet][k.index];
            CHECK(std::memcmp(&a, &b, sizeof a) == 0);
        }
        for (const SlotRef& p : rep.pruned) CHECK(f.triplets[p.triplet].lambda->value[p.index] == 0.0);
        std::vector<Tensor> once;
        for (auto& tr : f.triplets) once.push_back(tr.lambda->value);
        alloc.allocate(t);
        for (std::size_t i = 0; i < f.triplets.size(); ++i)
            CHECK(test::bitwise_equal(once[i], f.triplets[i].lambda->value));
    }
}
