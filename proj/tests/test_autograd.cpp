// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "ssom/autograd.hpp"
#include "ssom/error.hpp"
#include "ssom/grad_check.hpp"
#include "ssom/grad_suite.hpp"
#include "test_util.hpp"

using namespace ssom;
using test::random_tensor;

TEST_CASE("matmul hand cases") {
    Tape tape;
    const Var a = tape.constant(Tensor::identity(2));
    const Var b = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(matmul(a, b).value() == Tensor::matrix(2, 2, {1, 2, 3, 4}));
    const Var r = tape.constant(Tensor::matrix(1, 2, {1, 2}));
    const Var c = tape.constant(Tensor::matrix(2, 1, {3, 4}));
    CHECK(matmul(r, c).value().at(0, 0) == 11.0);
}

TEST_CASE("shape errors name both shapes") {
    Tape tape;
    const Var a = tape.constant(Tensor(Shape{2, 3}));
    const Var b = tape.constant(Tensor(Shape{2, 3}));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
    try {
        (void)matmul(a, tape.constant(Tensor(Shape{4, 5})));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, tape.constant(Tensor(Shape{3, 2}))), ShapeError);
}

TEST_CASE("softmax rows") {
    Tape tape;
    const Tensor s = softmax_rows(tape.constant(Tensor::matrix(3, 3, {0, 0, 0, 1, 2, 3, 1000, 0, -1000}))).value();
    CHECK(s.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // direct exp/sum evaluation of [1, 2, 3]
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(s.at(1, 0) - std::exp(1.0) / z) < 1e-15);
    CHECK(std::abs(s.at(1, 0) - 0.09003057) < 1e-8);
    CHECK(std::abs(s.at(1, 1) - 0.24472847) < 1e-8);
    CHECK(std::abs(s.at(1, 2) - 0.66524096) < 1e-8);
    CHECK(s.at(2, 0) == 1.0);
    CHECK(s.at(2, 1) == 0.0);
    Rng rng(3);
    const Tensor r = softmax_rows(tape.constant(random_tensor(rng, {5, 7}, -30, 30))).value();
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 7; ++j) row += r.at(i, j);
        CHECK(std::abs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax backward matches the analytic Jacobian") {
    Rng rng(11);
    const Tensor x = random_tensor(rng, {3, 3}, -2, 2);
    const Tensor w = random_tensor(rng, {3, 3});
    Tape tape;
    const Var xv = tape.leaf(x);
    const Var y = softmax_rows(xv);
    tape.backward(sum(mul(y, tape.constant(w))));
    const Tensor& g = tape.grad(xv);
    const Tensor& s = y.value();
    for (std::size_t i = 0; i < 3; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            double expected = 0.0;  // sum_k w_ik * s_ik * (delta_kj - s_ij)
            for (std::size_t k = 0; k < 3; ++k) expected += w.at(i, k) * s.at(i, k) * ((k == j) - s.at(i, j));
            CHECK(std::abs(g.at(i, j) - expected) < 1e-10);
            row_sum += g.at(i, j);
        }
        CHECK(std::abs(row_sum) < 1e-10);  // softmax is invariant to row shifts
    }
}

TEST_CASE("elementwise values") {
    Tape tape;
    CHECK(frobenius_norm_sq(tape.constant(Tensor::identity(3))).value().item() == 3.0);
    CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);
    CHECK(std::abs(gelu(tape.constant(Tensor::scalar(1.0))).value().item() - 0.5 * (1 + std::erf(1 / std::sqrt(2.0)))) <
          1e-15);
    CHECK(clamp(tape.constant(Tensor::vector({-2, 0.5, 2})), 0.0, 1.0).value() == Tensor::vector({0, 0.5, 1}));
    CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), NumericError);
    const Tensor big = sigmoid(tape.constant(Tensor::vector({-800, 800}))).value();
    CHECK(big[0] == 0.0);
    CHECK(big[1] == 1.0);
}

TEST_CASE("backward basics") {
    SUBCASE("sum gives ones") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{2, 3}, 0.7));
        tape.backward(sum(x));
        CHECK(tape.grad(x) == Tensor(Shape{2, 3}, 1.0));
    }
    SUBCASE("mean of ten gives 0.1") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{10}, 3.0));
        tape.backward(mean(x));
        for (double g : tape.grad(x).values()) CHECK(g == doctest::Approx(0.1).epsilon(1e-15));
    }
    SUBCASE("frobenius gives 2x") {
        Rng rng(1);
        const Tensor xv = random_tensor(rng, {3, 4});
        Tape tape;
        const Var x = tape.leaf(xv);
        tape.backward(frobenius_norm_sq(x));
        for (std::size_t i = 0; i < xv.numel(); ++i) CHECK(tape.grad(x)[i] == 2.0 * xv[i]);
    }
    SUBCASE("clamp passes nothing outside the interval") {
        Tape tape;
        const Var x = tape.leaf(Tensor::vector({-2, 0.5, 2}));
        tape.backward(sum(clamp(x, 0.0, 1.0)));
        CHECK(tape.grad(x) == Tensor::vector({0, 1, 0}));
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{2}));
        CHECK_THROWS_AS(tape.backward(x), ContractError);
    }
    SUBCASE("repeated backward accumulates") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{2}, 1.0));
        const Var loss = sum(scale(x, 3.0));
        tape.backward(loss);
        tape.backward(loss);
        CHECK(tape.grad(x) == Tensor(Shape{2}, 6.0));
    }
    SUBCASE("parameters accumulate, frozen parameters stay untouched") {
        ParameterStore store;
        Parameter& w = store.add("w", Tensor(Shape{2}, 2.0), false);
        Parameter& f = store.add("f", Tensor(Shape{2}, 5.0), true);
        for (int pass = 0; pass < 2; ++pass) {
            Tape tape;
            tape.backward(sum(mul(tape.param(w), tape.param(f))));
        }
        CHECK(w.grad == Tensor(Shape{2}, 10.0));
        CHECK(f.grad == Tensor(Shape{2}, 0.0));
    }
    SUBCASE("shared subexpression is visited once per use") {
        Tape tape;
        const Var x = tape.leaf(Tensor::scalar(3.0));
        const Var y = mul(x, x);
        tape.backward(add(y, y));
        CHECK(tape.grad(x).item() == 12.0);
    }
}

TEST_CASE("forward is bitwise deterministic") {
    Rng rng(9);
    const Tensor a = random_tensor(rng, {6, 5}), b = random_tensor(rng, {5, 4});
    Tape t1, t2;
    const Tensor y1 = softmax_rows(gelu(matmul(t1.constant(a), t1.constant(b)))).value();
    const Tensor y2 = softmax_rows(gelu(matmul(t2.constant(a), t2.constant(b)))).value();
    CHECK(test::bitwise_equal(y1, y2));
}

TEST_CASE("relative error metric") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
    CHECK_THROWS_AS(grad_check([](Tape&, Var x) { return sum(x); }, Tensor(Shape{2}), 0.0), ContractError);
    CHECK_THROWS_AS(grad_check([](Tape&, Var x) { return sum(x); }, Tensor(Shape{2}), 1e-2), ContractError);
}

TEST_CASE("matmul finite differences") {
    Rng rng(5);
    const Tensor a = random_tensor(rng, {5, 4}), b = random_tensor(rng, {4, 3}), w = random_tensor(rng, {5, 3});
    const double err = grad_check(
        [&](Tape& t, Var x) { return sum(mul(matmul(x, t.constant(b)), t.constant(w))); }, a, kGradEps);
    CHECK(err < kPrimitiveTolerance);
}

TEST_CASE("every primitive passes central differences") {
    for (const auto& r : primitive_grad_suite()) {
        INFO(r.name, " error ", r.max_rel_error);
        CHECK(r.max_rel_error < kPrimitiveTolerance);
    }
}
