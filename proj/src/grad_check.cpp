// SPDX-License-Identifier: Apache-2.0

#include "ssom/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ssom/error.hpp"

namespace ssom {

namespace {

void check_eps(double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in (0, 1e-3]");
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
    check_eps(eps);
    Tensor analytic;
    {
        Tape tape;
        Var xv = tape.leaf(x);
        tape.backward(f(tape, xv));
        analytic = tape.grad(xv);
    }
    auto eval = [&](const Tensor& at) {
        Tape tape;
        return f(tape, tape.constant(at)).value().item();
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = eval(probe);
        probe[i] = orig - eps;
        const double down = eval(probe);
        probe[i] = orig;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    return worst;
}

double grad_check_parameters(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                             double eps) {
    check_eps(eps);
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    auto eval = [&] {
        Tape tape;
        return loss(tape).value().item();
    };
    double worst = 0.0;
    for (Parameter* p : params) {
        if (p->frozen) continue;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double up = eval();
            p->value[i] = orig - eps;
            const double down = eval();
            p->value[i] = orig;
            worst = std::max(worst, relative_error(p->grad[i], (up - down) / (2.0 * eps)));
        }
    }
    return worst;
}

}  // namespace ssom
