// SPDX-License-Identifier: Apache-2.0

#include "ssom/grad_suite.hpp"

#include "ssom/adalora.hpp"
#include "ssom/grad_check.hpp"
#include "ssom/model.hpp"
#include "ssom/objective.hpp"
#include "ssom/random.hpp"

namespace ssom {

namespace {


Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Uniform magnitude in [lo, hi] with a random sign; keeps values away from zero.
Tensor signed_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t = uniform_tensor(rng, std::move(shape), lo, hi);
    for (auto& v : t.values()) v = rng.uniform() < 0.5 ? -v : v;
    return t;
}

// Contracts the op output with fixed random weights so every output entry matters.
Var project(Var y, const Tensor& w) { return sum(mul(y, y.tape().constant(w))); }

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    // Checks d/dx of sum(w * op(x)) for a single input.
    void unary(const std::string& name, const Tensor& x, const std::function<Var(Var)>& op) {
        const Shape out_shape = [&] {
            Tape tape;
            return op(tape.constant(x)).shape();
        }();
        const Tensor w = uniform_tensor(rng_, out_shape, -1.0, 1.0);
        record(name, grad_check([&](Tape&, Var v) { return project(op(v), w); }, x, kGradEps));
    }

    // Checks both inputs of a binary op.
    void binary(const std::string& name, const Tensor& a, const Tensor& b, const std::function<Var(Var, Var)>& op) {
        const Shape out_shape = [&] {
            Tape tape;
            return op(tape.constant(a), tape.constant(b)).shape();
        }();
        const Tensor w = uniform_tensor(rng_, out_shape, -1.0, 1.0);
        const double ea =
            grad_check([&](Tape& t, Var v) { return project(op(v, t.constant(b)), w); }, a, kGradEps);
        const double eb =
            grad_check([&](Tape& t, Var v) { return project(op(t.constant(a), v), w); }, b, kGradEps);
        record(name, std::max(ea, eb));
    }

    void record(const std::string& name, double err) {
        results_.push_back({name, err, kPrimitiveTolerance});
    }

    Rng& rng() { return rng_; }
    std::vector<GradCaseResult> take() { return std::move(results_); }

private:
    Rng rng_;
    std::vector<GradCaseResult> results_;
};

}  // namespace

encoder::EncoderConfig grad_check_config() {
    encoder::EncoderConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.adapter_rank = 2;
    c.base_seed = 99;
    return c;
}

std::vector<GradCaseResult> primitive_grad_suite(std::uint64_t seed) {
    Suite s(seed);
    Rng& r = s.rng();
    auto u = [&](Shape shape, double lo = -1.0, double hi = 1.0) { return uniform_tensor(r, std::move(shape), lo, hi); };

    s.binary("matmul", u({5, 4}), u({4, 3}), [](Var a, Var b) { return matmul(a, b); });
    s.unary("transpose", u({3, 5}), [](Var a) { return transpose(a); });
    s.binary("add", u({3, 4}), u({3, 4}), [](Var a, Var b) { return add(a, b); });
    s.binary("sub", u({3, 4}), u({3, 4}), [](Var a, Var b) { return sub(a, b); });
    s.binary("mul", u({3, 4}), u({3, 4}), [](Var a, Var b) { return mul(a, b); });
    s.binary("div", u({3, 4}), signed_tensor(r, {3, 4}, 0.5, 2.0), [](Var a, Var b) { return div(a, b); });
    s.unary("scale", u({3, 4}), [](Var a) { return scale(a, -1.7); });
    s.unary("add_scalar", u({3, 4}), [](Var a) { return add_scalar(a, 0.3); });
    s.binary("add_row", u({4, 3}), u({3}), [](Var a, Var b) { return add_row(a, b); });
    s.binary("add_row_matrix", u({4, 3}), u({1, 3}), [](Var a, Var b) { return add_row(a, b); });
    s.binary("scale_rows", u({4, 3}), u({4}), [](Var a, Var v) { return scale_rows(a, v); });
    s.unary("sigmoid", u({3, 4}, -3.0, 3.0), [](Var a) { return sigmoid(a); });
    s.unary("gelu", u({3, 4}, -3.0, 3.0), [](Var a) { return gelu(a); });
    s.unary("log", u({3, 4}, 0.2, 2.0), [](Var a) { return log(a); });
    {
        // Entries stay at least 0.1 away from the clamp bounds so the kink is never straddled.
        Tensor x = signed_tensor(r, {4, 4}, 0.1, 0.4);
        for (std::size_t i = 0; i < 4; ++i) x[i] += 1.0;  // first row above hi
        s.unary("clamp", x, [](Var a) { return clamp(a, -0.5, 0.5); });
    }
    s.unary("sum", u({3, 4}), [](Var a) { return sum(a); });
    s.unary("mean", u({3, 4}), [](Var a) { return mean(a); });
    s.unary("frobenius_norm_sq", u({3, 4}), [](Var a) { return frobenius_norm_sq(a); });
    s.unary("softmax_rows", u({3, 5}, -2.0, 2.0), [](Var a) { return softmax_rows(a); });
    {
        const Tensor x = u({4, 6}, -2.0, 2.0), g = u({6}, 0.5, 1.5), b = u({6});
        s.unary("layer_norm_rows.x", x, [&](Var v) {
            return layer_norm_rows(v, v.tape().constant(g), v.tape().constant(b));
        });
        s.unary("layer_norm_rows.gamma", g, [&](Var v) {
            return layer_norm_rows(v.tape().constant(x), v, v.tape().constant(b));
        });
        s.unary("layer_norm_rows.beta", b, [&](Var v) {
            return layer_norm_rows(v.tape().constant(x), v.tape().constant(g), v);
        });
    }
    s.unary("slice_rows", u({5, 3}), [](Var a) { return slice_rows(a, 1, 3); });
    s.unary("slice_cols", u({3, 5}), [](Var a) { return slice_cols(a, 2, 2); });
    s.binary("concat_rows", u({2, 3}), u({3, 3}), [](Var a, Var b) {
        const Var parts[] = {a, b};
        return concat_rows(parts);
    });
    s.binary("concat_cols", u({3, 2}), u({3, 4}), [](Var a, Var b) {
        const Var parts[] = {a, b};
        return concat_cols(parts);
    });
    s.unary("reshape", u({3, 4}), [](Var a) { return reshape(a, Shape{2, 6}); });
    s.unary("gather", u({2, 3}), [](Var a) { return gather(a, {5, 0, 0, 3, 2, 5, 1, 4}, Shape{2, 4}); });

    {
        const Tensor target = [&] {
            Tensor t(Shape{4, 4});
            for (auto& v : t.values()) v = r.uniform() < 0.5 ? 1.0 : 0.0;
            t[0] = 1.0;
            return t;
        }();
        s.unary("bce_loss", u({4, 4}, 0.05, 0.95), [&](Var p) { return objective::bce_loss(p, target); });
        s.unary("iou_loss", u({4, 4}, 0.05, 0.95), [&](Var p) { return objective::iou_loss(p, target); });
    }

    {
        ParameterStore store;
        Parameter& w0 = store.add("w0", u({6, 8}), true);
        Rng init(seed, 11);
        auto t = adalora::make_triplet(store, w0, "w0.adapter", 2, init);
        t.p->value = u({6, 2});
        t.q->value = u({2, 8});
        t.lambda->value = signed_tensor(r, {2}, 0.5, 1.5);
        const Tensor x = u({8, 3});
        const Tensor w = u({6, 3});
        Parameter* params[] = {t.p, t.lambda, t.q};
        s.record("adapted_forward.params", grad_check_parameters(
                                               [&](Tape& tape) {
                                                   return project(adapted_forward(tape.constant(x), w0, t), w);
                                               },
                                               params, kGradEps));
        s.record("adapted_forward.x",
                 grad_check([&](Tape&, Var xv) { return project(adapted_forward(xv, w0, t), w); }, x, kGradEps));
        s.record("orthogonality_regularizer",
                 grad_check_parameters([&](Tape& tape) { return adalora::orthogonality_regularizer(tape, t); },
                                       params, kGradEps));
    }
    return s.take();
}

GradCaseResult full_graph_grad_check(std::uint64_t seed, double eps) {
    const auto config = grad_check_config();
    model::SsomModel m(config, seed);
    Rng rng(seed, 3);
    for (Parameter* p : m.parameters().all()) {
        const bool is_lambda = p->name.ends_with(".lambda");
        const bool is_gain = p->name.ends_with(".gamma");
        for (auto& v : p->value.values()) {
            if (is_lambda) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
            else if (is_gain) v = rng.uniform(0.5, 1.5);
            else v = rng.normal(0.0, 0.4);
        }
    }
    Tensor image(Shape{config.image_size, config.image_size, 3});
    for (auto& v : image.values()) v = rng.uniform();
    Tensor mask(Shape{config.image_size, config.image_size});
    for (std::size_t y = 2; y < 6; ++y)
        for (std::size_t x = 1; x < 5; ++x) mask.at(y, x) = 1.0;

    const auto triplets = m.triplets();
    auto params = m.parameters().trainable();
    const double err = grad_check_parameters(
        [&](Tape& tape) {
            const Var probs = sigmoid(m.forward_logits(tape, image));
            return objective::total_loss(probs, mask, triplets, objective::kDefaultLambdaReg).total;
        },
        params, eps);
    return {"full_graph", err, kGraphTolerance};
}

}  // namespace ssom
