// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "ssom/error.hpp"
#include "ssom/model.hpp"
#include "ssom/trainer.hpp"
#include "test_util.hpp"

using namespace ssom;
using namespace ssom::model;
using test::random_tensor;

namespace {

encoder::EncoderConfig tiny() {
    encoder::EncoderConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.adapter_rank = 2;
    return c;
}

Tensor image(Rng& rng, std::size_t side) { return random_tensor(rng, {side, side, 3}, 0.0, 1.0); }

}  // namespace

TEST_CASE("logits cover the image") {
    SsomModel m(encoder::EncoderConfig{}, 0);
    Rng rng(1);
    CHECK(predict_logits(m, image(rng, 32)).shape() == Shape{32, 32});
    SsomModel t(tiny(), 0);
    CHECK(predict_logits(t, image(rng, 16)).shape() == Shape{16, 16});
    CHECK_THROWS_AS(predict_logits(t, image(rng, 32)), ShapeError);
}

TEST_CASE("unfolding places each patch at its pixels") {
    SsomModel m(tiny(), 3);
    const auto& d = m.decoder();
    // Patch logits depend only on the head bias when the head weight is zero.
    d.head_weight->value.fill(0.0);
    for (std::size_t i = 0; i < 16; ++i) d.head_bias->value[i] = static_cast<double>(i);
    Rng rng(2);
    const Tensor logits = predict_logits(m, image(rng, 16));
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) CHECK(logits.at(y, x) == static_cast<double>((y % 4) * 4 + x % 4));
}

TEST_CASE("prompt influences the logits") {
    SsomModel m(tiny(), 5);
    Rng rng(3);
    const Tensor img = image(rng, 16);
    Parameter& prompt = *m.prompt().embedding;

    Tape tape;
    tape.backward(mean(m.forward_logits(tape, img)));
    double mass = 0.0;
    for (double g : prompt.grad.values()) mass += std::abs(g);
    CHECK(mass > 0.0);

    // central-difference spot check on the largest component
    std::size_t best = 0;
    for (std::size_t i = 1; i < prompt.grad.numel(); ++i)
        if (std::abs(prompt.grad[i]) > std::abs(prompt.grad[best])) best = i;
    const double eps = 1e-5, orig = prompt.value[best];
    auto mean_logit = [&] {
        const Tensor l = predict_logits(m, img);
        double s = 0.0;
        for (double v : l.values()) s += v;
        return s / static_cast<double>(l.numel());
    };
    prompt.value[best] = orig + eps;
    const double up = mean_logit();
    prompt.value[best] = orig - eps;
    const double down = mean_logit();
    prompt.value[best] = orig;
    const double numeric = (up - down) / (2 * eps);
    CHECK(numeric != 0.0);
    CHECK(std::abs(numeric - prompt.grad[best]) <= 1e-4 * std::abs(numeric));

    const Tensor before = predict_logits(m, img);
    for (auto& v : prompt.value.values()) v = rng.normal();
    CHECK(test::max_abs_diff(before, predict_logits(m, img)) > 0.0);
}

TEST_CASE("binarize") {
    CHECK(binarize(Tensor(Shape{2, 2}, 0.0)) == Tensor(Shape{2, 2}, 1.0));
    CHECK(binarize(Tensor(Shape{2, 2}, -10.0)) == Tensor(Shape{2, 2}, 0.0));
    CHECK(binarize(Tensor::matrix(1, 2, {-1, 1}), 0.5) == Tensor::matrix(1, 2, {0, 1}));
    CHECK(sigmoid_map(Tensor::vector({0.0}))[0] == 0.5);
}

TEST_CASE("binarized logits and their negation partition the image") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor(rng, {8, 8}, -4, 4);
        logits[0] = 0.0;
        Tensor neg = logits;
        for (auto& v : neg.values()) v = -v;
        const Tensor a = binarize(logits), b = binarize(neg);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            if (logits[i] == 0.0) {
                CHECK(a[i] + b[i] == 2.0);
            } else {
                CHECK(a[i] + b[i] == 1.0);
            }
        }
    }
}

TEST_CASE("trainable set is exactly adapters, prompt and decoder") {
    const encoder::EncoderConfig c;
    SsomModel m(c, 0);
    const auto trainable = trainable_parameters(m);
    const auto frozen = m.parameters().frozen();
    for (const Parameter* p : trainable) {
        const bool adapter = p->name.rfind("encoder.", 0) == 0 && p->name.find(".adapter.") != std::string::npos;
        const bool head = p->name.rfind("decoder.", 0) == 0 || p->name == "prompt.embedding";
        INFO(p->name);
        CHECK((adapter || head));
        CHECK_FALSE(p->frozen);
    }
    for (const Parameter* p : frozen) {
        INFO(p->name);
        CHECK(p->name.rfind("encoder.", 0) == 0);
        CHECK(p->name.find(".adapter.") == std::string::npos);
    }
    CHECK(trainable.size() + frozen.size() == m.parameters().size());
    CHECK(trainable.size() == 3 * 2 * c.num_blocks + 1 + 9);

    const std::size_t n = c.embed_dim, r = c.adapter_rank, pp = c.patch_size * c.patch_size;
    const std::size_t expect = 2 * c.num_blocks * (2 * n * r + r) + n + 2 * n + 3 * n * n + 2 * n + n * pp + pp;
    std::size_t count = 0;
    for (const Parameter* p : trainable) count += p->value.numel();
    CHECK(count == expect);
    CHECK(train::param_report(m.parameters()).trainable == expect);
}

TEST_CASE("zero singular values reproduce the base model bitwise") {
    SsomModel m(tiny(), 9);
    Rng rng(5);
    const Tensor img = image(rng, 16);
    Tape a, b;
    CHECK(test::bitwise_equal(m.forward_logits(a, img, encoder::AdapterMode::Adapted).value(),
                              m.forward_logits(b, img, encoder::AdapterMode::BaseOnly).value()));
    m.triplets()[0].lambda->value[0] = 0.5;
    Tape c, d;
    CHECK_FALSE(test::bitwise_equal(m.forward_logits(c, img, encoder::AdapterMode::Adapted).value(),
                                    m.forward_logits(d, img, encoder::AdapterMode::BaseOnly).value()));
}

TEST_CASE("initial logits are pinned") {
    // Regression pin of the frozen base plus decoder init at seed 0.
    SsomModel m(encoder::EncoderConfig{}, 0);
    Tensor img(Shape{32, 32, 3});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i % 251) / 250.0;
    ParameterStore holder;
    holder.add("logits", predict_logits(m, img), true);
    CHECK(train::frozen_checksum(holder) == "7fc55fa2ad000d9f50274f8cfb027000bdb3309c6f166b0d47eb4dfb94cae6d3");
}

TEST_CASE("default schedule") {
    const auto s = default_schedule(encoder::EncoderConfig{}, 750);
    CHECK(s.b_init == 32);
    CHECK(s.b_target == 16);
    CHECK(s.warmup_steps == 75);
    CHECK(s.final_steps == 150);
    CHECK(s.total_steps == 750);
}
