// SPDX-License-Identifier: Apache-2.0

#include "ssom/model.hpp"

#include <cmath>

#include "ssom/error.hpp"

namespace ssom::model {

namespace {
constexpr double kDecoderInitStd = 0.02;
constexpr std::uint64_t kAdapterStream = 1;
constexpr std::uint64_t kDecoderStream = 2;

adalora::BudgetSchedule keep_all_schedule(std::size_t slots) {
    adalora::BudgetSchedule s;
    s.total_steps = 1;
    s.b_init = slots;
    s.b_target = slots;
    return s;
}
}  // namespace

SsomModel::SsomModel(const encoder::EncoderConfig& config, std::uint64_t init_seed) {
    encoder_ = encoder::Encoder::create_base(store_, config);
    Rng adapter_rng(init_seed, kAdapterStream);
    encoder_.attach_adapters(store_, adapter_rng);
    build_decoder(init_seed);
    const auto triplets = encoder_.triplets();
    std::size_t slots = 0;
    for (const auto& t : triplets) slots += t.rank_cap;
    allocator_ = adalora::RankAllocator(triplets, keep_all_schedule(slots));

    const std::size_t p = config.patch_size, g = config.grid(), side = config.image_size;
    unfold_index_.resize(side * side);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const std::size_t token = (y / p) * g + x / p;
            const std::size_t within = (y % p) * p + x % p;
            unfold_index_[y * side + x] = token * p * p + within;
        }
    }
}

void SsomModel::build_decoder(std::uint64_t init_seed) {
    Rng rng(init_seed, kDecoderStream);
    const std::size_t n = config().embed_dim;
    const std::size_t pp = config().patch_size * config().patch_size;
    prompt_.embedding = &store_.add("prompt.embedding", rng.normal_tensor(Shape{n}, kDecoderInitStd), false);
    decoder_.ln_in_gamma = &store_.add("decoder.ln_in.gamma", Tensor(Shape{n}, 1.0), false);
    decoder_.ln_in_beta = &store_.add("decoder.ln_in.beta", Tensor(Shape{n}, 0.0), false);
    decoder_.wq = &store_.add("decoder.attn.wq", rng.normal_tensor(Shape{n, n}, kDecoderInitStd), false);
    decoder_.wk = &store_.add("decoder.attn.wk", rng.normal_tensor(Shape{n, n}, kDecoderInitStd), false);
    decoder_.wv = &store_.add("decoder.attn.wv", rng.normal_tensor(Shape{n, n}, kDecoderInitStd), false);
    decoder_.ln_out_gamma = &store_.add("decoder.ln_out.gamma", Tensor(Shape{n}, 1.0), false);
    decoder_.ln_out_beta = &store_.add("decoder.ln_out.beta", Tensor(Shape{n}, 0.0), false);
    decoder_.head_weight =
        &store_.add("decoder.head.weight", rng.normal_tensor(Shape{n, pp}, kDecoderInitStd), false);
    decoder_.head_bias = &store_.add("decoder.head.bias", Tensor(Shape{pp}, 0.0), false);
}

Var SsomModel::decode(Var tokens) const {
    Tape& tape = tokens.tape();
    const std::size_t n = config().embed_dim;
    const Var e = layer_norm_rows(tokens, tape.param(*decoder_.ln_in_gamma), tape.param(*decoder_.ln_in_beta));
    const Var prompt = reshape(tape.param(*prompt_.embedding), Shape{1, n});
    const Var q = matmul(prompt, tape.param(*decoder_.wq));
    const Var k = matmul(e, tape.param(*decoder_.wk));
    const Var v = matmul(e, tape.param(*decoder_.wv));
    const Var weights = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(n))));
    const Var attended = matmul(weights, v);  // 1 x n
    const Var conditioned = add_row(e, attended);
    const Var z = layer_norm_rows(conditioned, tape.param(*decoder_.ln_out_gamma),
                                  tape.param(*decoder_.ln_out_beta));
    const Var patch_logits = add_row(matmul(z, tape.param(*decoder_.head_weight)), tape.param(*decoder_.head_bias));
    const std::size_t side = config().image_size;
    return gather(patch_logits, unfold_index_, Shape{side, side});
}

Var SsomModel::forward_logits(Tape& tape, const Tensor& image, encoder::AdapterMode mode) const {
    return decode(encoder_.encode(tape, image, mode));
}

Tensor predict_logits(const SsomModel& model, const Tensor& image) {
    Tape tape;
    return model.forward_logits(tape, image).value();
}

Tensor sigmoid_map(const Tensor& logits) {
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const double x = logits[i];
        if (x >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            out[i] = e / (1.0 + e);
        }
    }
    return out;
}

Tensor binarize(const Tensor& logits, double threshold) {
    Tensor probs = sigmoid_map(logits);
    for (auto& v : probs.values()) v = v >= threshold ? 1.0 : 0.0;
    return probs;
}

std::vector<Parameter*> trainable_parameters(SsomModel& model) { return model.parameters().trainable(); }

adalora::BudgetSchedule default_schedule(const encoder::EncoderConfig& config, std::size_t total_steps) {
    const std::size_t slots = 2 * config.num_blocks * config.adapter_rank;
    adalora::BudgetSchedule s;
    s.total_steps = total_steps;
    s.warmup_steps = total_steps / 10;
    s.final_steps = total_steps / 5;
    s.b_init = slots;
    s.b_target = slots / 2;
    s.validate();
    return s;
}

}  // namespace ssom::model
