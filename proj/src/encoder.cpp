// SPDX-License-Identifier: Apache-2.0

#include "ssom/encoder.hpp"

#include <cmath>
#include <string>

#include "ssom/error.hpp"

namespace ssom::encoder {

namespace {
constexpr double kBaseInitStd = 0.02;

std::string block_prefix(std::size_t i) { return "encoder.block" + std::to_string(i); }
}  // namespace

void EncoderConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 || adapter_rank == 0) {
        throw ContractError("encoder config: sizes must be positive");
    }
    if (image_size % patch_size != 0) {
        throw ContractError("encoder config: patch_size " + std::to_string(patch_size) +
                            " does not divide image_size " + std::to_string(image_size));
    }
    if (embed_dim % num_heads != 0) {
        throw ContractError("encoder config: num_heads " + std::to_string(num_heads) +
                            " does not divide embed_dim " + std::to_string(embed_dim));
    }
    if (2 * adapter_rank > embed_dim) {
        throw ContractError("encoder config: adapter_rank must not exceed embed_dim / 2");
    }
}

void check_image(const Tensor& image, const EncoderConfig& config) {
    const Shape want{config.image_size, config.image_size, 3};
    if (image.shape() != want) {
        throw ShapeError("image shape " + shape_string(image.shape()) + " does not match configured " +
                         shape_string(want));
    }
    for (double v : image.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ContractError("image values must lie in [0, 1]");
    }
}

Encoder Encoder::create_base(ParameterStore& store, const EncoderConfig& config) {
    config.validate();
    Rng rng(config.base_seed);
    const std::size_t n = config.embed_dim;
    Encoder e;
    e.config_ = config;
    auto gaussian = [&](const std::string& name, Shape shape) {
        return &store.add(name, rng.normal_tensor(std::move(shape), kBaseInitStd), true);
    };
    auto constant = [&](const std::string& name, std::size_t len, double v) {
        return &store.add(name, Tensor(Shape{len}, v), true);
    };
    e.patch_weight_ = gaussian("encoder.patch_embed.weight", Shape{config.patch_dim(), n});
    e.patch_bias_ = constant("encoder.patch_embed.bias", n, 0.0);
    e.pos_embed_ = gaussian("encoder.pos_embed", Shape{config.token_count(), n});
    for (std::size_t i = 0; i < config.num_blocks; ++i) {
        const std::string pre = block_prefix(i);
        TransformerBlock b;
        b.ln1_gamma = constant(pre + ".ln1.gamma", n, 1.0);
        b.ln1_beta = constant(pre + ".ln1.beta", n, 0.0);
        b.wq = gaussian(pre + ".attn.wq", Shape{n, n});
        b.wk = gaussian(pre + ".attn.wk", Shape{n, n});
        b.wv = gaussian(pre + ".attn.wv", Shape{n, n});
        b.wo = gaussian(pre + ".attn.wo", Shape{n, n});
        b.ln2_gamma = constant(pre + ".ln2.gamma", n, 1.0);
        b.ln2_beta = constant(pre + ".ln2.beta", n, 0.0);
        b.mlp_w1 = gaussian(pre + ".mlp.w1", Shape{n, config.mlp_dim()});
        b.mlp_b1 = constant(pre + ".mlp.b1", config.mlp_dim(), 0.0);
        b.mlp_w2 = gaussian(pre + ".mlp.w2", Shape{config.mlp_dim(), n});
        b.mlp_b2 = constant(pre + ".mlp.b2", n, 0.0);
        e.blocks_.push_back(b);
    }
    e.final_gamma_ = constant("encoder.ln_final.gamma", n, 1.0);
    e.final_beta_ = constant("encoder.ln_final.beta", n, 0.0);
    return e;
}

void Encoder::attach_adapters(ParameterStore& store, Rng& rng) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto& b = blocks_[i];
        if (b.adapted) throw ContractError("adapters already attached to " + block_prefix(i));
        b.q_triplet = adalora::make_triplet(store, *b.wq, b.wq->name + ".adapter", config_.adapter_rank, rng);
        b.v_triplet = adalora::make_triplet(store, *b.wv, b.wv->name + ".adapter", config_.adapter_rank, rng);
        b.adapted = true;
    }
}

std::vector<adalora::SvdTriplet> Encoder::triplets() const {
    std::vector<adalora::SvdTriplet> out;
    for (const auto& b : blocks_) {
        if (!b.adapted) continue;
        out.push_back(b.q_triplet);
        out.push_back(b.v_triplet);
    }
    return out;
}

Tensor Encoder::extract_patches(const Tensor& image) const {
    check_image(image, config_);
    const std::size_t p = config_.patch_size, g = config_.grid(), w = config_.image_size;
    Tensor out(Shape{config_.token_count(), config_.patch_dim()});
    for (std::size_t py = 0; py < g; ++py) {
        for (std::size_t px = 0; px < g; ++px) {
            const std::size_t token = py * g + px;
            std::size_t col = 0;
            for (std::size_t dy = 0; dy < p; ++dy) {
                for (std::size_t dx = 0; dx < p; ++dx) {
                    const std::size_t y = py * p + dy, x = px * p + dx;
                    for (std::size_t c = 0; c < 3; ++c) out.at(token, col++) = image[(y * w + x) * 3 + c];
                }
            }
        }
    }
    return out;
}

Var Encoder::patchify(Tape& tape, const Tensor& image) const {
    Var patches = tape.constant(extract_patches(image));
    Var tokens = add_row(matmul(patches, tape.param(*patch_weight_)), tape.param(*patch_bias_));
    return add(tokens, tape.param(*pos_embed_));
}

Var Encoder::attention(Var normed, const TransformerBlock& block, AdapterMode mode) const {
    Tape& tape = normed.tape();
    const Var x = transpose(normed);  // n x k_tok, tokens as columns
    const bool adapt = mode == AdapterMode::Adapted && block.adapted;
    const Var q = adapt ? adalora::adapted_forward(x, *block.wq, block.q_triplet) : matmul(tape.param(*block.wq), x);
    const Var k = matmul(tape.param(*block.wk), x);
    const Var v = adapt ? adalora::adapted_forward(x, *block.wv, block.v_triplet) : matmul(tape.param(*block.wv), x);

    const std::size_t hd = config_.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> heads;
    heads.reserve(config_.num_heads);
    for (std::size_t h = 0; h < config_.num_heads; ++h) {
        const Var qh = slice_rows(q, h * hd, hd);
        const Var kh = slice_rows(k, h * hd, hd);
        const Var vh = slice_rows(v, h * hd, hd);
        const Var weights = softmax_rows(scale(matmul(transpose(qh), kh), inv_scale));  // k_tok x k_tok
        heads.push_back(matmul(vh, transpose(weights)));
    }
    const Var merged = concat_rows(heads);
    return transpose(matmul(tape.param(*block.wo), merged));
}

Var Encoder::block_forward(Var tokens, const TransformerBlock& block, AdapterMode mode) const {
    Tape& tape = tokens.tape();
    const Var h1 = layer_norm_rows(tokens, tape.param(*block.ln1_gamma), tape.param(*block.ln1_beta));
    const Var t1 = add(tokens, attention(h1, block, mode));
    const Var h2 = layer_norm_rows(t1, tape.param(*block.ln2_gamma), tape.param(*block.ln2_beta));
    const Var hidden = gelu(add_row(matmul(h2, tape.param(*block.mlp_w1)), tape.param(*block.mlp_b1)));
    const Var mlp = add_row(matmul(hidden, tape.param(*block.mlp_w2)), tape.param(*block.mlp_b2));
    return add(t1, mlp);
}

Var Encoder::encode(Tape& tape, const Tensor& image, AdapterMode mode) const {
    Var tokens = patchify(tape, image);
    for (const auto& b : blocks_) tokens = block_forward(tokens, b, mode);
    return layer_norm_rows(tokens, tape.param(*final_gamma_), tape.param(*final_beta_));
}

}  // namespace ssom::encoder
