// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ssom/adalora.hpp"
#include "ssom/autograd.hpp"
#include "ssom/random.hpp"

namespace ssom::encoder {

struct EncoderConfig {
    std::size_t image_size = 32;  // square images, H == W
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t num_blocks = 4;
    std::size_t num_heads = 4;
    std::size_t adapter_rank = 4;
    std::uint64_t base_seed = 1234;  // seeds the stand-in "pre-trained" weights

    void validate() const;
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t token_count() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_dim() const { return 4 * embed_dim; }

    bool operator==(const EncoderConfig&) const = default;
};

/// Whether query/value projections route through their adapters.
enum class AdapterMode { Adapted, BaseOnly };

struct TransformerBlock {
    Parameter* ln1_gamma = nullptr;
    Parameter* ln1_beta = nullptr;
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* wo = nullptr;
    Parameter* ln2_gamma = nullptr;
    Parameter* ln2_beta = nullptr;
    Parameter* mlp_w1 = nullptr;  // n x 4n
    Parameter* mlp_b1 = nullptr;
    Parameter* mlp_w2 = nullptr;  // 4n x n
    Parameter* mlp_b2 = nullptr;

    bool adapted = false;
    adalora::SvdTriplet q_triplet;
    adalora::SvdTriplet v_triplet;
};

/// Patchifying pre-norm transformer with frozen weights. Query and value
/// projections of every block can carry an SVD-triplet adapter.
class Encoder {
public:
    Encoder() = default;

    /// Registers the frozen base weights (N(0, 0.02^2) matrices, unit norms, zero biases)
    /// drawn from config.base_seed.
    static Encoder create_base(ParameterStore& store, const EncoderConfig& config);

    /// Adds q/v triplets to every block; factors drawn from rng.
    void attach_adapters(ParameterStore& store, Rng& rng);

    const EncoderConfig& config() const noexcept { return config_; }
    const std::vector<TransformerBlock>& blocks() const noexcept { return blocks_; }
    std::vector<adalora::SvdTriplet> triplets() const;

    /// Non-overlapping p x p x 3 patches of an H x W x 3 image in raster order,
    /// each flattened as (row, col, channel).
    Tensor extract_patches(const Tensor& image) const;
    Var patchify(Tape& tape, const Tensor& image) const;

    /// Multi-head attention sub-layer on already normalised row tokens [k_tok x n].
    Var attention(Var normed, const TransformerBlock& block, AdapterMode mode) const;
    /// Residual pre-norm block: attention then MLP.
    Var block_forward(Var tokens, const TransformerBlock& block, AdapterMode mode) const;
    /// patchify -> blocks -> final norm.
    Var encode(Tape& tape, const Tensor& image, AdapterMode mode = AdapterMode::Adapted) const;

private:
    EncoderConfig config_;
    Parameter* patch_weight_ = nullptr;  // patch_dim x n
    Parameter* patch_bias_ = nullptr;
    Parameter* pos_embed_ = nullptr;  // k_tok x n
    Parameter* final_gamma_ = nullptr;
    Parameter* final_beta_ = nullptr;
    std::vector<TransformerBlock> blocks_;
};

void check_image(const Tensor& image, const EncoderConfig& config);

}  // namespace ssom::encoder
