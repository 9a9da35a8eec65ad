// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ssom/adalora.hpp"
#include "ssom/encoder.hpp"

namespace ssom::model {

/// Learnable saliency prompt; the prompt encoder reduces to the identity over it.
struct SaliencyPrompt {
    Parameter* embedding = nullptr;  // [n]
};

/// One cross-attention round (prompt queries image tokens), additive
/// conditioning of every image token on the attended value, and a per-patch
/// linear head producing p*p logits that are unfolded to H x W.
struct MaskDecoder {
    Parameter* ln_in_gamma = nullptr;
    Parameter* ln_in_beta = nullptr;
    Parameter* wq = nullptr;  // n x n
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* ln_out_gamma = nullptr;
    Parameter* ln_out_beta = nullptr;
    Parameter* head_weight = nullptr;  // n x p^2
    Parameter* head_bias = nullptr;    // p^2
};

class SsomModel {
public:
    /// Frozen base weights from config.base_seed; adapters, prompt and decoder from init_seed.
    SsomModel(const encoder::EncoderConfig& config, std::uint64_t init_seed);
    SsomModel(SsomModel&&) = default;
    SsomModel& operator=(SsomModel&&) = default;

    const encoder::EncoderConfig& config() const noexcept { return encoder_.config(); }
    ParameterStore& parameters() noexcept { return store_; }
    const ParameterStore& parameters() const noexcept { return store_; }
    const encoder::Encoder& encoder() const noexcept { return encoder_; }
    const SaliencyPrompt& prompt() const noexcept { return prompt_; }
    const MaskDecoder& decoder() const noexcept { return decoder_; }
    adalora::RankAllocator& allocator() noexcept { return allocator_; }
    const adalora::RankAllocator& allocator() const noexcept { return allocator_; }
    std::vector<adalora::SvdTriplet> triplets() const { return encoder_.triplets(); }

    /// Decoder applied to encoded tokens [k_tok x n]; returns H x W logits.
    Var decode(Var tokens) const;
    Var forward_logits(Tape& tape, const Tensor& image,
                       encoder::AdapterMode mode = encoder::AdapterMode::Adapted) const;

private:
    void build_decoder(std::uint64_t init_seed);

    ParameterStore store_;
    encoder::Encoder encoder_;
    SaliencyPrompt prompt_;
    MaskDecoder decoder_;
    adalora::RankAllocator allocator_;
    std::vector<std::size_t> unfold_index_;
};

/// H x W logits for one image (no gradient bookkeeping kept).
Tensor predict_logits(const SsomModel& model, const Tensor& image);

/// sigmoid(logit) >= threshold -> 1, else 0.
Tensor binarize(const Tensor& logits, double threshold = 0.5);

/// Element-wise logistic function outside any tape.
Tensor sigmoid_map(const Tensor& logits);

/// Trainable parameters in registration order.
std::vector<Parameter*> trainable_parameters(SsomModel& model);

/// Default budget schedule for a run of total_steps: b_init = all slots,
/// b_target = half, warm-up 10 % and final plateau 20 % of the steps.
adalora::BudgetSchedule default_schedule(const encoder::EncoderConfig& config, std::size_t total_steps);

}  // namespace ssom::model
