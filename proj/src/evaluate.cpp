// SPDX-License-Identifier: Apache-2.0

#include "ssom/evaluate.hpp"

namespace ssom::eval {

std::vector<metrics::PredictedSample> predict_samples(const model::SsomModel& model,
                                                      const std::vector<data::SaliencySample>& samples) {
    std::vector<metrics::PredictedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back({s.id, model::sigmoid_map(model::predict_logits(model, s.image)), s.mask});
    }
    return out;
}

metrics::EvalReport evaluate_model(const model::SsomModel& model, const std::vector<data::SaliencySample>& samples,
                                   metrics::ThresholdMode mode) {
    return metrics::evaluate_maps(predict_samples(model, samples), mode);
}

}  // namespace ssom::eval
