// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "ssom/dataset.hpp"
#include "ssom/metrics.hpp"
#include "ssom/model.hpp"

namespace ssom::eval {

/// sigmoid(logits) for every sample, paired with its ground truth.
std::vector<metrics::PredictedSample> predict_samples(const model::SsomModel& model,
                                                      const std::vector<data::SaliencySample>& samples);

metrics::EvalReport evaluate_model(const model::SsomModel& model, const std::vector<data::SaliencySample>& samples,
                                   metrics::ThresholdMode mode = metrics::ThresholdMode::adaptive());

}  // namespace ssom::eval
