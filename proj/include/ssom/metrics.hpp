// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssom/tensor.hpp"

namespace ssom::metrics {

inline constexpr double kBetaSq = 0.3;

/// F-measure of pred_map binarised at `threshold` (pixel >= threshold is positive).
/// Both-empty scores 1; otherwise TP == 0 scores 0.
double f_beta(const Tensor& pred_map, const Tensor& gt, double beta_sq, double threshold);

/// min(2 * mean(pred_map), 1)
double adaptive_threshold(const Tensor& pred_map);

/// Mean absolute per-pixel difference.
double mae(const Tensor& pred_map, const Tensor& gt);

struct ThresholdMode {
    std::optional<double> fixed;  // empty: adaptive

    static ThresholdMode adaptive() { return {}; }
    static ThresholdMode fixed_at(double t) { return {t}; }
    std::string label() const;
};

struct SampleScore {
    std::string id;
    double f_beta = 0.0;
    double mae = 0.0;
};

struct EvalReport {
    double f_beta = 0.0;
    double mae = 0.0;
    std::vector<SampleScore> per_sample;
    ThresholdMode threshold_mode;

    /// CSV with header `id,f_beta,mae`, one row per sample, then `mean,<f_beta>,<mae>`.
    std::string to_csv() const;
    std::string summary() const;
};

struct PredictedSample {
    std::string id;
    Tensor pred_map;  // continuous saliency in [0, 1]
    Tensor gt;        // binary
};

/// Scores each sample in order and averages.
EvalReport evaluate_maps(const std::vector<PredictedSample>& samples, ThresholdMode mode,
                         double beta_sq = kBetaSq);

}  // namespace ssom::metrics
