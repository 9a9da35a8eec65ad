// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssom/encoder.hpp"

namespace ssom {

inline constexpr double kGradEps = 1e-6;
inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kGraphTolerance = 1e-4;
inline constexpr std::uint64_t kFullGraphSeed = 1;

struct GradCaseResult {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_rel_error < tolerance; }
};

/// Small model used for the whole-graph check: 8x8 images, 4x4 patches, n=8, two blocks, two heads, r=2.
encoder::EncoderConfig grad_check_config();

/// Every differentiable primitive against central differences at kGradEps.
std::vector<GradCaseResult> primitive_grad_suite(std::uint64_t seed = 7);

/// Full loss (bce + iou + regulariser) w.r.t. every trainable parameter of a small model.
/// Frozen weights, P, Q and lambda are re-drawn at unit-ish scale so no gradient is vanishingly small.
GradCaseResult full_graph_grad_check(std::uint64_t seed = kFullGraphSeed, double eps = kGradEps);

}  // namespace ssom
