// SPDX-License-Identifier: Apache-2.0

#include "ssom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ssom/error.hpp"

namespace ssom::metrics {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError(std::string(op) + ": prediction " + shape_string(pred.shape()) + " vs ground truth " +
                         shape_string(gt.shape()));
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double f_beta(const Tensor& pred_map, const Tensor& gt, double beta_sq, double threshold) {
    check_pair(pred_map, gt, "f_beta");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("f_beta: threshold must lie in [0, 1]");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const double g = gt[i];
        if (g != 0.0 && g != 1.0) throw ContractError("f_beta: ground truth must be binary");
        const bool predicted = pred_map[i] >= threshold;
        const bool actual = g == 1.0;
        if (predicted && actual) ++tp;
        else if (predicted) ++fp;
        else if (actual) ++fn;
    }
    if (tp + fp + fn == 0) return 1.0;
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall);
}

double adaptive_threshold(const Tensor& pred_map) {
    double s = 0.0;
    for (double v : pred_map.values()) s += v;
    const double mean = s / static_cast<double>(pred_map.numel());
    return std::min(2.0 * mean, 1.0);
}

double mae(const Tensor& pred_map, const Tensor& gt) {
    check_pair(pred_map, gt, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.numel(); ++i) s += std::abs(gt[i] - pred_map[i]);
    return s / static_cast<double>(gt.numel());
}

std::string ThresholdMode::label() const { return fixed ? "fixed:" + fmt(*fixed) : "adaptive"; }

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "id,f_beta,mae\n";
    for (const auto& s : per_sample) os << s.id << ',' << fmt(s.f_beta) << ',' << fmt(s.mae) << '\n';
    os << "mean," << fmt(f_beta) << ',' << fmt(mae) << '\n';
    return os.str();
}

std::string EvalReport::summary() const {
    return "f_beta=" + fmt(f_beta) + " mae=" + fmt(mae) + " threshold=" + threshold_mode.label() +
           " n=" + std::to_string(per_sample.size());
}

EvalReport evaluate_maps(const std::vector<PredictedSample>& samples, ThresholdMode mode, double beta_sq) {
    if (samples.empty()) throw ContractError("evaluate: dataset is empty");
    EvalReport report;
    report.threshold_mode = mode;
    double f_sum = 0.0, mae_sum = 0.0;
    for (const auto& s : samples) {
        const double threshold = mode.fixed ? *mode.fixed : adaptive_threshold(s.pred_map);
        SampleScore score{s.id, f_beta(s.pred_map, s.gt, beta_sq, threshold), mae(s.pred_map, s.gt)};
        f_sum += score.f_beta;
        mae_sum += score.mae;
        report.per_sample.push_back(std::move(score));
    }
    report.f_beta = f_sum / static_cast<double>(samples.size());
    report.mae = mae_sum / static_cast<double>(samples.size());
    return report;
}

}  // namespace ssom::metrics
