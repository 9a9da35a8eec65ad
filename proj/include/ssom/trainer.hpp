// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssom/adalora.hpp"
#include "ssom/checkpoint.hpp"
#include "ssom/dataset.hpp"
#include "ssom/model.hpp"
#include "ssom/objective.hpp"

namespace ssom::train {

enum class OptimizerKind { Adam, Sgd };

/// Explicit overrides of the budget schedule; unset fields take the defaults
/// derived from the total step count (see model::default_schedule).
struct ScheduleOverrides {
    std::optional<std::size_t> b_init;
    std::optional<std::size_t> b_target;
    std::optional<std::size_t> warmup_steps;
    std::optional<std::size_t> final_steps;

    bool operator==(const ScheduleOverrides&) const = default;
};

struct TrainConfig {
    std::size_t epochs = 30;
    double base_lr = 1e-4;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_every_epochs = 10;
    std::size_t batch_size = 8;
    double lambda_reg = objective::kDefaultLambdaReg;
    std::uint64_t seed = 0;  // adapter/decoder init and shuffling
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    ScheduleOverrides schedule;

    // Run controls; not part of the checkpointed configuration.
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    std::size_t max_steps = 0;         // 0: run to completion

    void validate() const;
    /// base_lr * decay^floor(epoch / every)
    double lr_at_epoch(std::size_t epoch) const;
    adalora::BudgetSchedule budget_schedule(const encoder::EncoderConfig& enc, std::size_t total_steps) const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

nlohmann::json encoder_config_to_json(const encoder::EncoderConfig& c);
encoder::EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Adam (or plain SGD) with per-parameter moments keyed by parameter name.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double beta1, double beta2, double eps);

    /// Advances the shared step count used for bias correction.
    void begin_step() { ++t_; }
    std::uint64_t step_count() const noexcept { return t_; }
    void update(std::span<Parameter* const> group, double lr);

    void save(Checkpoint& ck) const;
    void restore(const Checkpoint& ck);

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    OptimizerKind kind_;
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

struct LogRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double bce = 0.0;
    double iou = 0.0;
    double ortho = 0.0;
    double total = 0.0;
    std::size_t budget = 0;
    std::size_t nnz_lambda = 0;

    std::string csv() const;
};

inline constexpr const char* kLogHeader = "step,epoch,lr,bce,iou,ortho,total,budget,nnz_lambda";

/// `step<TAB>kept:[t.i,...]<TAB>pruned:[t.i,...]`
std::string format_trace_line(const adalora::PruneReport& report);

enum class TrainEvent { ForwardBackward, UpdateDecoderPrompt, UpdateFactors, UpdateSingularValues, Prune, Logged };

struct ParamReport {
    std::size_t total = 0;
    std::size_t frozen = 0;
    std::size_t trainable = 0;
    double trainable_fraction = 0.0;
};

/// Element census over the whole registry, or over names starting with `prefix`.
ParamReport param_report(const ParameterStore& store, std::string_view prefix = "");

/// SHA-256 (hex) over the names and little-endian bytes of every frozen parameter.
std::string frozen_checksum(const ParameterStore& store);

Checkpoint make_base_checkpoint(const model::SsomModel& model);
/// Copies base weights into the model's encoder and marks them frozen.
void load_base(model::SsomModel& model, const Checkpoint& ck);

/// Rebuilds a model from a full checkpoint (config + every parameter).
model::SsomModel model_from_checkpoint(const Checkpoint& ck);

struct TrainOutputs {
    std::filesystem::path dir;  // log.csv, rank_trace.tsv, final.ckpt, run_meta.json
};

class Trainer {
public:
    Trainer(model::SsomModel& model, std::vector<data::SaliencySample> train_set, TrainConfig config);

    void set_observer(std::function<void(TrainEvent, std::size_t step)> fn) { observer_ = std::move(fn); }

    std::size_t steps_per_epoch() const { return sampler_.batches_per_epoch(); }
    std::size_t total_steps() const { return config_.epochs * steps_per_epoch(); }
    std::size_t completed_steps() const noexcept { return step_; }
    const TrainConfig& config() const noexcept { return config_; }
    const std::vector<LogRow>& log() const noexcept { return log_; }
    const std::vector<adalora::PruneReport>& trace() const noexcept { return trace_; }

    /// One iteration of the training loop on the given sample indices.
    LogRow step(const std::vector<std::size_t>& batch);

    /// Runs the remaining steps (up to max_steps when set). When `out` is given,
    /// rows are appended to its log and trace files and checkpoints are written there.
    void run(const std::optional<TrainOutputs>& out = std::nullopt);

    Checkpoint checkpoint() const;
    /// Restores parameters, optimizer moments and the step counter from a full checkpoint.
    void resume(const Checkpoint& ck);

private:
    void notify(TrainEvent e, std::size_t step) {
        if (observer_) observer_(e, step);
    }

    model::SsomModel& model_;
    std::vector<data::SaliencySample> data_;
    TrainConfig config_;
    data::BatchSampler sampler_;
    Optimizer optimizer_;
    std::vector<Parameter*> head_params_;    // decoder + prompt
    std::vector<Parameter*> factor_params_;  // P, Q
    std::vector<Parameter*> lambda_params_;
    std::size_t step_ = 0;
    std::vector<LogRow> log_;
    std::vector<adalora::PruneReport> trace_;
    std::function<void(TrainEvent, std::size_t)> observer_;
};

}  // namespace ssom::train
