// SPDX-License-Identifier: Apache-2.0

#include "ssom/trainer.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ssom/error.hpp"
#include "ssom/netpbm.hpp"

namespace ssom::train {

// ---------------------------------------------------------------------------
// configuration

void TrainConfig::validate() const {
    if (epochs < 1) throw UsageError("train.epochs must be >= 1");
    if (!(base_lr > 0.0)) throw UsageError("train.base_lr must be positive");
    if (!(lr_decay_factor > 0.0)) throw UsageError("train.lr_decay_factor must be positive");
    if (lr_decay_every_epochs < 1) throw UsageError("train.lr_decay_every_epochs must be >= 1");
    if (batch_size < 1) throw UsageError("train.batch_size must be >= 1");
    if (!(lambda_reg >= 0.0)) throw UsageError("train.lambda_reg must be non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw UsageError("train.adam_beta1/adam_beta2 must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw UsageError("train.adam_eps must be positive");
}

double TrainConfig::lr_at_epoch(std::size_t epoch) const {
    return base_lr * std::pow(lr_decay_factor, static_cast<double>(epoch / lr_decay_every_epochs));
}

adalora::BudgetSchedule TrainConfig::budget_schedule(const encoder::EncoderConfig& enc,
                                                     std::size_t total_steps) const {
    auto s = model::default_schedule(enc, total_steps);
    if (schedule.b_init) s.b_init = *schedule.b_init;
    if (schedule.b_target) s.b_target = *schedule.b_target;
    if (schedule.warmup_steps) s.warmup_steps = *schedule.warmup_steps;
    if (schedule.final_steps) s.final_steps = *schedule.final_steps;
    s.validate();
    return s;
}

namespace {

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
    return {
        {"epochs", epochs},
        {"base_lr", base_lr},
        {"lr_decay_factor", lr_decay_factor},
        {"lr_decay_every_epochs", lr_decay_every_epochs},
        {"batch_size", batch_size},
        {"lambda_reg", lambda_reg},
        {"seed", seed},
        {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"adam_eps", adam_eps},
        {"schedule",
         {{"b_init", optional_json(schedule.b_init)},
          {"b_target", optional_json(schedule.b_target)},
          {"warmup_steps", optional_json(schedule.warmup_steps)},
          {"final_steps", optional_json(schedule.final_steps)}}},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.epochs = j.at("epochs").get<std::size_t>();
        c.base_lr = j.at("base_lr").get<double>();
        c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
        c.lr_decay_every_epochs = j.at("lr_decay_every_epochs").get<std::size_t>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.lambda_reg = j.at("lambda_reg").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto opt = j.at("optimizer").get<std::string>();
        if (opt != "adam" && opt != "sgd") throw DataError("unknown optimizer " + opt);
        c.optimizer = opt == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
        c.adam_beta1 = j.at("adam_beta1").get<double>();
        c.adam_beta2 = j.at("adam_beta2").get<double>();
        c.adam_eps = j.at("adam_eps").get<double>();
        const auto& s = j.at("schedule");
        c.schedule.b_init = optional_from<std::size_t>(s, "b_init");
        c.schedule.b_target = optional_from<std::size_t>(s, "b_target");
        c.schedule.warmup_steps = optional_from<std::size_t>(s, "warmup_steps");
        c.schedule.final_steps = optional_from<std::size_t>(s, "final_steps");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("train config snapshot: ") + e.what());
    }
    return c;
}

nlohmann::json encoder_config_to_json(const encoder::EncoderConfig& c) {
    return {{"image_size", c.image_size}, {"patch_size", c.patch_size},     {"embed_dim", c.embed_dim},
            {"num_blocks", c.num_blocks}, {"num_heads", c.num_heads},       {"adapter_rank", c.adapter_rank},
            {"base_seed", c.base_seed}};
}

encoder::EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    encoder::EncoderConfig c;
    try {
        c.image_size = j.at("image_size").get<std::size_t>();
        c.patch_size = j.at("patch_size").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.num_blocks = j.at("num_blocks").get<std::size_t>();
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.adapter_rank = j.at("adapter_rank").get<std::size_t>();
        c.base_seed = j.at("base_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("encoder config snapshot: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// optimizer

Optimizer::Optimizer(OptimizerKind kind, double beta1, double beta2, double eps)
    : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::update(std::span<Parameter* const> group, double lr) {
    if (t_ == 0) throw ContractError("Optimizer::update called before begin_step");
    if (kind_ == OptimizerKind::Sgd) {
        for (Parameter* p : group) {
            for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] -= lr * p->grad[i];
        }
        return;
    }
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter* p : group) {
        auto [it, fresh] = moments_.try_emplace(p->name);
        if (fresh) {
            it->second.m = Tensor(p->value.shape());
            it->second.v = Tensor(p->value.shape());
        }
        auto& mo = it->second;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * g;
            mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * g * g;
            const double m_hat = mo.m[i] / bc1;
            const double v_hat = mo.v[i] / bc2;
            p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

void Optimizer::save(Checkpoint& ck) const {
    ck.state["optimizer_t"] = t_;
    for (const auto& [name, mo] : moments_) {
        ck.add("optim.m/" + name, mo.m, false);
        ck.add("optim.v/" + name, mo.v, false);
    }
}

void Optimizer::restore(const Checkpoint& ck) {
    moments_.clear();
    t_ = ck.state.value("optimizer_t", std::uint64_t{0});
    for (const auto& r : ck.directory) {
        if (r.name.rfind("optim.m/", 0) != 0) continue;
        const std::string name = r.name.substr(8);
        moments_[name] = Moments{ck.tensor(r), ck.tensor("optim.v/" + name)};
    }
}

// ---------------------------------------------------------------------------
// logging helpers

std::string LogRow::csv() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%zu", step, epoch, lr, bce, iou,
                  ortho, total, budget, nnz_lambda);
    return buf;
}

std::string format_trace_line(const adalora::PruneReport& report) {
    auto list = [](const std::vector<adalora::SlotRef>& refs) {
        std::string s = "[";
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(refs[i].triplet) + "." + std::to_string(refs[i].index);
        }
        return s + "]";
    };
    return std::to_string(report.step) + "\tkept:" + list(report.kept) + "\tpruned:" + list(report.pruned);
}

// ---------------------------------------------------------------------------
// census / checksum / checkpoints

ParamReport param_report(const ParameterStore& store, std::string_view prefix) {
    ParamReport r;
    for (const Parameter* p : store.all()) {
        if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
        const std::size_t n = p->value.numel();
        r.total += n;
        if (p->frozen) r.frozen += n;
        else r.trainable += n;
    }
    r.trainable_fraction = r.total ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
    return r;
}

std::string frozen_checksum(const ParameterStore& store) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw ContractError("sha256: digest initialisation failed");
    }
    for (const Parameter* p : store.all()) {
        if (!p->frozen) continue;
        EVP_DigestUpdate(ctx, p->name.data(), p->name.size() + 1);  // include the terminator as separator
        const auto v = p->value.values();
        EVP_DigestUpdate(ctx, v.data(), v.size() * sizeof(double));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

Checkpoint make_base_checkpoint(const model::SsomModel& model) {
    Checkpoint ck;
    ck.kind = "base";
    ck.config = {{"encoder", encoder_config_to_json(model.config())}};
    for (const Parameter* p : model.parameters().all()) {
        if (p->frozen) ck.add(p->name, p->value, true);
    }
    return ck;
}

void load_base(model::SsomModel& model, const Checkpoint& ck) {
    if (ck.kind != "base") throw DataError("expected a base checkpoint, got kind " + ck.kind);
    const auto cfg = encoder_config_from_json(ck.config.at("encoder"));
    if (!(cfg == model.config())) throw DataError("base checkpoint encoder config does not match the model");
    std::set<std::string> seen;
    for (const auto& r : ck.directory) {
        Parameter* p = model.parameters().find(r.name);
        if (!p || !p->frozen) throw DataError("base checkpoint tensor " + r.name + " is not a base weight");
        if (p->value.shape() != r.shape) throw DataError("base checkpoint shape mismatch for " + r.name);
        p->value = ck.tensor(r);
        p->frozen = true;
        p->zero_grad();
        seen.insert(r.name);
    }
    for (const Parameter* p : model.parameters().all()) {
        if (p->frozen && !seen.count(p->name)) throw DataError("base checkpoint lacks " + p->name);
    }
}

model::SsomModel model_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "full") throw DataError("expected a full checkpoint, got kind " + ck.kind);
    model::SsomModel m(encoder_config_from_json(ck.config.at("encoder")),
                       ck.config.at("train").at("seed").get<std::uint64_t>());
    for (Parameter* p : m.parameters().all()) {
        const auto* r = ck.find(p->name);
        if (!r) throw DataError("checkpoint lacks parameter " + p->name);
        if (r->shape != p->value.shape() || r->frozen != p->frozen) {
            throw DataError("checkpoint entry " + p->name + " does not match the model layout");
        }
        p->value = ck.tensor(*r);
    }
    return m;
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(model::SsomModel& model, std::vector<data::SaliencySample> train_set, TrainConfig config)
    : model_(model),
      data_(std::move(train_set)),
      config_(std::move(config)),
      sampler_((config_.validate(), data_.size()), config_.batch_size, config_.seed),
      optimizer_(config_.optimizer, config_.adam_beta1, config_.adam_beta2, config_.adam_eps) {
    const auto& enc = model_.config();
    for (const auto& s : data_) {
        if (s.image.shape() != Shape{enc.image_size, enc.image_size, 3}) {
            throw DataError("sample " + s.id + " has shape " + shape_string(s.image.shape()) +
                            ", model expects " + std::to_string(enc.image_size) + "x" +
                            std::to_string(enc.image_size));
        }
    }
    model_.allocator().set_schedule(config_.budget_schedule(enc, total_steps()));

    std::set<const Parameter*> factors, lambdas;
    for (const auto& t : model_.triplets()) {
        factors.insert(t.p);
        factors.insert(t.q);
        lambdas.insert(t.lambda);
    }
    for (Parameter* p : model_.parameters().trainable()) {
        if (factors.count(p)) factor_params_.push_back(p);
        else if (lambdas.count(p)) lambda_params_.push_back(p);
        else head_params_.push_back(p);
    }
}

LogRow Trainer::step(const std::vector<std::size_t>& batch) {
    const std::size_t t = step_ + 1;
    const std::size_t epoch = step_ / steps_per_epoch();
    const double lr = config_.lr_at_epoch(epoch);

    model_.parameters().zero_grad();
    objective::LossBreakdown loss;
    {
        Tape tape;
        std::vector<Var> probs;
        std::vector<const Tensor*> targets;
        for (std::size_t i : batch) {
            probs.push_back(sigmoid(model_.forward_logits(tape, data_.at(i).image)));
            targets.push_back(&data_.at(i).mask);
        }
        const auto triplets = model_.triplets();
        loss = objective::batch_loss(probs, targets, triplets, config_.lambda_reg);
        tape.backward(loss.total);
    }
    notify(TrainEvent::ForwardBackward, t);

    optimizer_.begin_step();
    optimizer_.update(head_params_, lr);
    notify(TrainEvent::UpdateDecoderPrompt, t);
    optimizer_.update(factor_params_, lr);
    notify(TrainEvent::UpdateFactors, t);
    optimizer_.update(lambda_params_, lr);
    notify(TrainEvent::UpdateSingularValues, t);
    trace_.push_back(model_.allocator().allocate(t));
    notify(TrainEvent::Prune, t);

    step_ = t;
    LogRow row{t,        epoch,      lr, loss.bce, loss.iou, loss.ortho, loss.total_value,
               trace_.back().budget, model_.allocator().nonzero_count()};
    log_.push_back(row);
    notify(TrainEvent::Logged, t);
    return row;
}

namespace {

// Keeps the first `keep` records of an existing text file (after `header_lines`).
void truncate_records(const std::filesystem::path& path, std::size_t header_lines, std::size_t keep,
                      const std::string& header) {
    std::vector<std::string> lines;
    if (std::filesystem::exists(path)) {
        std::istringstream in(netpbm::read_file(path));
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    std::string out;
    if (header_lines) out += header + "\n";
    std::size_t kept = 0;
    for (std::size_t i = header_lines; i < lines.size() && kept < keep; ++i, ++kept) out += lines[i] + "\n";
    netpbm::write_file_atomic(path, out);
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void Trainer::run(const std::optional<TrainOutputs>& out) {
    std::ofstream log_file, trace_file;
    if (out) {
        std::filesystem::create_directories(out->dir);
        truncate_records(out->dir / "log.csv", 1, step_, kLogHeader);
        truncate_records(out->dir / "rank_trace.tsv", 0, step_, "");
        log_file.open(out->dir / "log.csv", std::ios::app);
        trace_file.open(out->dir / "rank_trace.tsv", std::ios::app);
        if (!log_file || !trace_file) throw DataError("cannot open training logs in " + out->dir.string());
        nlohmann::json meta = {{"started_at", timestamp_utc()}, {"resumed_from_step", step_}};
        netpbm::write_file_atomic(out->dir / "run_meta.json", meta.dump(2) + "\n");
    }

    const std::size_t total = total_steps();
    const std::size_t stop = config_.max_steps ? std::min(total, config_.max_steps) : total;
    std::size_t cached_epoch = static_cast<std::size_t>(-1);
    std::vector<std::vector<std::size_t>> batches;
    while (step_ < stop) {
        const std::size_t epoch = step_ / steps_per_epoch();
        if (epoch != cached_epoch) {
            batches = sampler_.batches(epoch);
            cached_epoch = epoch;
        }
        const Checkpoint last_good = out ? checkpoint() : Checkpoint{};
        LogRow row;
        try {
            row = step(batches[step_ % steps_per_epoch()]);
        } catch (const NumericError&) {
            if (out) last_good.save(out->dir / "last_good.ckpt");
            throw;
        }
        if (out) {
            log_file << row.csv() << '\n' << std::flush;
            trace_file << format_trace_line(trace_.back()) << '\n' << std::flush;
            if (config_.checkpoint_every && step_ % config_.checkpoint_every == 0 && step_ != total) {
                char name[32];
                std::snprintf(name, sizeof name, "step_%06zu.ckpt", step_);
                checkpoint().save(out->dir / name);
            }
        }
    }
    if (out) {
        if (step_ == total) {
            checkpoint().save(out->dir / "final.ckpt");
        } else {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06zu.ckpt", step_);
            checkpoint().save(out->dir / name);
        }
    }
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.kind = "full";
    ck.config = {{"encoder", encoder_config_to_json(model_.config())}, {"train", config_.to_json()}};
    ck.state["step"] = step_;
    for (const Parameter* p : model_.parameters().all()) ck.add(p->name, p->value, p->frozen);
    optimizer_.save(ck);
    return ck;
}

void Trainer::resume(const Checkpoint& ck) {
    if (ck.kind != "full") throw DataError("resume requires a full checkpoint, got kind " + ck.kind);
    if (!(encoder_config_from_json(ck.config.at("encoder")) == model_.config())) {
        throw DataError("checkpoint encoder config does not match the model");
    }
    if (TrainConfig::from_json(ck.config.at("train")).to_json() != config_.to_json()) {
        throw DataError("checkpoint training config does not match the current run");
    }
    for (Parameter* p : model_.parameters().all()) {
        const auto* r = ck.find(p->name);
        if (!r || r->shape != p->value.shape() || r->frozen != p->frozen) {
            throw DataError("checkpoint entry for " + p->name + " is missing or inconsistent");
        }
        p->value = ck.tensor(*r);
    }
    optimizer_.restore(ck);
    step_ = ck.state.at("step").get<std::size_t>();
    if (step_ > total_steps()) throw DataError("checkpoint step exceeds the configured run length");
    model_.allocator().set_step(step_);
    log_.clear();
    trace_.clear();
}

}  // namespace ssom::train
