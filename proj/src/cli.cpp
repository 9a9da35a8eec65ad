// SPDX-License-Identifier: Apache-2.0

#include "ssom/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include "ssom/dataset.hpp"
#include "ssom/evaluate.hpp"
#include "ssom/grad_suite.hpp"
#include "ssom/netpbm.hpp"
#include "ssom/run_config.hpp"
#include "ssom/trainer.hpp"

namespace ssom::cli {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Contract: return kExitUsage;
        case ErrorKind::Data: return kExitData;
        case ErrorKind::Numeric: return kExitNumeric;
    }
    return kExitUsage;
}

namespace {

const char* category(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Contract: return "contract";
        case ErrorKind::Data: return "data";
        case ErrorKind::Numeric: return "numeric";
    }
    return "usage";
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

struct Options {
    // gen-data
    std::string gen_out;
    std::size_t gen_n = 0;
    std::size_t gen_size = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_split = "train";
    // shared
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::string base;
    std::string data;
    std::string resume;
    std::string ckpt;
    std::string maps;
    std::string report;
    std::string predictions;
    std::string threshold = "adaptive";
    std::string predict_threshold = "0.5";
    std::string image;
    std::string trace;
    std::optional<std::size_t> step;
    std::uint64_t grad_seed = kFullGraphSeed;
};

struct App {
    CLI::App app{"Saliency segmentation with SVD-adapted frozen encoders"};
    Options o;
    CLI::App* gen_data = nullptr;
    CLI::App* init_base = nullptr;
    CLI::App* train = nullptr;
    CLI::App* eval = nullptr;
    CLI::App* predict = nullptr;
    CLI::App* inspect = nullptr;
    CLI::App* grad_check = nullptr;
    CLI::App* reference = nullptr;

    App() {
        app.name("ssom");
        app.require_subcommand(1);

        gen_data = app.add_subcommand("gen-data", "Generate a synthetic saliency dataset (PPM images, PGM masks, manifest)");
        gen_data->add_option("--out", o.gen_out, "Output directory")->required();
        gen_data->add_option("--n", o.gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
        gen_data->add_option("--size", o.gen_size, "Image side in pixels")->required()->check(CLI::Range(4, 4096));
        gen_data->add_option("--seed", o.gen_seed, "Generator seed")->required();
        gen_data->add_option("--split", o.gen_split, "Split name; selects an independent random stream")
            ->capture_default_str();

        init_base = app.add_subcommand("init-base", "Write the seeded frozen base encoder as a base checkpoint");
        init_base->add_option("--config", o.config, "Run config file")->required()->check(CLI::ExistingFile);
        init_base->add_option("--set", o.overrides, "Config override key=value (repeatable)");
        init_base->add_option("--out", o.out, "Base checkpoint path")->required();

        train = app.add_subcommand("train", "Train adapters, prompt and decoder on top of a base checkpoint");
        train->add_option("--config", o.config, "Run config file")->required()->check(CLI::ExistingFile);
        train->add_option("--set", o.overrides, "Config override key=value (repeatable)");
        train->add_option("--base", o.base, "Base checkpoint")->required()->check(CLI::ExistingFile);
        train->add_option("--data", o.data, "Training dataset directory or manifest (default: data.train)")
            ->check(CLI::ExistingPath);
        train->add_option("--out", o.out, "Run directory (default: output.dir)");
        train->add_option("--resume", o.resume, "Full checkpoint to resume from")->check(CLI::ExistingFile);

        eval = app.add_subcommand("eval", "Score saliency maps against ground truth (F-beta, MAE)");
        auto* ck = eval->add_option("--ckpt", o.ckpt, "Full checkpoint to run")->check(CLI::ExistingFile);
        auto* maps = eval->add_option("--maps", o.maps, "Directory of precomputed <id>.pgm saliency maps")
                         ->check(CLI::ExistingDirectory);
        ck->excludes(maps);
        eval->add_option("--data", o.data, "Dataset directory or manifest")->required()->check(CLI::ExistingPath);
        eval->add_option("--report", o.report, "CSV report path")->required();
        eval->add_option("--threshold", o.threshold, "adaptive, or a fixed threshold in [0, 1]")->capture_default_str();
        eval->add_option("--predictions", o.predictions, "Also write each continuous map as <id>.pgm here");

        predict = app.add_subcommand("predict", "Write a binary PGM mask for one PPM image");
        predict->add_option("--ckpt", o.ckpt, "Full checkpoint")->required()->check(CLI::ExistingFile);
        predict->add_option("--image", o.image, "Input PPM image")->required()->check(CLI::ExistingFile);
        predict->add_option("--out", o.out, "Output PGM mask")->required();
        predict->add_option("--threshold", o.predict_threshold, "Probability threshold in [0, 1], or adaptive")
            ->capture_default_str();

        inspect = app.add_subcommand("inspect-ranks", "Summarise retained singular values from a rank trace");
        inspect->add_option("--trace", o.trace, "rank_trace.tsv from a training run")
            ->required()
            ->check(CLI::ExistingFile);
        inspect->add_option("--step", o.step, "Show the per-triplet table at this step");

        grad_check = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");
        grad_check->add_option("--seed", o.grad_seed, "Seed of the whole-graph check")->capture_default_str();

        reference = app.add_subcommand("config-reference", "Print the command and config reference page");
        reference->add_option("--out", o.out, "Write the page to this file instead of stdout");
    }
};

metrics::ThresholdMode threshold_mode(const std::string& text) {
    if (text == "adaptive") return metrics::ThresholdMode::adaptive();
    double v = 0.0;
    std::istringstream is(text);
    if (!(is >> v) || !is.eof() || v < 0.0 || v > 1.0) {
        throw UsageError("--threshold must be 'adaptive' or a number in [0, 1], got '" + text + "'");
    }
    return metrics::ThresholdMode::fixed_at(v);
}

RunConfig load_config(const Options& o) {
    RunConfig c = load_run_config(o.config);
    apply_overrides(c, o.overrides);
    c.validate();
    return c;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
    const auto m = data::generate_synthetic(o.gen_out, o.gen_n, o.gen_size, o.gen_seed, o.gen_split);
    m.write();
    out << "wrote " << m.entries.size() << " samples (" << o.gen_size << "x" << o.gen_size << ", split "
        << o.gen_split << ", seed " << o.gen_seed << ") to " << o.gen_out << "\n";
    return kExitOk;
}

int cmd_init_base(const Options& o, std::ostream& out) {
    const RunConfig c = load_config(o);
    model::SsomModel m(c.encoder, c.train.seed);
    const auto ck = train::make_base_checkpoint(m);
    ck.save(o.out);
    const auto census = train::param_report(m.parameters(), "encoder.");
    out << "base checkpoint " << o.out << ": " << ck.directory.size() << " tensors, " << census.frozen
        << " frozen weights, sha256 " << train::frozen_checksum(m.parameters()) << "\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig c = load_config(o);
    const std::string data_path = o.data.empty() ? c.data_train : o.data;
    const std::string out_dir = o.out.empty() ? c.output_dir : o.out;
    if (data_path.empty()) throw UsageError("train: no dataset (pass --data or set data.train)");
    if (out_dir.empty()) throw UsageError("train: no run directory (pass --out or set output.dir)");
    if (!fs::exists(data_path)) throw UsageError("train: dataset path does not exist: " + data_path);

    model::SsomModel m(c.encoder, c.train.seed);
    train::load_base(m, train::Checkpoint::load(o.base));
    auto samples = data::load_samples(data::DatasetManifest::read(data_path));
    train::Trainer trainer(m, std::move(samples), c.train);
    if (!o.resume.empty()) trainer.resume(train::Checkpoint::load(o.resume));

    const std::string before = train::frozen_checksum(m.parameters());
    const auto census = train::param_report(m.parameters());
    out << "params: total " << census.total << ", frozen " << census.frozen << ", trainable " << census.trainable
        << " (" << fmt("%.4f", census.trainable_fraction) << ")\n";
    out << "steps: " << trainer.total_steps() << " (" << trainer.steps_per_epoch() << " per epoch), starting at "
        << trainer.completed_steps() << "\n";

    const std::size_t per_epoch = trainer.steps_per_epoch();
    trainer.set_observer([&](train::TrainEvent e, std::size_t step) {
        if (e != train::TrainEvent::Logged || step % per_epoch != 0) return;
        const auto& r = trainer.log().back();
        out << "epoch " << r.epoch + 1 << " step " << r.step << " lr " << fmt("%g", r.lr) << " bce "
            << fmt("%.6f", r.bce) << " iou " << fmt("%.6f", r.iou) << " ortho " << fmt("%.6f", r.ortho)
            << " total " << fmt("%.6f", r.total) << " budget " << r.budget << " nnz " << r.nnz_lambda << "\n"
            << std::flush;
    });
    trainer.run(train::TrainOutputs{out_dir});

    const std::string after = train::frozen_checksum(m.parameters());
    if (after != before) throw ContractError("frozen parameters changed during training");
    out << "frozen sha256 " << after << " (unchanged)\n";
    out << "finished at step " << trainer.completed_steps() << "/" << trainer.total_steps() << " in " << out_dir
        << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    if (o.ckpt.empty() == o.maps.empty()) throw UsageError("eval: pass exactly one of --ckpt or --maps");
    const auto mode = threshold_mode(o.threshold);
    const auto samples = data::load_samples(data::DatasetManifest::read(o.data));

    std::vector<metrics::PredictedSample> preds;
    if (!o.ckpt.empty()) {
        const auto m = train::model_from_checkpoint(train::Checkpoint::load(o.ckpt));
        preds = eval::predict_samples(m, samples);
    } else {
        for (const auto& s : samples) {
            const fs::path p = fs::path(o.maps) / (s.id + ".pgm");
            if (!fs::exists(p)) throw DataError("eval: missing saliency map " + p.string());
            preds.push_back({s.id, netpbm::read_pgm(p), s.mask});
        }
    }
    if (!o.predictions.empty()) {
        fs::create_directories(o.predictions);
        for (const auto& p : preds) netpbm::write_pgm(fs::path(o.predictions) / (p.id + ".pgm"), p.pred_map);
    }
    const auto report = metrics::evaluate_maps(preds, mode);
    netpbm::write_file_atomic(o.report, report.to_csv());
    out << report.summary() << "\n";
    return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
    const auto mode = threshold_mode(o.predict_threshold);
    const auto m = train::model_from_checkpoint(train::Checkpoint::load(o.ckpt));
    const Tensor image = netpbm::read_ppm(o.image);
    const std::size_t side = m.config().image_size;
    if (image.shape() != Shape{side, side, 3}) {
        throw DataError("predict: image is " + shape_string(image.shape()) + ", model expects " +
                        std::to_string(side) + "x" + std::to_string(side));
    }
    const Tensor probs = model::sigmoid_map(model::predict_logits(m, image));
    const double thr = mode.fixed ? *mode.fixed : metrics::adaptive_threshold(probs);
    Tensor mask(probs.shape());
    std::size_t on = 0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        mask[i] = probs[i] >= thr ? 1.0 : 0.0;
        on += mask[i] != 0.0;
    }
    netpbm::write_mask(o.out, mask);
    out << "mask " << o.out << ": " << on << "/" << mask.numel() << " salient pixels at threshold "
        << fmt("%.6f", thr) << "\n";
    return kExitOk;
}

struct TraceStep {
    std::size_t step = 0;
    std::vector<adalora::SlotRef> kept;
    std::vector<adalora::SlotRef> pruned;
};

std::vector<adalora::SlotRef> parse_slots(std::string_view field, std::string_view label, std::size_t line) {
    const std::string where = "trace line " + std::to_string(line) + ": ";
    if (field.substr(0, label.size()) != label || field.size() < label.size() + 2 ||
        field[label.size()] != '[' || field.back() != ']') {
        throw DataError(where + "expected " + std::string(label) + "[...]");
    }
    std::vector<adalora::SlotRef> refs;
    std::string_view body = field.substr(label.size() + 1, field.size() - label.size() - 2);
    while (!body.empty()) {
        const auto comma = body.find(',');
        const std::string item(body.substr(0, comma));
        body = comma == std::string_view::npos ? std::string_view{} : body.substr(comma + 1);
        const auto dot = item.find('.');
        std::size_t used_t = 0, used_i = 0;
        try {
            if (dot == std::string::npos) throw std::invalid_argument(item);
            const std::string ts = item.substr(0, dot), is = item.substr(dot + 1);
            adalora::SlotRef r{std::stoul(ts, &used_t), std::stoul(is, &used_i)};
            if (used_t != ts.size() || used_i != is.size()) throw std::invalid_argument(item);
            refs.push_back(r);
        } catch (const std::exception&) {
            throw DataError(where + "bad slot '" + item + "'");
        }
    }
    return refs;
}

std::vector<TraceStep> read_trace(const fs::path& path) {
    std::istringstream in(netpbm::read_file(path));
    std::vector<TraceStep> steps;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw DataError("trace line " + std::to_string(line_no) + ": expected 3 fields");
        TraceStep s;
        try {
            std::size_t used = 0;
            s.step = std::stoul(line.substr(0, t1), &used);
            if (used != t1) throw std::invalid_argument("step");
        } catch (const std::exception&) {
            throw DataError("trace line " + std::to_string(line_no) + ": bad step");
        }
        s.kept = parse_slots(std::string_view(line).substr(t1 + 1, t2 - t1 - 1), "kept:", line_no);
        s.pruned = parse_slots(std::string_view(line).substr(t2 + 1), "pruned:", line_no);
        steps.push_back(std::move(s));
    }
    if (steps.empty()) throw DataError("trace " + path.string() + " is empty");
    return steps;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    const auto steps = read_trace(o.trace);
    std::size_t triplets = 0;
    for (const auto& s : steps) {
        for (const auto& r : s.kept) triplets = std::max(triplets, r.triplet + 1);
        for (const auto& r : s.pruned) triplets = std::max(triplets, r.triplet + 1);
    }
    auto retained = [&](const TraceStep& s) {
        std::vector<std::size_t> counts(triplets, 0);
        for (const auto& r : s.kept) ++counts[r.triplet];
        return counts;
    };

    if (o.step) {
        const TraceStep* hit = nullptr;
        for (const auto& s : steps)
            if (s.step == *o.step) hit = &s;
        if (!hit) throw UsageError("inspect-ranks: step " + std::to_string(*o.step) + " is not in the trace");
        std::vector<std::size_t> cap(triplets, 0);
        for (const auto& r : hit->kept) ++cap[r.triplet];
        for (const auto& r : hit->pruned) ++cap[r.triplet];
        const auto kept = retained(*hit);
        out << "triplet\tretained\tcapacity\n";
        std::size_t total_kept = 0, total_cap = 0;
        for (std::size_t t = 0; t < triplets; ++t) {
            out << t << "\t" << kept[t] << "\t" << cap[t] << "\n";
            total_kept += kept[t];
            total_cap += cap[t];
        }
        out << "total\t" << total_kept << "\t" << total_cap << "\n";
        return kExitOk;
    }

    out << "step\ttotal";
    for (std::size_t t = 0; t < triplets; ++t) out << "\tt" << t;
    out << "\n";
    std::size_t lo = static_cast<std::size_t>(-1), hi = 0;
    for (const auto& s : steps) {
        out << s.step << "\t" << s.kept.size();
        for (auto c : retained(s)) out << "\t" << c;
        out << "\n";
        lo = std::min(lo, s.kept.size());
        hi = std::max(hi, s.kept.size());
    }
    out << "# " << steps.size() << " steps, retained min " << lo << " max " << hi << " final "
        << steps.back().kept.size() << "\n";
    return kExitOk;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
    auto results = primitive_grad_suite();
    results.push_back(full_graph_grad_check(o.grad_seed));
    bool ok = true;
    double worst_primitive = 0.0;
    for (const auto& r : results) {
        out << r.name << "\t" << fmt("%.3e", r.max_rel_error) << "\t< " << fmt("%g", r.tolerance) << "\t"
            << (r.passed() ? "ok" : "FAIL") << "\n";
        ok = ok && r.passed();
        if (r.name != "full_graph") worst_primitive = std::max(worst_primitive, r.max_rel_error);
    }
    out << "max primitive error " << fmt("%.3e", worst_primitive) << ", full graph "
        << fmt("%.3e", results.back().max_rel_error) << (ok ? " : all within tolerance" : " : FAILED") << "\n";
    return ok ? kExitOk : kExitNumeric;
}

int dispatch(App& a, std::ostream& out) {
    if (a.gen_data->parsed()) return cmd_gen_data(a.o, out);
    if (a.init_base->parsed()) return cmd_init_base(a.o, out);
    if (a.train->parsed()) return cmd_train(a.o, out);
    if (a.eval->parsed()) return cmd_eval(a.o, out);
    if (a.predict->parsed()) return cmd_predict(a.o, out);
    if (a.inspect->parsed()) return cmd_inspect(a.o, out);
    if (a.grad_check->parsed()) return cmd_grad_check(a.o, out);
    if (a.reference->parsed()) {
        const std::string page = reference_page();
        if (a.o.out.empty()) out << page;
        else netpbm::write_file_atomic(a.o.out, page);
        return kExitOk;
    }
    throw UsageError("no command given");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    App a;
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        if (!rev.empty()) rev.pop_back();  // program name
        a.app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = a.app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        return dispatch(a, out);
    } catch (const Error& e) {
        err << "error[" << category(e.kind()) << "]: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error[data]: " << e.what() << "\n";
        return kExitData;
    }
}

std::string reference_page() {
    App a;
    std::string page = "# ssom command reference\n\n";
    page += "Generated by `ssom config-reference`.\n\n";
    page += "Exit codes: 0 success, 2 usage error (bad flags, unknown or invalid config keys, missing inputs), "
            "3 data error (malformed or inconsistent files), 4 numeric failure (non-finite values; "
            "`grad-check` also returns 4 when a check exceeds its tolerance).\n\n";
    page += "## Commands\n\n";
    for (const CLI::App* sub : {a.gen_data, a.init_base, a.train, a.eval, a.predict, a.inspect, a.grad_check,
                                a.reference}) {
        page += "### " + sub->get_name() + "\n\n```\n" + sub->help() + "```\n\n";
    }
    page += "## Config file\n\n";
    page += "Flat `key = value` lines. `#` starts a comment. Each key may appear once; unknown keys are rejected. "
            "`--set key=value` applies the same keys after the file.\n\n";
    page += config_reference_markdown();
    return page;
}

}  // namespace ssom::cli
