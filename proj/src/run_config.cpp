// SPDX-License-Identifier: Apache-2.0

#include "ssom/run_config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "ssom/error.hpp"
#include "ssom/netpbm.hpp"

namespace ssom::cli {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc{} || ptr != end) {
        throw UsageError("config key " + std::string(key) + ": cannot parse '" + std::string(text) + "'");
    }
    return value;
}

std::size_t parse_size(std::string_view key, std::string_view text) { return parse_number<std::size_t>(key, text); }
double parse_real(std::string_view key, std::string_view text) { return parse_number<double>(key, text); }

// `auto` leaves the value to the default schedule.
std::optional<std::size_t> parse_optional_size(std::string_view key, std::string_view text) {
    if (text == "auto") return std::nullopt;
    return parse_size(key, text);
}

std::string show(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::vector<ConfigKey> build_schema() {
    const encoder::EncoderConfig e;
    const train::TrainConfig t;
    std::vector<ConfigKey> s;
    auto add = [&](std::string key, std::string type, std::string def, std::string doc,
                   std::function<void(RunConfig&, const std::string&)> fn) {
        s.push_back({std::move(key), std::move(type), std::move(def), std::move(doc), std::move(fn)});
    };

    add("encoder.image_size", "integer", std::to_string(e.image_size), "Square input side in pixels.",
        [](RunConfig& c, const std::string& v) { c.encoder.image_size = parse_size("encoder.image_size", v); });
    add("encoder.patch_size", "integer", std::to_string(e.patch_size), "Patch side; must divide image_size.",
        [](RunConfig& c, const std::string& v) { c.encoder.patch_size = parse_size("encoder.patch_size", v); });
    add("encoder.embed_dim", "integer", std::to_string(e.embed_dim), "Token width n.",
        [](RunConfig& c, const std::string& v) { c.encoder.embed_dim = parse_size("encoder.embed_dim", v); });
    add("encoder.num_blocks", "integer", std::to_string(e.num_blocks), "Transformer blocks l.",
        [](RunConfig& c, const std::string& v) { c.encoder.num_blocks = parse_size("encoder.num_blocks", v); });
    add("encoder.num_heads", "integer", std::to_string(e.num_heads), "Attention heads; must divide embed_dim.",
        [](RunConfig& c, const std::string& v) { c.encoder.num_heads = parse_size("encoder.num_heads", v); });
    add("encoder.adapter_rank", "integer", std::to_string(e.adapter_rank),
        "Initial rank r of every adapter triplet (2r <= embed_dim).",
        [](RunConfig& c, const std::string& v) { c.encoder.adapter_rank = parse_size("encoder.adapter_rank", v); });
    add("encoder.base_seed", "integer", std::to_string(e.base_seed), "Seed of the frozen base weights.",
        [](RunConfig& c, const std::string& v) { c.encoder.base_seed = parse_number<std::uint64_t>("encoder.base_seed", v); });

    add("train.epochs", "integer", std::to_string(t.epochs), "Passes over the training set.",
        [](RunConfig& c, const std::string& v) { c.train.epochs = parse_size("train.epochs", v); });
    add("train.base_lr", "real", show(t.base_lr), "Initial learning rate, shared by all parameter groups.",
        [](RunConfig& c, const std::string& v) { c.train.base_lr = parse_real("train.base_lr", v); });
    add("train.lr_decay_factor", "real", show(t.lr_decay_factor), "Learning-rate multiplier applied every lr_decay_every_epochs.",
        [](RunConfig& c, const std::string& v) { c.train.lr_decay_factor = parse_real("train.lr_decay_factor", v); });
    add("train.lr_decay_every_epochs", "integer", std::to_string(t.lr_decay_every_epochs), "Epoch period of the decay.",
        [](RunConfig& c, const std::string& v) {
            c.train.lr_decay_every_epochs = parse_size("train.lr_decay_every_epochs", v);
        });
    add("train.batch_size", "integer", std::to_string(t.batch_size), "Mini-batch size; the last partial batch is kept.",
        [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_size("train.batch_size", v); });
    add("train.lambda_reg", "real", show(t.lambda_reg), "Weight of the orthogonality regulariser.",
        [](RunConfig& c, const std::string& v) { c.train.lambda_reg = parse_real("train.lambda_reg", v); });
    add("train.seed", "integer", std::to_string(t.seed), "Seed for adapter/decoder/prompt init and shuffling.",
        [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); });
    add("train.optimizer", "adam|sgd", "adam", "Update rule for every trainable group.",
        [](RunConfig& c, const std::string& v) {
            if (v == "adam") c.train.optimizer = train::OptimizerKind::Adam;
            else if (v == "sgd") c.train.optimizer = train::OptimizerKind::Sgd;
            else throw UsageError("config key train.optimizer: expected adam or sgd, got '" + v + "'");
        });
    add("train.adam_beta1", "real", show(t.adam_beta1), "Adam first-moment decay.",
        [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = parse_real("train.adam_beta1", v); });
    add("train.adam_beta2", "real", show(t.adam_beta2), "Adam second-moment decay.",
        [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = parse_real("train.adam_beta2", v); });
    add("train.adam_eps", "real", show(t.adam_eps), "Adam denominator offset.",
        [](RunConfig& c, const std::string& v) { c.train.adam_eps = parse_real("train.adam_eps", v); });
    add("train.schedule.b_init", "integer|auto", "auto", "Initial singular-value budget (auto: 2*num_blocks*adapter_rank).",
        [](RunConfig& c, const std::string& v) { c.train.schedule.b_init = parse_optional_size("train.schedule.b_init", v); });
    add("train.schedule.b_target", "integer|auto", "auto", "Final budget (auto: half of b_init's default).",
        [](RunConfig& c, const std::string& v) {
            c.train.schedule.b_target = parse_optional_size("train.schedule.b_target", v);
        });
    add("train.schedule.warmup_steps", "integer|auto", "auto", "Steps held at b_init (auto: 10% of the run).",
        [](RunConfig& c, const std::string& v) {
            c.train.schedule.warmup_steps = parse_optional_size("train.schedule.warmup_steps", v);
        });
    add("train.schedule.final_steps", "integer|auto", "auto", "Steps held at b_target (auto: 20% of the run).",
        [](RunConfig& c, const std::string& v) {
            c.train.schedule.final_steps = parse_optional_size("train.schedule.final_steps", v);
        });
    add("train.checkpoint_every", "integer", "0", "Write step_NNNNNN.ckpt every this many steps (0: final only).",
        [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = parse_size("train.checkpoint_every", v); });
    add("train.max_steps", "integer", "0", "Stop after this global step and checkpoint it (0: run to completion).",
        [](RunConfig& c, const std::string& v) { c.train.max_steps = parse_size("train.max_steps", v); });

    add("data.train", "path", "", "Training dataset directory or manifest; `train --data` overrides it.",
        [](RunConfig& c, const std::string& v) { c.data_train = v; });
    add("data.test", "path", "", "Evaluation dataset directory or manifest; `eval --data` overrides it.",
        [](RunConfig& c, const std::string& v) { c.data_test = v; });
    add("output.dir", "path", "", "Run directory; `train --out` overrides it.",
        [](RunConfig& c, const std::string& v) { c.output_dir = v; });
    return s;
}

}  // namespace

void RunConfig::validate() const {
    try {
        encoder.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    train.validate();
}

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = build_schema();
    return schema;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
    for (const auto& k : config_schema()) {
        if (k.key == key) {
            k.set(config, std::string(value));
            return;
        }
    }
    throw UsageError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_run_config(std::string_view text, std::string_view source) {
    RunConfig config;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw UsageError(where + "expected `key = value`");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError(where + "missing key");
        if (!seen.insert(std::string(key)).second) throw UsageError(where + "duplicate key " + std::string(key));
        try {
            apply_setting(config, key, value);
        } catch (const UsageError& e) {
            throw UsageError(where + e.what());
        }
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = netpbm::read_file(path);
    } catch (const DataError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return parse_run_config(text, path.string());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("override '" + o + "' is not key=value");
        apply_setting(config, trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
    }
}

std::string config_reference_markdown() {
    std::string out = "| key | type | default | meaning |\n|---|---|---|---|\n";
    for (const auto& k : config_schema()) {
        out += "| `" + k.key + "` | " + k.type + " | " + (k.default_value.empty() ? "" : "`" + k.default_value + "`") +
               " | " + k.description + " |\n";
    }
    return out;
}

}  // namespace ssom::cli
