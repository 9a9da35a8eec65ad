// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ssom/encoder.hpp"
#include "ssom/trainer.hpp"

namespace ssom::cli {

struct RunConfig {
    encoder::EncoderConfig encoder;
    train::TrainConfig train;
    std::string data_train;  // dataset directory (or manifest) for `train`
    std::string data_test;   // dataset directory (or manifest) for `eval`
    std::string output_dir;  // run directory for `train`

    /// Encoder and training checks, reported as usage errors.
    void validate() const;
};

struct ConfigKey {
    std::string key;
    std::string type;
    std::string default_value;
    std::string description;
    std::function<void(RunConfig&, const std::string&)> set;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_schema();

/// Sets one key from its textual value. Unknown keys and malformed values are usage errors.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Flat `key = value` lines; `#` starts a comment; blank lines are ignored; a key may appear once.
RunConfig parse_run_config(std::string_view text, std::string_view source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies `key=value` overrides on top of a parsed config.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

/// Markdown table of the schema.
std::string config_reference_markdown();

}  // namespace ssom::cli
