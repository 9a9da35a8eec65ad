// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ssom/tensor.hpp"

namespace ssom::train {

/// Binary layout:
///   "SSOM" | u32 version | u32 header length | UTF-8 JSON header | f64 payload
/// All integers and doubles little-endian. The header directory maps every
/// tensor name to its offset (in doubles), shape and frozen flag; entries are
/// contiguous and cover the payload exactly.
struct TensorRecord {
    std::string name;
    Shape shape;
    bool frozen = false;
    std::size_t offset = 0;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;  // "base" or "full"
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json state = nlohmann::json::object();  // step counters, optimizer scalars
    std::vector<TensorRecord> directory;
    std::vector<double> payload;

    void add(const std::string& name, const Tensor& value, bool frozen);
    const TensorRecord* find(std::string_view name) const;
    Tensor tensor(const TensorRecord& record) const;
    Tensor tensor(std::string_view name) const;

    std::string serialize() const;
    static Checkpoint parse(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace ssom::train
