// SPDX-License-Identifier: Apache-2.0

#include "ssom/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "ssom/error.hpp"
#include "ssom/netpbm.hpp"

namespace ssom::train {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'O', 'M'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& value, bool frozen) {
    if (find(name)) throw ContractError("checkpoint: duplicate tensor " + name);
    directory.push_back({name, value.shape(), frozen, payload.size()});
    payload.insert(payload.end(), value.values().begin(), value.values().end());
}

const TensorRecord* Checkpoint::find(std::string_view name) const {
    for (const auto& r : directory)
        if (r.name == name) return &r;
    return nullptr;
}

Tensor Checkpoint::tensor(const TensorRecord& record) const {
    const std::size_t n = shape_numel(record.shape);
    auto first = payload.begin() + static_cast<std::ptrdiff_t>(record.offset);
    return Tensor(record.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

Tensor Checkpoint::tensor(std::string_view name) const {
    const auto* r = find(name);
    if (!r) throw DataError("checkpoint: missing tensor " + std::string(name));
    return tensor(*r);
}

std::string Checkpoint::serialize() const {
    nlohmann::json header;
    header["kind"] = kind;
    header["config"] = config;
    header["state"] = state;
    header["payload_doubles"] = payload.size();
    auto& dir = header["tensors"] = nlohmann::json::array();
    for (const auto& r : directory) {
        dir.push_back({{"name", r.name}, {"shape", r.shape}, {"frozen", r.frozen}, {"offset", r.offset}});
    }
    const std::string text = header.dump();

    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    const std::size_t start = out.size();
    out.resize(start + payload.size() * sizeof(double));
    if (!payload.empty()) std::memcpy(out.data() + start, payload.data(), payload.size() * sizeof(double));
    return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError("checkpoint: bad magic");
    }
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t header_len = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) throw DataError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed header: ") + e.what());
    }

    Checkpoint ck;
    std::size_t expected = 0;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.config = header.at("config");
        ck.state = header.at("state");
        expected = header.at("payload_doubles").get<std::size_t>();
        for (const auto& r : header.at("tensors")) {
            ck.directory.push_back({r.at("name").get<std::string>(), r.at("shape").get<Shape>(),
                                    r.at("frozen").get<bool>(), r.at("offset").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: incomplete header: ") + e.what());
    }
    if (ck.kind != "base" && ck.kind != "full") throw DataError("checkpoint: unknown kind " + ck.kind);

    const std::size_t payload_bytes = bytes.size() - 12 - header_len;
    if (payload_bytes != expected * sizeof(double)) {
        throw DataError("checkpoint integrity: payload is " + std::to_string(payload_bytes) + " bytes, expected " +
                        std::to_string(expected * sizeof(double)));
    }
    std::size_t cursor = 0;
    for (const auto& r : ck.directory) {
        if (r.offset != cursor) throw DataError("checkpoint integrity: directory gap or overlap at " + r.name);
        for (auto e : r.shape)
            if (e == 0) throw DataError("checkpoint integrity: zero extent in " + r.name);
        cursor += shape_numel(r.shape);
    }
    if (cursor != expected) throw DataError("checkpoint integrity: directory does not cover the payload");

    ck.payload.resize(expected);
    if (expected) std::memcpy(ck.payload.data(), bytes.data() + 12 + header_len, payload_bytes);
    for (double v : ck.payload) {
        if (!std::isfinite(v)) throw DataError("checkpoint integrity: non-finite payload value");
    }
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { netpbm::write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return parse(netpbm::read_file(path)); }

}  // namespace ssom::train
