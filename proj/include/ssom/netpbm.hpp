// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ssom/tensor.hpp"

namespace ssom::netpbm {

/// Binary PPM (P6) / PGM (P5), maxval 255. Values map to bytes as round(255 x).
std::uint8_t quantize(double v);

std::string encode_ppm(const Tensor& image);           // H x W x 3 in [0, 1]
Tensor decode_ppm(std::string_view bytes);             // -> H x W x 3, k / 255
std::string encode_pgm(const Tensor& gray);            // H x W in [0, 1]
Tensor decode_pgm(std::string_view bytes);             // -> H x W, k / 255
std::string encode_mask(const Tensor& mask);           // binary H x W -> {0, 255}
Tensor decode_mask(std::string_view bytes);            // strict: only 0 and 255 accepted

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& gray);
Tensor read_pgm(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Tensor& mask);
Tensor read_mask(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ssom::netpbm
