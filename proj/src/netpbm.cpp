// SPDX-License-Identifier: Apache-2.0

#include "ssom/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "ssom/error.hpp"

namespace ssom::netpbm {

namespace {

struct Header {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t payload_offset = 0;
};

class HeaderParser {
public:
    explicit HeaderParser(std::string_view bytes) : bytes_(bytes) {}

    Header parse(std::string_view magic) {
        if (bytes_.substr(0, 2) != magic) throw DataError("netpbm: expected magic " + std::string(magic));
        pos_ = 2;
        Header h;
        h.width = number("width");
        h.height = number("height");
        const std::size_t maxval = number("maxval");
        if (maxval != 255) throw DataError("netpbm: maxval must be 255, got " + std::to_string(maxval));
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw DataError("netpbm: missing whitespace after maxval");
        }
        h.payload_offset = pos_ + 1;
        if (h.width == 0 || h.height == 0) throw DataError("netpbm: zero image dimension");
        return h;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        const std::size_t before = pos_;
        skip_space_and_comments();
        if (pos_ == before) throw DataError(std::string("netpbm: missing separator before ") + what);
        std::size_t value = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (1u << 24)) throw DataError(std::string("netpbm: ") + what + " too large");
            ++pos_;
            ++digits;
        }
        if (digits == 0) throw DataError(std::string("netpbm: malformed ") + what);
        return value;
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string_view payload(std::string_view bytes, const Header& h, std::size_t channels) {
    const std::size_t want = h.width * h.height * channels;
    const std::size_t have = bytes.size() - std::min(bytes.size(), h.payload_offset);
    if (have < want) {
        throw DataError("netpbm: truncated payload (" + std::to_string(have) + " of " + std::to_string(want) +
                        " bytes)");
    }
    if (have > want) throw DataError("netpbm: trailing bytes after payload");
    return bytes.substr(h.payload_offset, want);
}

std::string header(const char* magic, std::size_t width, std::size_t height) {
    return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

void require_shape(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank || (rank == 3 && t.shape()[2] != 3)) {
        throw ShapeError(std::string(what) + ": unexpected shape " + shape_string(t.shape()));
    }
}

}  // namespace

std::uint8_t quantize(double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

std::string encode_ppm(const Tensor& image) {
    require_shape(image, 3, "encode_ppm");
    std::string out = header("P6", image.shape()[1], image.shape()[0]);
    for (double v : image.values()) out.push_back(static_cast<char>(quantize(v)));
    return out;
}

Tensor decode_ppm(std::string_view bytes) {
    const Header h = HeaderParser(bytes).parse("P6");
    const auto data = payload(bytes, h, 3);
    Tensor out(Shape{h.height, h.width, 3});
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<unsigned char>(data[i]) / 255.0;
    return out;
}

std::string encode_pgm(const Tensor& gray) {
    require_shape(gray, 2, "encode_pgm");
    std::string out = header("P5", gray.cols(), gray.rows());
    for (double v : gray.values()) out.push_back(static_cast<char>(quantize(v)));
    return out;
}

Tensor decode_pgm(std::string_view bytes) {
    const Header h = HeaderParser(bytes).parse("P5");
    const auto data = payload(bytes, h, 1);
    Tensor out(Shape{h.height, h.width});
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<unsigned char>(data[i]) / 255.0;
    return out;
}

std::string encode_mask(const Tensor& mask) {
    require_shape(mask, 2, "encode_mask");
    for (double v : mask.values()) {
        if (v != 0.0 && v != 1.0) throw ContractError("encode_mask: mask must be binary");
    }
    return encode_pgm(mask);
}

Tensor decode_mask(std::string_view bytes) {
    const Header h = HeaderParser(bytes).parse("P5");
    const auto data = payload(bytes, h, 1);
    Tensor out(Shape{h.height, h.width});
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto b = static_cast<unsigned char>(data[i]);
        if (b != 0 && b != 255) throw DataError("mask: non-binary value " + std::to_string(b));
        out[i] = b == 255 ? 1.0 : 0.0;
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) { write_file_atomic(path, encode_ppm(image)); }
Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
void write_pgm(const std::filesystem::path& path, const Tensor& gray) { write_file_atomic(path, encode_pgm(gray)); }
Tensor read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }
void write_mask(const std::filesystem::path& path, const Tensor& mask) { write_file_atomic(path, encode_mask(mask)); }
Tensor read_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }

}  // namespace ssom::netpbm
