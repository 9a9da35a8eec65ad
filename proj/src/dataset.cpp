// SPDX-License-Identifier: Apache-2.0

#include "ssom/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "ssom/error.hpp"
#include "ssom/netpbm.hpp"

namespace ssom::data {

namespace {

std::uint64_t split_stream(const std::string& split) {
    // FNV-1a
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : split) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

ShapeSpec sample_shape(std::size_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    ShapeSpec shape;
    if (rng.below(2) == 0) {
        shape.kind = ShapeSpec::Kind::Ellipse;
        shape.rx = rng.uniform(0.12 * s, 0.40 * s);
        shape.ry = rng.uniform(0.12 * s, 0.40 * s);
        shape.cx = rng.uniform(shape.rx, s - shape.rx);
        shape.cy = rng.uniform(shape.ry, s - shape.ry);
    } else {
        shape.kind = ShapeSpec::Kind::Rectangle;
        const std::size_t lo = std::max<std::size_t>(2, size / 5);
        const std::size_t hi = std::max(lo, size * 7 / 10);
        const std::size_t w = lo + rng.below(hi - lo + 1);
        const std::size_t h = lo + rng.below(hi - lo + 1);
        shape.x0 = rng.below(size - w + 1);
        shape.y0 = rng.below(size - h + 1);
        shape.x1 = shape.x0 + w;
        shape.y1 = shape.y0 + h;
    }
    return shape;
}

}  // namespace

bool ShapeSpec::contains(std::size_t row, std::size_t col) const {
    if (kind == Kind::Rectangle) return col >= x0 && col < x1 && row >= y0 && row < y1;
    const double dx = (static_cast<double>(col) + 0.5 - cx) / rx;
    const double dy = (static_cast<double>(row) + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

GeneratedSample generate_sample(std::string id, std::size_t image_size, Rng& rng, const GeneratorParams& params) {
    if (image_size < 8) throw ContractError("generate_sample: image_size must be at least 8");
    const double total = static_cast<double>(image_size * image_size);
    GeneratedSample out;
    Tensor mask(Shape{image_size, image_size});
    for (;;) {
        out.shape = sample_shape(image_size, rng);
        std::size_t area = 0;
        for (std::size_t r = 0; r < image_size; ++r)
            for (std::size_t c = 0; c < image_size; ++c) {
                const bool in = out.shape.contains(r, c);
                mask.at(r, c) = in ? 1.0 : 0.0;
                area += in;
            }
        const double frac = static_cast<double>(area) / total;
        if (frac >= params.min_area && frac <= params.max_area && connected_components(mask) == 1) break;
    }

    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(params.background_lo, params.background_hi);
    for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(params.object_lo, params.object_hi);

    Tensor image(Shape{image_size, image_size, 3});
    for (std::size_t r = 0; r < image_size; ++r)
        for (std::size_t c = 0; c < image_size; ++c) {
            const double* base = mask.at(r, c) == 1.0 ? fg : bg;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = base[ch] + rng.uniform(-params.noise, params.noise);
                // Stored at 8-bit precision so in-memory and on-disk samples agree.
                image[(r * image_size + c) * 3 + ch] = netpbm::quantize(clamp01(v)) / 255.0;
            }
        }
    out.sample = SaliencySample{std::move(id), std::move(image), std::move(mask)};
    return out;
}

std::size_t connected_components(const Tensor& mask) {
    const std::size_t h = mask.rows(), w = mask.cols();
    std::vector<char> seen(h * w, 0);
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (mask[start] != 1.0 || seen[start]) continue;
        ++count;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const std::size_t r = i / w, c = i % w;
            auto visit = [&](std::size_t j) {
                if (mask[j] == 1.0 && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            };
            if (r > 0) visit(i - w);
            if (r + 1 < h) visit(i + w);
            if (c > 0) visit(i - 1);
            if (c + 1 < w) visit(i + 1);
        }
    }
    return count;
}

std::string DatasetManifest::serialize() const {
    std::ostringstream os;
    os << "# split=" << split << '\n';
    os << "# seed=" << seed << '\n';
    for (const auto& e : entries) os << e.id << '\t' << e.image << '\t' << e.mask << '\n';
    return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text, const std::filesystem::path& root) {
    DatasetManifest m;
    m.root = root;
    std::istringstream in(text);
    std::string line;
    std::set<std::string> ids;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            key.erase(0, key.find_first_not_of(' '));
            const std::string value = line.substr(eq + 1);
            if (key == "split") {
                m.split = value;
            } else if (key == "seed") {
                try {
                    m.seed = std::stoull(value);
                } catch (const std::exception&) {
                    throw DataError("manifest line " + std::to_string(lineno) + ": bad seed");
                }
            }
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw DataError("manifest line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        ManifestEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
        if (e.id.empty() || e.image.empty() || e.mask.empty()) {
            throw DataError("manifest line " + std::to_string(lineno) + ": empty field");
        }
        if (!ids.insert(e.id).second) throw DataError("manifest: duplicate id " + e.id);
        m.entries.push_back(std::move(e));
    }
    return m;
}

void DatasetManifest::write() const { netpbm::write_file_atomic(root / kFileName, serialize()); }

DatasetManifest DatasetManifest::read(const std::filesystem::path& dir_or_file) {
    std::filesystem::path file = dir_or_file;
    if (std::filesystem::is_directory(file)) file /= kFileName;
    if (!std::filesystem::exists(file)) throw DataError("manifest not found: " + file.string());
    return parse(netpbm::read_file(file), file.parent_path());
}

DatasetManifest generate_synthetic(const std::filesystem::path& dir, std::size_t n_samples, std::size_t image_size,
                                   std::uint64_t seed, const std::string& split, const GeneratorParams& params) {
    if (n_samples == 0) throw ContractError("generate_synthetic: need at least one sample");
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "masks", ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.root = dir;
    m.split = split;
    m.seed = seed;
    Rng rng(seed, split_stream(split));
    for (std::size_t i = 0; i < n_samples; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_%04zu", split.c_str(), i);
        auto g = generate_sample(id, image_size, rng, params);
        ManifestEntry e{id, "images/" + std::string(id) + ".ppm", "masks/" + std::string(id) + ".pgm"};
        netpbm::write_ppm(dir / e.image, g.sample.image);
        netpbm::write_mask(dir / e.mask, g.sample.mask);
        m.entries.push_back(std::move(e));
    }
    m.write();
    return m;
}

std::vector<SaliencySample> load_samples(const DatasetManifest& manifest) {
    std::vector<SaliencySample> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        SaliencySample s;
        s.id = e.id;
        s.image = netpbm::read_ppm(manifest.root / e.image);
        s.mask = netpbm::read_mask(manifest.root / e.mask);
        if (s.image.shape()[0] != s.mask.rows() || s.image.shape()[1] != s.mask.cols()) {
            throw DataError("sample " + e.id + ": image and mask sizes differ");
        }
        out.push_back(std::move(s));
    }
    return out;
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), seed_(seed) {
    if (dataset_size == 0) throw ContractError("BatchSampler: empty dataset");
    if (batch_size == 0) throw ContractError("BatchSampler: batch size must be positive");
}

std::size_t BatchSampler::batches_per_epoch() const { return (size_ + batch_ - 1) / batch_; }

std::vector<std::size_t> BatchSampler::permutation(std::size_t epoch) const {
    std::vector<std::size_t> order(size_);
    for (std::size_t i = 0; i < size_; ++i) order[i] = i;
    Rng rng(seed_, epoch);
    for (std::size_t i = size_; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<std::vector<std::size_t>> BatchSampler::batches(std::size_t epoch) const {
    const auto order = permutation(epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < size_; start += batch_) {
        const std::size_t end = std::min(size_, start + batch_);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::vector<SaliencySample> load_dataset(const DatasetManifest& manifest, std::uint64_t shuffle_seed) {
    auto samples = load_samples(manifest);
    const auto order = BatchSampler(samples.size(), 1, shuffle_seed).permutation(0);
    std::vector<SaliencySample> out;
    out.reserve(samples.size());
    for (std::size_t i : order) out.push_back(std::move(samples[i]));
    return out;
}

}  // namespace ssom::data
