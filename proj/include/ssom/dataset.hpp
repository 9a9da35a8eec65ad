// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssom/random.hpp"
#include "ssom/tensor.hpp"

namespace ssom::data {

struct SaliencySample {
    std::string id;
    Tensor image;  // H x W x 3 in [0, 1]
    Tensor mask;   // H x W, values 0 / 1
};

struct ManifestEntry {
    std::string id;
    std::string image;  // relative to the manifest directory
    std::string mask;
};

/// `manifest.tsv`: optional `# key=value` header lines (split, seed), then one
/// `id<TAB>image<TAB>mask` record per line.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::string split = "train";
    std::uint64_t seed = 0;

    static constexpr const char* kFileName = "manifest.tsv";

    std::string serialize() const;
    static DatasetManifest parse(const std::string& text, const std::filesystem::path& root);
    void write() const;
    static DatasetManifest read(const std::filesystem::path& dir_or_file);
};

/// Generator knobs. Backgrounds are dark low-contrast noise, the single object
/// a bright flat colour with the same noise, so difficulty scales with the gap.
struct GeneratorParams {
    double background_lo = 0.05;
    double background_hi = 0.35;
    double object_lo = 0.65;
    double object_hi = 0.95;
    double noise = 0.04;
    double min_area = 0.05;
    double max_area = 0.40;
};

struct ShapeSpec {
    enum class Kind { Ellipse, Rectangle };
    Kind kind = Kind::Ellipse;
    // Ellipse: centre and semi-axes in pixel units (pixel centres at i + 0.5).
    double cx = 0.0, cy = 0.0, rx = 0.0, ry = 0.0;
    // Rectangle: covers columns [x0, x1) and rows [y0, y1).
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool contains(std::size_t row, std::size_t col) const;
};

struct GeneratedSample {
    SaliencySample sample;
    ShapeSpec shape;
};

GeneratedSample generate_sample(std::string id, std::size_t image_size, Rng& rng,
                                const GeneratorParams& params = {});

/// Writes `n_samples` PPM/PGM pairs plus the manifest into `dir`.
DatasetManifest generate_synthetic(const std::filesystem::path& dir, std::size_t n_samples, std::size_t image_size,
                                   std::uint64_t seed, const std::string& split = "train",
                                   const GeneratorParams& params = {});

/// Reads every listed pair; ids must be unique, files must parse.
std::vector<SaliencySample> load_samples(const DatasetManifest& manifest);

/// Seeded per-epoch permutation and fixed-size mini-batches (last one may be short).
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const;
    std::vector<std::size_t> permutation(std::size_t epoch) const;
    std::vector<std::vector<std::size_t>> batches(std::size_t epoch) const;

private:
    std::size_t size_;
    std::size_t batch_;
    std::uint64_t seed_;
};

/// Samples reordered by the epoch-0 permutation of `shuffle_seed`.
std::vector<SaliencySample> load_dataset(const DatasetManifest& manifest, std::uint64_t shuffle_seed);

std::size_t connected_components(const Tensor& mask);

}  // namespace ssom::data
