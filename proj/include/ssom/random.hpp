// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "ssom/tensor.hpp"

namespace ssom {

/// Seeded generator with platform-independent output.
///
/// std::mt19937_64 is fully specified by the standard; the std:: distributions
/// are not, so the variates below are derived from raw engine words directly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n);
    /// Box-Muller normal variate.
    double normal(double mean = 0.0, double stddev = 1.0);

    Tensor normal_tensor(Shape shape, double stddev);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ssom
