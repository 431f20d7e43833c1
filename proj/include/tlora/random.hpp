// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tlora {

/// Counter-based generator: output k of a stream is splitmix64(key + (k + 1) * gamma),
/// where key is derived from (seed, stream id). Streams are independent and the
/// sequence depends only on the key, so results are identical across platforms.
///
/// Normals come from Box-Muller on consecutive uniform pairs; both outputs of a
/// pair are used, cosine branch first.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(mix(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL))) {}

    /// Child stream; does not advance this generator.
    CounterRng split(std::uint64_t stream) const { return CounterRng(key_, stream + 1); }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    void fill_normal(std::span<double> out, double stddev) {
        for (double& v : out) v = stddev * next_normal();
    }

    Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
        Matrix m = Matrix::zeros(rows, cols);
        fill_normal(m.data(), stddev);
        return m;
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tlora
