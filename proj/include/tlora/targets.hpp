// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/random.hpp"
#include "tlora/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

namespace tlora {

struct QRResult {
    Matrix q;  ///< m x n, orthonormal columns
    Matrix r;  ///< n x n, upper triangular with positive diagonal
};

/// Thin Householder QR of a full-column-rank m x n matrix (m >= n), signs
/// normalized so that diag(R) > 0.
inline QRResult qr_householder(const Matrix& x) {
    detail::require_matrix(x, "qr_householder input");
    const std::size_t m = x.rows(), n = x.cols();
    if (m < n) throw DomainError("qr_householder needs rows >= cols");
    Matrix a = x;
    std::vector<std::vector<double>> reflectors(n);
    const double scale = std::max(fro_norm(x), 1e-300);
    for (std::size_t k = 0; k < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < m; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        if (norm <= 1e-13 * scale)
            throw NumericalError("qr_householder: matrix is rank deficient at column " + std::to_string(k + 1));
        const double alpha = a(k, k) > 0.0 ? -norm : norm;
        std::vector<double> v(m - k);
        for (std::size_t i = k; i < m; ++i) v[i - k] = a(i, k);
        v[0] -= alpha;
        double vn = 0.0;
        for (double e : v) vn += e * e;
        if (vn > 0.0) {
            for (std::size_t j = k; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t i = k; i < m; ++i) dot += v[i - k] * a(i, j);
                const double f = 2.0 * dot / vn;
                for (std::size_t i = k; i < m; ++i) a(i, j) -= f * v[i - k];
            }
        }
        reflectors[k] = std::move(v);
    }
    // Accumulate Q = H_1 ... H_n applied to the first n columns of I.
    Matrix q = Matrix::zeros(m, n);
    for (std::size_t j = 0; j < n; ++j) q(j, j) = 1.0;
    for (std::size_t k = n; k-- > 0;) {
        const auto& v = reflectors[k];
        double vn = 0.0;
        for (double e : v) vn += e * e;
        if (vn == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += v[i - k] * q(i, j);
            const double f = 2.0 * dot / vn;
            for (std::size_t i = k; i < m; ++i) q(i, j) -= f * v[i - k];
        }
    }
    Matrix r = Matrix::zeros(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i <= j; ++i) r(i, j) = a(i, j);
    for (std::size_t i = 0; i < n; ++i)
        if (r(i, i) < 0.0) {
            for (std::size_t j = 0; j < n; ++j) r(i, j) = -r(i, j);
            for (std::size_t k = 0; k < m; ++k) q(k, i) = -q(k, i);
        }
    return {std::move(q), std::move(r)};
}

struct RotationTarget {
    Matrix w_star;
    Matrix t_star;
};

/// W* = W0 T*, T* = Q from QR(I + F), F_ij ~ N(0, eps^2).
inline RotationTarget gen_rotation_target(const Matrix& w0, double epsilon, std::uint64_t seed) {
    detail::require_matrix(w0, "rotation target base");
    if (w0.rows() != w0.cols()) throw DomainError("rotation target needs a square base weight");
    if (epsilon < 0.0) throw DomainError("rotation perturbation must be >= 0");
    const std::size_t n = w0.cols();
    CounterRng rng(seed, 0x707);
    Matrix x = rng.normal_matrix(n, n, epsilon);
    for (std::size_t i = 0; i < n; ++i) x(i, i) += 1.0;
    Matrix t = qr_householder(x).q;
    return {matmul(w0, t), std::move(t)};
}

/// Population standard deviation of all entries.
inline double entry_std(const Matrix& m) {
    const double n = static_cast<double>(m.size());
    double mean = 0.0;
    for (double v : m.data()) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : m.data()) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / n);
}

/// W* = W0 + sigma B* A* with B*, A* ~ N(0, 1), sigma set so std(W* - W0) = target_std.
inline Matrix gen_lowrank_target(const Matrix& w0, std::size_t rank, double target_std, std::uint64_t seed) {
    detail::require_matrix(w0, "low-rank target base");
    if (rank < 1) throw DomainError("low-rank target rank must be >= 1");
    if (target_std < 0.0) throw DomainError("target_std must be >= 0");
    if (target_std == 0.0) return w0;
    for (std::uint64_t attempt = 0; attempt <= 3; ++attempt) {
        CounterRng rng(seed + attempt, 0x10E);
        const Matrix b = rng.normal_matrix(w0.rows(), rank, 1.0);
        const Matrix a = rng.normal_matrix(rank, w0.cols(), 1.0);
        const Matrix diff = matmul(b, a);
        const double s = entry_std(diff);
        if (s > 0.0) return w0 + (target_std / s) * diff;
    }
    throw NumericalError("gen_lowrank_target: degenerate low-rank product after 3 retries");
}

/// Q from QR(X), X_ij ~ N(0, 1).
inline Matrix gen_random_orthogonal(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw DomainError("orthogonal matrix side must be >= 1");
    CounterRng rng(seed, 0x0E7);
    return qr_householder(rng.normal_matrix(n, n, 1.0)).q;
}

/// Base weight with entries ~ N(0, std^2).
inline Matrix gen_gaussian_weight(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
    CounterRng rng(seed, 0xBA5E);
    return rng.normal_matrix(rows, cols, stddev);
}

enum class TargetKind { lowrank_additive, orthogonal_rotation, random_orthogonal, file_pair };

inline const char* to_string(TargetKind k) {
    switch (k) {
        case TargetKind::lowrank_additive: return "lowrank_additive";
        case TargetKind::orthogonal_rotation: return "orthogonal_rotation";
        case TargetKind::random_orthogonal: return "random_orthogonal";
        default: return "file_pair";
    }
}

struct TargetSpec {
    TargetKind kind = TargetKind::lowrank_additive;
    std::size_t rank = 1;        ///< lowrank_additive
    double target_std = 0.01;    ///< lowrank_additive
    double epsilon = 0.05;       ///< orthogonal_rotation
    std::uint64_t seed = 0;
    std::string w0_path;         ///< file_pair
    std::string w_star_path;     ///< file_pair

    void validate() const {
        if (kind == TargetKind::lowrank_additive && rank < 1) throw DomainError("target rank must be >= 1");
        if (kind == TargetKind::lowrank_additive && target_std < 0.0) throw DomainError("target_std must be >= 0");
        if (kind == TargetKind::orthogonal_rotation && epsilon < 0.0) throw DomainError("epsilon must be >= 0");
    }
};

/// W* for a generated target; file_pair targets are loaded by the caller.
inline Matrix generate_target(const Matrix& w0, const TargetSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case TargetKind::lowrank_additive: return gen_lowrank_target(w0, spec.rank, spec.target_std, spec.seed);
        case TargetKind::orthogonal_rotation: return gen_rotation_target(w0, spec.epsilon, spec.seed).w_star;
        case TargetKind::random_orthogonal:
            if (w0.rows() != w0.cols()) throw DomainError("random_orthogonal target needs a square base weight");
            return matmul(w0, gen_random_orthogonal(w0.cols(), spec.seed));
        default: throw DomainError("file_pair targets are read from disk, not generated");
    }
}

}  // namespace tlora
