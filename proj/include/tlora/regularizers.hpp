// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/adapters.hpp"
#include "tlora/tensor.hpp"

#include <cmath>
#include <span>

namespace tlora {

/// Cores of X Y^T for X = TRM(a), Y = TRM(b) sharing column modes:
/// C^d[i, j] = sum_l A^d[i, l] (x) B^d[j, l], rank R_a R_b.
inline TRMCores trm_product(const TRMCores& a, const TRMCores& b) {
    a.validate();
    b.validate();
    if (a.order() != b.order())
        throw DomainError("trm_product: operands have " + std::to_string(a.order()) + " and " +
                          std::to_string(b.order()) + " modes");
    if (a.col_dims != b.col_dims)
        throw DomainError("trm_product: contracted modes differ (" + a.col_dims.to_string() + " vs " +
                          b.col_dims.to_string() + ")");
    const std::size_t ra = a.rank, rb = b.rank, r = ra * rb;
    TRMCores out{{}, a.row_dims, b.row_dims, r};
    for (std::size_t d = 0; d < a.order(); ++d) {
        const std::size_t ni = a.row_dims[d], nj = b.row_dims[d], nl = a.col_dims[d];
        DenseTensor core({ni, nj, r, r});
        for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t j = 0; j < nj; ++j)
                for (std::size_t l = 0; l < nl; ++l)
                    for (std::size_t ac = 0; ac < ra; ++ac)
                        for (std::size_t ar = 0; ar < ra; ++ar) {
                            const double av = a.cores[d].at({i, l, ar, ac});
                            if (av == 0.0) continue;
                            for (std::size_t bc = 0; bc < rb; ++bc)
                                for (std::size_t br = 0; br < rb; ++br)
                                    core.at({i, j, ar * rb + br, ac * rb + bc}) +=
                                        av * b.cores[d].at({j, l, br, bc});
                        }
        out.cores.push_back(std::move(core));
    }
    return out;
}

namespace detail {

inline void require_square(const TRMCores& c, const char* what) {
    c.validate();
    if (c.row_dims != c.col_dims) throw DomainError(std::string(what) + ": TRM cores are not square");
}

/// sqrt(s + eps^2) - eps: the Frobenius norm, smoothed at zero when eps > 0.
inline double smooth_norm(double sum_sq, double eps) {
    return eps > 0.0 ? std::sqrt(sum_sq + eps * eps) - eps : std::sqrt(sum_sq);
}

inline double smooth_norm_scale(double sum_sq, double eps) {
    const double n = std::sqrt(sum_sq + eps * eps);
    return n > 0.0 ? 1.0 / n : 0.0;
}

}  // namespace detail

/// R_I = sum_d sum_{r,r'} ||A^d[:, :, r, r'] - I / R||_F.
inline double reg_identity(const TRMCores& c, double eps = 0.0) {
    detail::require_square(c, "reg_identity");
    const std::size_t r = c.rank;
    const double target = 1.0 / static_cast<double>(r);
    double total = 0.0;
    for (std::size_t d = 0; d < c.order(); ++d) {
        const std::size_t n = c.row_dims[d];
        for (std::size_t rc = 0; rc < r; ++rc)
            for (std::size_t rr = 0; rr < r; ++rr) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < n; ++i) {
                        const double v = c.cores[d].at({i, j, rr, rc}) - (i == j ? target : 0.0);
                        s += v * v;
                    }
                total += detail::smooth_norm(s, eps);
            }
    }
    return total;
}

/// Accumulates d R_I / d(core entries) into `grad` (flat TRM layout, cores in order).
inline void reg_identity_grad(const TRMCores& c, double scale, double eps, std::span<double> grad) {
    detail::require_square(c, "reg_identity_grad");
    const std::size_t r = c.rank;
    const double target = 1.0 / static_cast<double>(r);
    std::size_t base = 0;
    for (std::size_t d = 0; d < c.order(); ++d) {
        const DenseTensor& core = c.cores[d];
        const std::size_t n = c.row_dims[d];
        for (std::size_t rc = 0; rc < r; ++rc)
            for (std::size_t rr = 0; rr < r; ++rr) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < n; ++i) {
                        const double v = core.at({i, j, rr, rc}) - (i == j ? target : 0.0);
                        s += v * v;
                    }
                const double k = scale * detail::smooth_norm_scale(s, eps);
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < n; ++i) {
                        const std::size_t off = i + n * (j + n * (rr + r * rc));
                        grad[base + off] += k * (core[off] - (i == j ? target : 0.0));
                    }
            }
        base += core.size();
    }
}

/// R_O = sum_d sum_{i,j} ||C^d[i, j] - delta_ij I_{R^2} / R||_F with C = trm_product(c, c).
/// Off-diagonal slices are compared against zero (identity gauge of the product).
inline double reg_orthogonal(const TRMCores& c, double eps = 0.0) {
    detail::require_square(c, "reg_orthogonal");
    const TRMCores p = trm_product(c, c);
    const std::size_t r2 = p.rank;
    const double target = 1.0 / static_cast<double>(c.rank);
    double total = 0.0;
    for (std::size_t d = 0; d < p.order(); ++d) {
        const std::size_t n = p.row_dims[d];
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t b = 0; b < r2; ++b)
                    for (std::size_t a = 0; a < r2; ++a) {
                        const double v = p.cores[d].at({i, j, a, b}) - (i == j && a == b ? target : 0.0);
                        s += v * v;
                    }
                total += detail::smooth_norm(s, eps);
            }
    }
    return total;
}

/// R_O evaluated entry by entry from the printed sum of Kronecker products,
/// without forming product cores. Same value as reg_orthogonal.
inline double reg_orthogonal_direct(const TRMCores& c) {
    detail::require_square(c, "reg_orthogonal_direct");
    const std::size_t r = c.rank;
    const double target = 1.0 / static_cast<double>(r);
    double total = 0.0;
    for (std::size_t d = 0; d < c.order(); ++d) {
        const DenseTensor& core = c.cores[d];
        const std::size_t n = c.row_dims[d];
        auto entry = [&](std::size_t i, std::size_t j, std::size_t row, std::size_t col) {
            return core[i + n * (j + n * (row + r * col))];
        };
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                // (X (x) Y)[p, q] with p = a R + b, q = e R + f equals X[a, e] Y[b, f]
                for (std::size_t p = 0; p < r * r; ++p)
                    for (std::size_t q = 0; q < r * r; ++q) {
                        double v = 0.0;
                        for (std::size_t l = 0; l < n; ++l)
                            v += entry(i, l, p / r, q / r) * entry(j, l, p % r, q % r);
                        if (i == j && p == q) v -= target;
                        s += v * v;
                    }
                total += std::sqrt(s);
            }
    }
    return total;
}

/// Accumulates d R_O / d(core entries) into `grad`.
inline void reg_orthogonal_grad(const TRMCores& c, double scale, double eps, std::span<double> grad) {
    detail::require_square(c, "reg_orthogonal_grad");
    const std::size_t r = c.rank, r2 = r * r;
    const double target = 1.0 / static_cast<double>(r);
    const TRMCores p = trm_product(c, c);
    std::size_t base = 0;
    std::vector<double> u(r2 * r2);
    for (std::size_t d = 0; d < c.order(); ++d) {
        const DenseTensor& core = c.cores[d];
        const std::size_t n = c.row_dims[d];
        auto idx = [&](std::size_t i, std::size_t j, std::size_t row, std::size_t col) {
            return i + n * (j + n * (row + r * col));
        };
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t q = 0; q < r2; ++q)
                    for (std::size_t pp = 0; pp < r2; ++pp) {
                        const double v = p.cores[d].at({i, j, pp, q}) - (i == j && pp == q ? target : 0.0);
                        u[pp + r2 * q] = v;
                        s += v * v;
                    }
                const double k = scale * detail::smooth_norm_scale(s, eps);
                for (std::size_t l = 0; l < n; ++l)
                    for (std::size_t pp = 0; pp < r2; ++pp)
                        for (std::size_t q = 0; q < r2; ++q) {
                            const double w = k * u[pp + r2 * q];
                            if (w == 0.0) continue;
                            const std::size_t a = pp / r, b = pp % r, e = q / r, f = q % r;
                            grad[base + idx(i, l, a, e)] += w * core[idx(j, l, b, f)];
                            grad[base + idx(j, l, b, f)] += w * core[idx(i, l, a, e)];
                        }
            }
        base += core.size();
    }
}

}  // namespace tlora
