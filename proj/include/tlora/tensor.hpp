// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tlora {

/// Factored dimension list [I_1, ..., I_D] of a matrix side I = prod I_d.
class ModeFactorization {
public:
    ModeFactorization() : dims_{1}, product_(1) {}

    explicit ModeFactorization(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        if (dims_.empty()) throw DomainError("mode factorization needs at least one mode");
        product_ = 1;
        for (std::size_t d = 0; d < dims_.size(); ++d) {
            if (dims_[d] == 0)
                throw DomainError("mode " + std::to_string(d + 1) + " has size 0");
            product_ *= dims_[d];
        }
    }

    ModeFactorization(std::initializer_list<std::size_t> dims)
        : ModeFactorization(std::vector<std::size_t>(dims)) {}

    std::size_t order() const noexcept { return dims_.size(); }
    std::size_t product() const noexcept { return product_; }
    std::size_t operator[](std::size_t d) const { return dims_[d]; }
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }

    /// "8x10x16"
    std::string to_string() const {
        std::string s;
        for (std::size_t d = 0; d < dims_.size(); ++d) {
            if (d) s += 'x';
            s += std::to_string(dims_[d]);
        }
        return s;
    }

    friend bool operator==(const ModeFactorization&, const ModeFactorization&) = default;

private:
    std::vector<std::size_t> dims_;
    std::size_t product_ = 1;
};

/// Dense float64 tensor, first index fastest (little-endian / column-major).
/// A matrix is a tensor of order 2; M(i, j) lives at i + j * rows.
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw DomainError("buffer length " + std::to_string(data_.size()) +
                              " does not match shape volume " + std::to_string(count(shape_)));
    }

    static DenseTensor zeros(std::size_t rows, std::size_t cols) {
        return DenseTensor({rows, cols});
    }

    static DenseTensor identity(std::size_t n) {
        DenseTensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    static DenseTensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return DenseTensor({n}, std::move(values));
    }

    /// Build a matrix from nested rows, e.g. {{1, 2}, {3, 4}}.
    static DenseTensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t m = rows.size();
        const std::size_t n = m ? rows.begin()->size() : 0;
        DenseTensor t({m, n});
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != n) throw DomainError("ragged matrix literal");
            std::size_t j = 0;
            for (double v : row) t(i, j++) = v;
            ++i;
        }
        return t;
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t order() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    bool is_matrix() const noexcept { return shape_.size() == 2; }
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i + j * shape_[0]]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i + j * shape_[0]]; }

    /// Offset of a 0-based multi-index.
    std::size_t offset(std::span<const std::size_t> idx) const {
        std::size_t off = 0, stride = 1;
        for (std::size_t d = 0; d < shape_.size(); ++d) {
            off += idx[d] * stride;
            stride *= shape_[d];
        }
        return off;
    }

    double& at(std::initializer_list<std::size_t> idx) {
        return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }
    double at(std::initializer_list<std::size_t> idx) const {
        return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }

    /// Reinterpret with a new shape of equal volume; no data movement.
    DenseTensor reshaped(std::vector<std::size_t> shape) const {
        return DenseTensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

using Matrix = DenseTensor;

// ---------------------------------------------------------------------------
// Little-endian index maps (1-based at the API surface).

/// overline(i_1 ... i_D) = i_1 + (i_2 - 1) I_1 + (i_3 - 1) I_1 I_2 + ...
inline std::size_t multi_to_lin(std::span<const std::size_t> idx, const ModeFactorization& dims) {
    if (idx.size() != dims.order())
        throw DomainError("multi-index has " + std::to_string(idx.size()) + " entries, expected " +
                          std::to_string(dims.order()));
    std::size_t lin = 0, stride = 1;
    for (std::size_t d = 0; d < idx.size(); ++d) {
        if (idx[d] < 1 || idx[d] > dims[d])
            throw DomainError("index " + std::to_string(idx[d]) + " out of range [1, " +
                              std::to_string(dims[d]) + "] in mode " + std::to_string(d + 1));
        lin += (idx[d] - 1) * stride;
        stride *= dims[d];
    }
    return lin + 1;
}

inline std::size_t multi_to_lin(std::initializer_list<std::size_t> idx, const ModeFactorization& dims) {
    return multi_to_lin(std::span<const std::size_t>(idx.begin(), idx.size()), dims);
}

inline std::vector<std::size_t> lin_to_multi(std::size_t lin, const ModeFactorization& dims) {
    if (lin < 1 || lin > dims.product())
        throw DomainError("linear index " + std::to_string(lin) + " out of range [1, " +
                          std::to_string(dims.product()) + "]");
    std::vector<std::size_t> idx(dims.order());
    std::size_t rest = lin - 1;
    for (std::size_t d = 0; d < dims.order(); ++d) {
        idx[d] = rest % dims[d] + 1;
        rest /= dims[d];
    }
    return idx;
}

namespace detail {

/// 0-based digits of `lin` in the mixed radix `dims` (first digit fastest).
inline void digits(std::size_t lin, const ModeFactorization& dims, std::span<std::size_t> out) {
    for (std::size_t d = 0; d < dims.order(); ++d) {
        out[d] = lin % dims[d];
        lin /= dims[d];
    }
}

inline void require_matrix(const DenseTensor& a, const char* what) {
    if (!a.is_matrix()) throw DomainError(std::string(what) + " must be a matrix");
}

// Small column-major n x n kernels on raw buffers for the ring-product loops.
inline void square_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) out[i + j * n] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double bkj = b[k + j * n];
            for (std::size_t i = 0; i < n; ++i) out[i + j * n] += a[i + k * n] * bkj;
        }
    }
}

inline double square_trace(const double* a, std::size_t n) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) t += a[i + i * n];
    return t;
}

inline void square_identity(double* a, std::size_t n) {
    std::fill(a, a + n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i + i * n] = 1.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense matrix algebra.

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    detail::require_matrix(a, "matmul lhs");
    detail::require_matrix(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw DomainError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                          std::to_string(b.rows()) + " differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c = Matrix::zeros(m, n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < k; ++l) {
            const double blj = pb[l + j * k];
            if (blj == 0.0) continue;
            const double* acol = pa + l * m;
            double* ccol = pc + j * m;
            for (std::size_t i = 0; i < m; ++i) ccol[i] += acol[i] * blj;
        }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    detail::require_matrix(a, "transpose argument");
    Matrix t = Matrix::zeros(a.cols(), a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
    return t;
}

inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    detail::require_matrix(a, "matvec lhs");
    if (x.size() != a.cols())
        throw DomainError("matvec: vector length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(a.cols()));
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) y[i] += a(i, j) * x[j];
    return y;
}

inline void require_same_shape(const DenseTensor& a, const DenseTensor& b, const char* what) {
    if (a.shape() != b.shape()) throw DomainError(std::string(what) + ": shape mismatch");
}

inline DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
    require_same_shape(a, b, "add");
    DenseTensor c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += b[k];
    return c;
}

inline DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
    require_same_shape(a, b, "subtract");
    DenseTensor c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] -= b[k];
    return c;
}

inline DenseTensor operator*(double s, const DenseTensor& a) {
    DenseTensor c = a;
    for (double& v : c.values()) v *= s;
    return c;
}

inline double fro_norm(const DenseTensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

/// ||A - B||_F
inline double fro_dist(const DenseTensor& a, const DenseTensor& b) {
    require_same_shape(a, b, "fro_dist");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Standard Kronecker product: (A (x) B)[a p + b, c q + d] = A[a, c] B[b, d].
inline Matrix kron(const Matrix& a, const Matrix& b) {
    detail::require_matrix(a, "kron lhs");
    detail::require_matrix(b, "kron rhs");
    const std::size_t p = b.rows(), q = b.cols();
    Matrix k = Matrix::zeros(a.rows() * p, a.cols() * q);
    for (std::size_t c = 0; c < a.cols(); ++c)
        for (std::size_t a_r = 0; a_r < a.rows(); ++a_r) {
            const double av = a(a_r, c);
            for (std::size_t d = 0; d < q; ++d)
                for (std::size_t b_r = 0; b_r < p; ++b_r) k(a_r * p + b_r, c * q + d) = av * b(b_r, d);
        }
    return k;
}

/// tr(M_1 M_2 ... M_K) for square matrices of a common side.
inline double trace_prod(std::span<const Matrix> mats) {
    if (mats.empty()) throw DomainError("trace_prod: empty matrix list");
    const std::size_t n = mats[0].rows();
    for (std::size_t k = 0; k < mats.size(); ++k)
        if (!mats[k].is_matrix() || mats[k].rows() != n || mats[k].cols() != n)
            throw DomainError("trace_prod: matrix " + std::to_string(k + 1) + " is not " +
                              std::to_string(n) + "x" + std::to_string(n));
    std::vector<double> acc(mats[0].values()), tmp(n * n);
    for (std::size_t k = 1; k < mats.size(); ++k) {
        detail::square_mul(acc.data(), mats[k].data().data(), tmp.data(), n);
        acc.swap(tmp);
    }
    return detail::square_trace(acc.data(), n);
}

inline double trace_prod(std::initializer_list<Matrix> mats) {
    return trace_prod(std::span<const Matrix>(mats.begin(), mats.size()));
}

/// The x_2 contraction: result[..., r'] = sum_l sum_r core[l, r', r] * acc[..., l, r].
/// core is I_d x R x R, acc is (I_1 x ... x I_d x R); result drops the I_d mode.
inline DenseTensor contract_mode2(const DenseTensor& core, const DenseTensor& acc) {
    if (core.order() != 3 || core.extent(1) != core.extent(2))
        throw DomainError("contract_mode2: core must be I_d x R x R");
    const std::size_t id = core.extent(0), r = core.extent(1);
    if (acc.order() < 2) throw DomainError("contract_mode2: accumulator needs at least two modes");
    const auto& s = acc.shape();
    if (s.back() != r)
        throw DomainError("contract_mode2: accumulator rank mode is " + std::to_string(s.back()) +
                          ", core rank is " + std::to_string(r));
    if (s[s.size() - 2] != id)
        throw DomainError("contract_mode2: accumulator mode size " + std::to_string(s[s.size() - 2]) +
                          " does not match core mode size " + std::to_string(id));
    std::vector<std::size_t> out_shape(s.begin(), s.end() - 2);
    out_shape.push_back(r);
    std::size_t prefix = 1;
    for (std::size_t d = 0; d + 2 < s.size(); ++d) prefix *= s[d];

    DenseTensor out(out_shape);
    for (std::size_t rr = 0; rr < r; ++rr)
        for (std::size_t l = 0; l < id; ++l)
            for (std::size_t rp = 0; rp < r; ++rp) {
                const double c = core[l + id * (rp + r * rr)];
                if (c == 0.0) continue;
                const double* src = acc.data().data() + prefix * (l + id * rr);
                double* dst = out.data().data() + prefix * rp;
                for (std::size_t p = 0; p < prefix; ++p) dst[p] += c * src[p];
            }
    return out;
}

/// Solve A X = B by Gaussian elimination with partial pivoting.
inline Matrix solve(const Matrix& a, const Matrix& b) {
    detail::require_matrix(a, "solve lhs");
    detail::require_matrix(b, "solve rhs");
    const std::size_t n = a.rows();
    if (a.cols() != n || b.rows() != n) throw DomainError("solve: incompatible shapes");
    Matrix lu = a, x = b;
    const std::size_t m = b.cols();
    double max_abs = 0.0;
    for (double v : a.data()) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
        const double pv = std::abs(lu(piv, k));
        if (!(pv > 1e-14 * std::max(max_abs, 1.0)))
            throw NumericalError("solve: matrix is singular to working precision (pivot " +
                                 std::to_string(pv) + " at column " + std::to_string(k + 1) +
                                 ", max entry " + std::to_string(max_abs) + ")");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(x(k, j), x(piv, j));
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = lu(i, k) / lu(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
            for (std::size_t j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
        }
    }
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, j);
            for (std::size_t k = ii + 1; k < n; ++k) s -= lu(ii, k) * x(k, j);
            x(ii, j) = s / lu(ii, ii);
        }
    return x;
}

}  // namespace tlora
