// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/random.hpp"
#include "tlora/tensor.hpp"

#include <bit>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tlora {

// ---------------------------------------------------------------------------
// Parameter containers.

/// Transform T = TRM(A^1..A^D); core d has shape I_d x J_d x R x R.
struct TRMCores {
    std::vector<DenseTensor> cores;
    ModeFactorization row_dims;
    ModeFactorization col_dims;
    std::size_t rank = 1;

    std::size_t rows() const { return row_dims.product(); }
    std::size_t cols() const { return col_dims.product(); }
    std::size_t order() const { return cores.size(); }

    void validate() const {
        if (rank == 0) throw DomainError("TRM rank must be >= 1");
        if (row_dims.order() != col_dims.order())
            throw DomainError("TRM row and column factorizations have different orders");
        if (cores.size() != row_dims.order())
            throw DomainError("TRM has " + std::to_string(cores.size()) + " cores for " +
                              std::to_string(row_dims.order()) + " modes");
        for (std::size_t d = 0; d < cores.size(); ++d) {
            const std::vector<std::size_t> want{row_dims[d], col_dims[d], rank, rank};
            if (cores[d].shape() != want)
                throw DomainError("TRM core " + std::to_string(d + 1) + " has inconsistent shape");
        }
    }
};

/// Residual Delta = TR(B^1..B^D, C^1..C^D); B^d is I_d x R x R, C^d is J_d x R x R.
struct TRCores {
    std::vector<DenseTensor> b_cores;
    std::vector<DenseTensor> c_cores;
    ModeFactorization row_dims;
    ModeFactorization col_dims;
    std::size_t rank = 1;

    std::size_t rows() const { return row_dims.product(); }
    std::size_t cols() const { return col_dims.product(); }

    void validate() const {
        if (rank == 0) throw DomainError("TR rank must be >= 1");
        if (b_cores.size() != row_dims.order() || c_cores.size() != col_dims.order())
            throw DomainError("TR core count does not match factorization orders");
        for (std::size_t d = 0; d < b_cores.size(); ++d)
            if (b_cores[d].shape() != std::vector<std::size_t>{row_dims[d], rank, rank})
                throw DomainError("TR core B" + std::to_string(d + 1) + " has inconsistent shape");
        for (std::size_t d = 0; d < c_cores.size(); ++d)
            if (c_cores[d].shape() != std::vector<std::size_t>{col_dims[d], rank, rank})
                throw DomainError("TR core C" + std::to_string(d + 1) + " has inconsistent shape");
    }
};

/// Delta = B A with B: I x r, A: r x J.
struct LoRAFactors {
    Matrix b;
    Matrix a;

    std::size_t rank() const { return b.cols(); }
    std::size_t rows() const { return b.rows(); }
    std::size_t cols() const { return a.cols(); }

    void validate() const {
        if (!b.is_matrix() || !a.is_matrix() || b.cols() != a.rows() || b.cols() == 0)
            throw DomainError("LoRA factors must be I x r and r x J with r >= 1");
    }
};

/// Block-diagonal Cayley-orthogonal transform. Each block stores the strict
/// upper triangle of its skew matrix, row by row.
struct OFTParams {
    std::size_t dim = 0;
    std::size_t block_size = 1;
    std::vector<double> params;

    std::size_t n_blocks() const { return dim / block_size; }

    void validate() const {
        if (block_size == 0 || dim == 0 || dim % block_size != 0)
            throw DomainError("OFT block size " + std::to_string(block_size) + " does not divide " +
                              std::to_string(dim));
        if (params.size() != n_blocks() * block_size * (block_size - 1) / 2)
            throw DomainError("OFT parameter vector has wrong length");
    }
};

/// Product of butterfly factors; each factor holds dim / (2b) Cayley blocks of side 2b.
struct BOFTParams {
    std::size_t dim = 0;
    std::size_t block_size = 1;
    std::size_t n_factors = 1;
    std::vector<double> params;

    std::size_t group_size() const { return 2 * block_size; }
    std::size_t n_groups() const { return dim / group_size(); }
    std::size_t params_per_factor() const {
        return n_groups() * group_size() * (group_size() - 1) / 2;
    }
    /// log2(dim / b): number of distinct pairing strides.
    std::size_t levels() const { return static_cast<std::size_t>(std::countr_zero(dim / block_size)); }

    void validate() const {
        if (dim == 0 || !std::has_single_bit(dim))
            throw DomainError("BOFT dimension " + std::to_string(dim) + " is not a power of 2");
        if (block_size == 0 || !std::has_single_bit(block_size) || 2 * block_size > dim)
            throw DomainError("BOFT block size must be a power of 2 with 2b <= dim");
        if (n_factors < 1 || n_factors > levels() + 1)
            throw DomainError("BOFT factor count " + std::to_string(n_factors) + " outside [1, " +
                              std::to_string(levels() + 1) + "]");
        if (params.size() != n_factors * params_per_factor())
            throw DomainError("BOFT parameter vector has wrong length");
    }
};

/// W0 diag(m) + B A.
struct DoRADiagParams {
    std::vector<double> m;
    LoRAFactors lora;
};

/// Right-multiplying diagonal transform diag(m).
struct DiagonalTransform {
    std::vector<double> m;
};

using Transform = std::variant<std::monostate, TRMCores, OFTParams, BOFTParams, DiagonalTransform>;
using Residual = std::variant<std::monostate, TRCores, LoRAFactors>;

/// W0 T + Delta with optional transform and residual.
struct AdapterSpec {
    Transform transform;
    Residual residual;

    bool has_transform() const { return !std::holds_alternative<std::monostate>(transform); }
    bool has_residual() const { return !std::holds_alternative<std::monostate>(residual); }

    const TRMCores* trm() const { return std::get_if<TRMCores>(&transform); }
    TRMCores* trm() { return std::get_if<TRMCores>(&transform); }
};

// ---------------------------------------------------------------------------
// Ring-product helpers.

namespace detail {

/// Gathers the R x R slices of a core whose trailing two modes are (R, R) into
/// contiguous column-major blocks, indexed by the linear index of the leading modes.
inline std::vector<double> gather_slices(const DenseTensor& core, std::size_t rank) {
    const std::size_t rr = rank * rank;
    const std::size_t n = core.size() / rr;
    std::vector<double> out(core.size());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < rr; ++k) out[s * rr + k] = core[s + n * k];
    return out;
}

/// Inverse of gather_slices, accumulating into a core-shaped buffer.
inline void scatter_add_slices(std::span<const double> slices, std::size_t rank, std::span<double> core) {
    const std::size_t rr = rank * rank;
    const std::size_t n = core.size() / rr;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < rr; ++k) core[s + n * k] += slices[s * rr + k];
}

/// Chain products P[i] = S^1[i_1] ... S^D[i_D] for every little-endian row index i.
inline std::vector<double> chain_products(const std::vector<std::vector<double>>& slices,
                                          const ModeFactorization& dims, std::size_t rank) {
    const std::size_t rr = rank * rank;
    std::vector<double> cur(rr);
    square_identity(cur.data(), rank);
    std::size_t count = 1;
    std::vector<double> next;
    for (std::size_t d = 0; d < dims.order(); ++d) {
        next.assign(count * dims[d] * rr, 0.0);
        for (std::size_t id = 0; id < dims[d]; ++id)
            for (std::size_t p = 0; p < count; ++p)
                square_mul(cur.data() + p * rr, slices[d].data() + id * rr,
                           next.data() + (p + count * id) * rr, rank);
        count *= dims[d];
        cur.swap(next);
    }
    return cur;
}

inline std::vector<std::vector<double>> gather_all(const std::vector<DenseTensor>& cores, std::size_t rank) {
    std::vector<std::vector<double>> out;
    out.reserve(cores.size());
    for (const auto& c : cores) out.push_back(gather_slices(c, rank));
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TRM transform.

/// T[row(i), col(j)] = tr(A^1[i_1, j_1] ... A^D[i_D, j_D]).
inline Matrix trm_materialize(const TRMCores& c) {
    c.validate();
    const std::size_t d_count = c.order(), r = c.rank, rr = r * r;
    const auto slices = detail::gather_all(c.cores, r);
    Matrix t = Matrix::zeros(c.rows(), c.cols());
    std::vector<std::size_t> ri(d_count), ci(d_count);
    std::vector<double> acc(rr), tmp(rr);
    for (std::size_t col = 0; col < c.cols(); ++col) {
        detail::digits(col, c.col_dims, ci);
        for (std::size_t row = 0; row < c.rows(); ++row) {
            detail::digits(row, c.row_dims, ri);
            const double* first = slices[0].data() + (ri[0] + c.row_dims[0] * ci[0]) * rr;
            std::copy(first, first + rr, acc.begin());
            for (std::size_t d = 1; d < d_count; ++d) {
                const double* s = slices[d].data() + (ri[d] + c.row_dims[d] * ci[d]) * rr;
                detail::square_mul(acc.data(), s, tmp.data(), r);
                acc.swap(tmp);
            }
            t(row, col) = detail::square_trace(acc.data(), r);
        }
    }
    return t;
}

/// Every (r, r') slice of core d set to I_{I_d} / R; materializes to the identity.
inline TRMCores trm_identity_init(const ModeFactorization& row_dims, const ModeFactorization& col_dims,
                                  std::size_t rank) {
    if (row_dims != col_dims)
        throw DomainError("identity TRM needs equal row and column factorizations, got " +
                          row_dims.to_string() + " and " + col_dims.to_string());
    if (rank == 0) throw DomainError("TRM rank must be >= 1");
    TRMCores c{{}, row_dims, col_dims, rank};
    const double v = 1.0 / static_cast<double>(rank);
    for (std::size_t d = 0; d < row_dims.order(); ++d) {
        DenseTensor core({row_dims[d], col_dims[d], rank, rank});
        for (std::size_t a = 0; a < rank; ++a)
            for (std::size_t b = 0; b < rank; ++b)
                for (std::size_t i = 0; i < row_dims[d]; ++i) core.at({i, i, a, b}) = v;
        c.cores.push_back(std::move(core));
    }
    return c;
}

// ---------------------------------------------------------------------------
// TR residual.

/// Delta[row(i), col(j)] = tr(B^1[i_1] ... B^D[i_D] C^1[j_1] ... C^D[j_D]).
inline Matrix tr_materialize(const TRCores& c) {
    c.validate();
    const std::size_t r = c.rank, rr = r * r;
    const auto p = detail::chain_products(detail::gather_all(c.b_cores, r), c.row_dims, r);
    const auto q = detail::chain_products(detail::gather_all(c.c_cores, r), c.col_dims, r);
    Matrix delta = Matrix::zeros(c.rows(), c.cols());
    for (std::size_t j = 0; j < c.cols(); ++j)
        for (std::size_t i = 0; i < c.rows(); ++i) {
            // tr(P Q) = sum_{a,b} P[a,b] Q[b,a]
            const double* pi = p.data() + i * rr;
            const double* qj = q.data() + j * rr;
            double s = 0.0;
            for (std::size_t b = 0; b < r; ++b)
                for (std::size_t a = 0; a < r; ++a) s += pi[a + r * b] * qj[b + r * a];
            delta(i, j) = s;
        }
    return delta;
}

/// Delta x through a chain of x_2 contractions; Delta is never formed.
inline std::vector<double> tr_forward(const TRCores& c, std::span<const double> x) {
    c.validate();
    if (x.size() != c.cols())
        throw DomainError("tr_forward: input length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(c.cols()));
    const std::size_t r = c.rank, rr = r * r, dn = c.col_dims.order();

    // M = sum_j C^1[j_1] ... C^D[j_D] x_j, one column per ring-closure index.
    std::vector<double> m(rr, 0.0);
    std::vector<std::size_t> acc_shape = c.col_dims.dims();
    acc_shape.push_back(r);
    for (std::size_t r0 = 0; r0 < r; ++r0) {
        DenseTensor acc(acc_shape);
        std::copy(x.begin(), x.end(), acc.data().begin() + r0 * c.cols());
        for (std::size_t d = dn; d-- > 0;) acc = contract_mode2(c.c_cores[d], acc);
        for (std::size_t a = 0; a < r; ++a) m[a + r * r0] = acc[a];
    }

    // y_i = tr(B^1[i_1] ... B^D[i_D] M), expanding the row modes from the right.
    const auto b_slices = detail::gather_all(c.b_cores, r);
    std::vector<double> cur = m, next;
    std::size_t count = 1;
    for (std::size_t d = c.row_dims.order(); d-- > 0;) {
        const std::size_t id = c.row_dims[d];
        next.assign(count * id * rr, 0.0);
        for (std::size_t p = 0; p < count; ++p)
            for (std::size_t i = 0; i < id; ++i)
                detail::square_mul(b_slices[d].data() + i * rr, cur.data() + p * rr,
                                   next.data() + (i + id * p) * rr, r);
        count *= id;
        cur.swap(next);
    }
    std::vector<double> y(c.rows());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = detail::square_trace(cur.data() + i * rr, r);
    return y;
}

/// B^1 = 0; every other entry ~ N(0, sigma^2) with sigma = 1 / (I_d sqrt(R)).
/// Core B^d draws from stream d, core C^d from stream D + d.
inline TRCores tr_init(const ModeFactorization& row_dims, const ModeFactorization& col_dims,
                       std::size_t rank, std::uint64_t seed) {
    if (rank == 0) throw DomainError("TR rank must be >= 1");
    TRCores c{{}, {}, row_dims, col_dims, rank};
    const CounterRng root(seed);
    const double sqrt_r = std::sqrt(static_cast<double>(rank));
    for (std::size_t d = 0; d < row_dims.order(); ++d) {
        DenseTensor core({row_dims[d], rank, rank});
        if (d > 0) {
            CounterRng rng = root.split(d);
            rng.fill_normal(core.data(), 1.0 / (static_cast<double>(row_dims[d]) * sqrt_r));
        }
        c.b_cores.push_back(std::move(core));
    }
    for (std::size_t d = 0; d < col_dims.order(); ++d) {
        DenseTensor core({col_dims[d], rank, rank});
        CounterRng rng = root.split(row_dims.order() + d);
        rng.fill_normal(core.data(), 1.0 / (static_cast<double>(col_dims[d]) * sqrt_r));
        c.c_cores.push_back(std::move(core));
    }
    return c;
}

// ---------------------------------------------------------------------------
// LoRA.

/// B = 0, A ~ N(0, 1/r).
inline LoRAFactors lora_init(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed) {
    if (rank == 0) throw DomainError("LoRA rank must be >= 1");
    CounterRng rng(seed, 0x10Aull);
    LoRAFactors f{Matrix::zeros(rows, rank), Matrix::zeros(rank, cols)};
    rng.fill_normal(f.a.data(), 1.0 / std::sqrt(static_cast<double>(rank)));
    return f;
}

inline Matrix lora_materialize(const LoRAFactors& f) {
    f.validate();
    return matmul(f.b, f.a);
}

// ---------------------------------------------------------------------------
// Cayley-orthogonal blocks.

/// Q = (I - S)(I + S)^{-1} for skew-symmetric S.
inline Matrix cayley(const Matrix& s) {
    if (!s.is_matrix() || s.rows() != s.cols()) throw DomainError("cayley: S must be square");
    const std::size_t n = s.rows();
    const double asym = fro_norm(s + transpose(s));
    if (asym > 1e-12 * fro_norm(s))
        throw DomainError("cayley: S is not skew-symmetric (||S + S^T||_F = " + std::to_string(asym) + ")");
    const Matrix eye = Matrix::identity(n);
    // Q (I + S) = I - S  <=>  (I + S)^T Q^T = (I - S)^T
    try {
        return transpose(solve(transpose(eye + s), transpose(eye - s)));
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("cayley: I + S is singular; ") + e.what());
    }
}

/// Skew matrix from its strict upper triangle, row by row.
inline Matrix skew_from_params(std::span<const double> p, std::size_t n) {
    if (p.size() != n * (n - 1) / 2) throw DomainError("skew_from_params: wrong parameter count");
    Matrix s = Matrix::zeros(n, n);
    std::size_t k = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            s(a, b) = p[k];
            s(b, a) = -p[k];
            ++k;
        }
    return s;
}

/// Index groups a Cayley block acts on; F[g[a], g[b]] = Q[a, b].
using BlockGroups = std::vector<std::vector<std::size_t>>;

inline BlockGroups oft_groups(std::size_t dim, std::size_t block_size) {
    BlockGroups g(dim / block_size);
    for (std::size_t k = 0; k < g.size(); ++k)
        for (std::size_t a = 0; a < block_size; ++a) g[k].push_back(k * block_size + a);
    return g;
}

/// Butterfly factor `factor` (0-based): chunks of b consecutive indices are paired
/// with the chunk at distance 2^(factor mod levels), FFT style. Factor 0 pairs
/// neighbouring chunks, so a single factor is plain block-diagonal.
inline BlockGroups butterfly_groups(std::size_t dim, std::size_t block_size, std::size_t factor) {
    const std::size_t chunks = dim / block_size;
    const std::size_t levels = static_cast<std::size_t>(std::countr_zero(chunks));
    const std::size_t stride = std::size_t{1} << (factor % levels);
    BlockGroups g;
    for (std::size_t c = 0; c < chunks; ++c) {
        if (c & stride) continue;
        std::vector<std::size_t> group;
        for (std::size_t a = 0; a < block_size; ++a) group.push_back(c * block_size + a);
        for (std::size_t a = 0; a < block_size; ++a) group.push_back((c + stride) * block_size + a);
        g.push_back(std::move(group));
    }
    return g;
}

inline Matrix block_orthogonal(const BlockGroups& groups, std::size_t dim, std::span<const double> params) {
    Matrix f = Matrix::zeros(dim, dim);
    std::size_t off = 0;
    for (const auto& g : groups) {
        const std::size_t n = g.size(), np = n * (n - 1) / 2;
        const Matrix q = cayley(skew_from_params(params.subspan(off, np), n));
        off += np;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t a = 0; a < n; ++a) f(g[a], g[b]) = q(a, b);
    }
    return f;
}

inline OFTParams oft_init(std::size_t dim, std::size_t block_size) {
    OFTParams p{dim, block_size, {}};
    if (block_size == 0 || dim % block_size != 0)
        throw DomainError("OFT block size " + std::to_string(block_size) + " does not divide " +
                          std::to_string(dim));
    p.params.assign(p.n_blocks() * block_size * (block_size - 1) / 2, 0.0);
    return p;
}

inline Matrix oft_materialize(const OFTParams& p) {
    p.validate();
    return block_orthogonal(oft_groups(p.dim, p.block_size), p.dim, p.params);
}

inline BOFTParams boft_init(std::size_t dim, std::size_t block_size, std::size_t n_factors) {
    BOFTParams p{dim, block_size, n_factors, {}};
    if (dim == 0 || block_size == 0 || 2 * block_size > dim) {
        p.validate();  // throws with a specific message
    }
    p.params.assign(n_factors * p.params_per_factor(), 0.0);
    p.validate();
    return p;
}

/// Butterfly factor k of p.
inline Matrix boft_factor(const BOFTParams& p, std::size_t k) {
    const std::size_t ppf = p.params_per_factor();
    return block_orthogonal(butterfly_groups(p.dim, p.block_size, k), p.dim,
                            std::span<const double>(p.params).subspan(k * ppf, ppf));
}

/// F_1 F_2 ... F_m.
inline Matrix boft_materialize(const BOFTParams& p) {
    p.validate();
    Matrix t = boft_factor(p, 0);
    for (std::size_t k = 1; k < p.n_factors; ++k) t = matmul(t, boft_factor(p, k));
    return t;
}

// ---------------------------------------------------------------------------
// DoRA, diagonal transform.

inline Matrix diag_matrix(std::span<const double> m) {
    Matrix d = Matrix::zeros(m.size(), m.size());
    for (std::size_t k = 0; k < m.size(); ++k) d(k, k) = m[k];
    return d;
}

/// W0 diag(m) + B A.
inline Matrix dora_weight(const Matrix& w0, const DoRADiagParams& p) {
    detail::require_matrix(w0, "DoRA base weight");
    if (p.m.size() != w0.cols())
        throw DomainError("dora_weight: magnitude length " + std::to_string(p.m.size()) +
                          " does not match " + std::to_string(w0.cols()) + " columns");
    const Matrix ba = lora_materialize(p.lora);
    require_same_shape(w0, ba, "dora_weight");
    Matrix w = ba;
    for (std::size_t j = 0; j < w0.cols(); ++j)
        for (std::size_t i = 0; i < w0.rows(); ++i) w(i, j) += w0(i, j) * p.m[j];
    return w;
}

inline DoRADiagParams dora_init(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed) {
    return {std::vector<double>(cols, 1.0), lora_init(rows, cols, rank, seed)};
}

inline AdapterSpec dora_spec(DoRADiagParams p) {
    return {DiagonalTransform{std::move(p.m)}, std::move(p.lora)};
}

// ---------------------------------------------------------------------------
// AdapterSpec: materialization, forward, parameter view.

/// J x J transform matrix; nullopt when there is no transform.
inline std::optional<Matrix> materialize_transform(const Transform& t) {
    struct V {
        std::optional<Matrix> operator()(std::monostate) const { return std::nullopt; }
        std::optional<Matrix> operator()(const TRMCores& c) const { return trm_materialize(c); }
        std::optional<Matrix> operator()(const OFTParams& p) const { return oft_materialize(p); }
        std::optional<Matrix> operator()(const BOFTParams& p) const { return boft_materialize(p); }
        std::optional<Matrix> operator()(const DiagonalTransform& d) const { return diag_matrix(d.m); }
    };
    return std::visit(V{}, t);
}

inline std::optional<Matrix> materialize_residual(const Residual& r) {
    struct V {
        std::optional<Matrix> operator()(std::monostate) const { return std::nullopt; }
        std::optional<Matrix> operator()(const TRCores& c) const { return tr_materialize(c); }
        std::optional<Matrix> operator()(const LoRAFactors& f) const { return lora_materialize(f); }
    };
    return std::visit(V{}, r);
}

namespace detail {

inline void check_combination(const Matrix& w0, const std::optional<Matrix>& t, const std::optional<Matrix>& d) {
    require_matrix(w0, "base weight");
    if (!t && !d) throw DomainError("adapter spec has neither transform nor residual");
    if (t && (t->rows() != w0.cols() || t->cols() != w0.cols()))
        throw DomainError("transform is " + std::to_string(t->rows()) + "x" + std::to_string(t->cols()) +
                          ", base weight needs " + std::to_string(w0.cols()) + "x" +
                          std::to_string(w0.cols()));
    if (d && d->shape() != w0.shape())
        throw DomainError("residual is " + std::to_string(d->rows()) + "x" + std::to_string(d->cols()) +
                          ", base weight is " + std::to_string(w0.rows()) + "x" +
                          std::to_string(w0.cols()));
}

}  // namespace detail

/// W0 T + Delta (T = I without a transform, Delta = 0 without a residual).
inline Matrix adapted_weight(const Matrix& w0, const AdapterSpec& spec) {
    const auto t = materialize_transform(spec.transform);
    const auto d = materialize_residual(spec.residual);
    detail::check_combination(w0, t, d);
    Matrix w = t ? matmul(w0, *t) : w0;
    if (d) w = w + *d;
    return w;
}

/// (W0 T + Delta) x; a TR residual is applied without materializing Delta.
inline std::vector<double> adapted_forward(const Matrix& w0, const AdapterSpec& spec, std::span<const double> x) {
    detail::require_matrix(w0, "base weight");
    if (x.size() != w0.cols())
        throw DomainError("adapted_forward: input length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(w0.cols()));
    if (!spec.has_transform() && !spec.has_residual())
        throw DomainError("adapter spec has neither transform nor residual");
    std::vector<double> tx(x.begin(), x.end());
    if (const auto* diag = std::get_if<DiagonalTransform>(&spec.transform)) {
        if (diag->m.size() != x.size()) throw DomainError("diagonal transform length mismatch");
        for (std::size_t k = 0; k < tx.size(); ++k) tx[k] *= diag->m[k];
    } else if (const auto t = materialize_transform(spec.transform)) {
        if (t->rows() != x.size() || t->cols() != x.size())
            throw DomainError("transform does not match base weight columns");
        tx = matvec(*t, x);
    }
    std::vector<double> y = matvec(w0, tx);
    if (const auto* tr = std::get_if<TRCores>(&spec.residual)) {
        if (tr->rows() != y.size()) throw DomainError("TR residual rows do not match base weight");
        const auto r = tr_forward(*tr, x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += r[i];
    } else if (const auto* lora = std::get_if<LoRAFactors>(&spec.residual)) {
        lora->validate();
        if (lora->rows() != y.size() || lora->cols() != x.size())
            throw DomainError("LoRA residual does not match base weight");
        const auto ax = matvec(lora->a, x);
        const auto bax = matvec(lora->b, ax);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += bax[i];
    }
    return y;
}

/// Exact trainable-scalar count from the closed-form formulas.
inline std::size_t param_count(const AdapterSpec& spec) {
    std::size_t n = 0;
    if (const auto* c = std::get_if<TRMCores>(&spec.transform)) {
        for (std::size_t d = 0; d < c->row_dims.order(); ++d)
            n += c->row_dims[d] * c->col_dims[d] * c->rank * c->rank;
    } else if (const auto* o = std::get_if<OFTParams>(&spec.transform)) {
        n += o->n_blocks() * o->block_size * (o->block_size - 1) / 2;
    } else if (const auto* b = std::get_if<BOFTParams>(&spec.transform)) {
        const std::size_t g = 2 * b->block_size;
        n += b->n_factors * (b->dim / g) * g * (g - 1) / 2;
    } else if (const auto* m = std::get_if<DiagonalTransform>(&spec.transform)) {
        n += m->m.size();
    }
    if (const auto* t = std::get_if<TRCores>(&spec.residual)) {
        for (std::size_t d = 0; d < t->row_dims.order(); ++d)
            n += (t->row_dims[d] + t->col_dims[d]) * t->rank * t->rank;
    } else if (const auto* l = std::get_if<LoRAFactors>(&spec.residual)) {
        n += l->rank() * (l->rows() + l->cols());
    }
    return n;
}

namespace detail {

template <class Spec, class Span>
std::vector<Span> collect_blocks(Spec& spec) {
    std::vector<Span> out;
    auto add = [&out](auto& container) { out.emplace_back(container.data(), container.size()); };
    if (auto* c = std::get_if<TRMCores>(&spec.transform)) {
        for (auto& core : c->cores) add(core.values());
    } else if (auto* o = std::get_if<OFTParams>(&spec.transform)) {
        add(o->params);
    } else if (auto* b = std::get_if<BOFTParams>(&spec.transform)) {
        add(b->params);
    } else if (auto* m = std::get_if<DiagonalTransform>(&spec.transform)) {
        add(m->m);
    }
    if (auto* t = std::get_if<TRCores>(&spec.residual)) {
        for (auto& core : t->b_cores) add(core.values());
        for (auto& core : t->c_cores) add(core.values());
    } else if (auto* l = std::get_if<LoRAFactors>(&spec.residual)) {
        add(l->b.values());
        add(l->a.values());
    }
    return out;
}

}  // namespace detail

/// Views onto every trainable buffer in stable order: transform first
/// (TRM cores 1..D, or the OFT/BOFT/diagonal vector), then residual
/// (TR B cores 1..D then C cores 1..D, or LoRA B then A).
inline std::vector<std::span<double>> param_blocks(AdapterSpec& spec) {
    return detail::collect_blocks<AdapterSpec, std::span<double>>(spec);
}

inline std::vector<std::span<const double>> param_blocks(const AdapterSpec& spec) {
    return detail::collect_blocks<const AdapterSpec, std::span<const double>>(spec);
}

inline std::vector<double> flatten(const AdapterSpec& spec) {
    std::vector<double> flat;
    for (auto block : param_blocks(spec)) flat.insert(flat.end(), block.begin(), block.end());
    return flat;
}

inline void assign_flat(AdapterSpec& spec, std::span<const double> flat) {
    std::size_t off = 0;
    auto blocks = param_blocks(spec);
    std::size_t total = 0;
    for (auto b : blocks) total += b.size();
    if (total != flat.size())
        throw DomainError("flat parameter vector has length " + std::to_string(flat.size()) + ", expected " +
                          std::to_string(total));
    for (auto block : blocks) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), block.size(), block.begin());
        off += block.size();
    }
}

}  // namespace tlora
