// SPDX-License-Identifier: Apache-2.0
#pragma once

// Vector-Jacobian products for every adapter parameterization. Each function
// takes the loss gradient with respect to the materialized matrix and
// accumulates into a flat buffer laid out like the component's param blocks.

#include "tlora/adapters.hpp"

#include <span>
#include <vector>

namespace tlora::detail {

/// Backward of T = TRM(cores): grad_T is I x J.
inline void trm_backward(const TRMCores& c, const Matrix& grad_t, std::span<double> out) {
    const std::size_t dn = c.order(), r = c.rank, rr = r * r;
    const auto slices = gather_all(c.cores, r);
    std::vector<std::vector<double>> slice_grads;
    for (const auto& s : slices) slice_grads.emplace_back(s.size(), 0.0);

    std::vector<std::size_t> ri(dn), ci(dn), sidx(dn);
    // pre[k] = S_1 ... S_k, suf[k] = S_{k+1} ... S_D (k = 0..D)
    std::vector<double> pre((dn + 1) * rr), suf((dn + 1) * rr), cyc(rr);
    for (std::size_t col = 0; col < c.cols(); ++col) {
        digits(col, c.col_dims, ci);
        for (std::size_t row = 0; row < c.rows(); ++row) {
            const double g = grad_t(row, col);
            if (g == 0.0) continue;
            digits(row, c.row_dims, ri);
            for (std::size_t d = 0; d < dn; ++d) sidx[d] = ri[d] + c.row_dims[d] * ci[d];
            square_identity(pre.data(), r);
            for (std::size_t d = 0; d < dn; ++d)
                square_mul(pre.data() + d * rr, slices[d].data() + sidx[d] * rr, pre.data() + (d + 1) * rr, r);
            square_identity(suf.data() + dn * rr, r);
            for (std::size_t d = dn; d-- > 0;)
                square_mul(slices[d].data() + sidx[d] * rr, suf.data() + (d + 1) * rr, suf.data() + d * rr, r);
            for (std::size_t d = 0; d < dn; ++d) {
                // d tr(S_1..S_D) / dS_d = (S_{d+1}..S_D S_1..S_{d-1})^T
                square_mul(suf.data() + (d + 1) * rr, pre.data() + d * rr, cyc.data(), r);
                double* gs = slice_grads[d].data() + sidx[d] * rr;
                for (std::size_t b = 0; b < r; ++b)
                    for (std::size_t a = 0; a < r; ++a) gs[a + r * b] += g * cyc[b + r * a];
            }
        }
    }
    std::size_t base = 0;
    for (std::size_t d = 0; d < dn; ++d) {
        scatter_add_slices(slice_grads[d], r, out.subspan(base, c.cores[d].size()));
        base += c.cores[d].size();
    }
}

/// Backward of the chain products P[i] = S^1[i_1] ... S^D[i_D] given dP[i].
inline std::vector<std::vector<double>> chain_backward(const std::vector<std::vector<double>>& slices,
                                                       const ModeFactorization& dims, std::size_t r,
                                                       const std::vector<double>& grad_p) {
    const std::size_t dn = dims.order(), rr = r * r;
    std::vector<std::vector<double>> out;
    for (const auto& s : slices) out.emplace_back(s.size(), 0.0);
    std::vector<std::size_t> idx(dn);
    std::vector<double> pre((dn + 1) * rr), suf((dn + 1) * rr), tmp(rr), tmp2(rr);
    for (std::size_t i = 0; i < dims.product(); ++i) {
        digits(i, dims, idx);
        square_identity(pre.data(), r);
        for (std::size_t d = 0; d < dn; ++d)
            square_mul(pre.data() + d * rr, slices[d].data() + idx[d] * rr, pre.data() + (d + 1) * rr, r);
        square_identity(suf.data() + dn * rr, r);
        for (std::size_t d = dn; d-- > 0;)
            square_mul(slices[d].data() + idx[d] * rr, suf.data() + (d + 1) * rr, suf.data() + d * rr, r);
        const double* gp = grad_p.data() + i * rr;
        for (std::size_t d = 0; d < dn; ++d) {
            // dS_d = pre_{d-1}^T dP suf_{d+1}^T
            const double* pm = pre.data() + d * rr;
            const double* sm = suf.data() + (d + 1) * rr;
            for (std::size_t b = 0; b < r; ++b)
                for (std::size_t a = 0; a < r; ++a) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < r; ++k) s += pm[k + r * a] * gp[k + r * b];
                    tmp[a + r * b] = s;
                }
            double* gs = out[d].data() + idx[d] * rr;
            for (std::size_t b = 0; b < r; ++b)
                for (std::size_t a = 0; a < r; ++a) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < r; ++k) s += tmp[a + r * k] * sm[b + r * k];
                    gs[a + r * b] += s;
                }
        }
    }
    return out;
}

/// Backward of Delta = TR(B, C): grad_delta is I x J.
inline void tr_backward(const TRCores& c, const Matrix& grad_delta, std::span<double> out) {
    const std::size_t r = c.rank, rr = r * r;
    const auto bs = gather_all(c.b_cores, r);
    const auto cs = gather_all(c.c_cores, r);
    const auto p = chain_products(bs, c.row_dims, r);
    const auto q = chain_products(cs, c.col_dims, r);
    // Delta[i, j] = sum_{a,b} P_i[a, b] Q_j[b, a]
    std::vector<double> gp(p.size(), 0.0), gq(q.size(), 0.0);
    for (std::size_t j = 0; j < c.cols(); ++j)
        for (std::size_t i = 0; i < c.rows(); ++i) {
            const double g = grad_delta(i, j);
            if (g == 0.0) continue;
            const double* pi = p.data() + i * rr;
            const double* qj = q.data() + j * rr;
            double* gpi = gp.data() + i * rr;
            double* gqj = gq.data() + j * rr;
            for (std::size_t b = 0; b < r; ++b)
                for (std::size_t a = 0; a < r; ++a) {
                    gpi[a + r * b] += g * qj[b + r * a];
                    gqj[a + r * b] += g * pi[b + r * a];
                }
        }
    const auto gb = chain_backward(bs, c.row_dims, r, gp);
    const auto gc = chain_backward(cs, c.col_dims, r, gq);
    std::size_t base = 0;
    for (std::size_t d = 0; d < c.b_cores.size(); ++d) {
        scatter_add_slices(gb[d], r, out.subspan(base, c.b_cores[d].size()));
        base += c.b_cores[d].size();
    }
    for (std::size_t d = 0; d < c.c_cores.size(); ++d) {
        scatter_add_slices(gc[d], r, out.subspan(base, c.c_cores[d].size()));
        base += c.c_cores[d].size();
    }
}

/// Backward of Delta = B A: dB = G A^T, dA = B^T G.
inline void lora_backward(const LoRAFactors& f, const Matrix& grad_delta, std::span<double> out) {
    const Matrix gb = matmul(grad_delta, transpose(f.a));
    const Matrix ga = matmul(transpose(f.b), grad_delta);
    for (std::size_t k = 0; k < gb.size(); ++k) out[k] += gb[k];
    for (std::size_t k = 0; k < ga.size(); ++k) out[gb.size() + k] += ga[k];
}

/// Backward of Q = cayley(skew(theta)) for one block: dS = -(I + Q)^T dQ (I + S)^{-T}.
inline void cayley_backward(std::span<const double> theta, std::size_t n, const Matrix& grad_q,
                            std::span<double> out) {
    const Matrix s = skew_from_params(theta, n);
    const Matrix eye = Matrix::identity(n);
    const Matrix q = cayley(s);
    const Matrix x_inv = solve(eye + s, eye);
    const Matrix ds = -1.0 * matmul(matmul(transpose(eye + q), grad_q), transpose(x_inv));
    std::size_t k = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) out[k++] += ds(a, b) - ds(b, a);
}

inline void block_orthogonal_backward(const BlockGroups& groups, std::span<const double> params,
                                      const Matrix& grad_f, std::span<double> out) {
    std::size_t off = 0;
    for (const auto& g : groups) {
        const std::size_t n = g.size(), np = n * (n - 1) / 2;
        Matrix gq = Matrix::zeros(n, n);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t a = 0; a < n; ++a) gq(a, b) = grad_f(g[a], g[b]);
        cayley_backward(params.subspan(off, np), n, gq, out.subspan(off, np));
        off += np;
    }
}

inline void oft_backward(const OFTParams& p, const Matrix& grad_t, std::span<double> out) {
    block_orthogonal_backward(oft_groups(p.dim, p.block_size), p.params, grad_t, out);
}

inline void boft_backward(const BOFTParams& p, const Matrix& grad_t, std::span<double> out) {
    const std::size_t m = p.n_factors, ppf = p.params_per_factor();
    std::vector<Matrix> f;
    for (std::size_t k = 0; k < m; ++k) f.push_back(boft_factor(p, k));
    // prefix[k] = F_1..F_k, suffix[k] = F_{k+1}..F_m
    std::vector<Matrix> prefix(m + 1), suffix(m + 1);
    prefix[0] = Matrix::identity(p.dim);
    for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = matmul(prefix[k], f[k]);
    suffix[m] = Matrix::identity(p.dim);
    for (std::size_t k = m; k-- > 0;) suffix[k] = matmul(f[k], suffix[k + 1]);
    for (std::size_t k = 0; k < m; ++k) {
        const Matrix gf = matmul(matmul(transpose(prefix[k]), grad_t), transpose(suffix[k + 1]));
        block_orthogonal_backward(butterfly_groups(p.dim, p.block_size, k),
                                  std::span<const double>(p.params).subspan(k * ppf, ppf), gf,
                                  out.subspan(k * ppf, ppf));
    }
}

inline void diagonal_backward(const DiagonalTransform&, const Matrix& grad_t, std::span<double> out) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += grad_t(j, j);
}

}  // namespace tlora::detail
