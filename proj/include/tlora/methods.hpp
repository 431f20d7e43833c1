// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/adapters.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace tlora {

/// Adapter roster: OFT, LoRA, TR, OFT+LoRA, TRM+LoRA, TRM+TR, plus TRM alone,
/// BOFT and the diagonal-transform DoRA rewrite.
enum class Method { oft, lora, tr, oft_lora, trm_lora, trm_tr, trm, boft, dora };

inline constexpr std::array<std::pair<Method, std::string_view>, 9> kMethodNames{{
    {Method::oft, "oft"},
    {Method::lora, "lora"},
    {Method::tr, "tr"},
    {Method::oft_lora, "oft+lora"},
    {Method::trm_lora, "trm+lora"},
    {Method::trm_tr, "trm+tr"},
    {Method::trm, "trm"},
    {Method::boft, "boft"},
    {Method::dora, "dora"},
}};

inline std::string_view method_name(Method m) {
    for (const auto& [k, v] : kMethodNames)
        if (k == m) return v;
    return "?";
}

inline std::optional<Method> parse_method(std::string_view name) {
    for (const auto& [k, v] : kMethodNames)
        if (v == name) return k;
    return std::nullopt;
}

inline bool method_has_trm(Method m) {
    return m == Method::trm || m == Method::trm_lora || m == Method::trm_tr;
}

/// Settings for one adapter instance. `rank` is the swept value: the LoRA or TR
/// rank for methods with a residual, otherwise the TRM rank (trm) or block size
/// (oft, boft). `transform_rank` is the fixed TRM rank or OFT block size of a
/// composite method.
struct MethodSettings {
    Method method = Method::lora;
    std::size_t rank = 1;
    std::size_t transform_rank = 1;
    ModeFactorization dims;      ///< transform modes and TR column modes
    ModeFactorization row_dims;  ///< TR row modes
    std::size_t n_factors = 2;   ///< BOFT
    double init_noise = 0.0;     ///< std of noise added to identity-initialized TRM cores
};

/// Factorizations used for large layers, keyed by side length.
inline const std::map<std::size_t, std::vector<std::size_t>>& tensor_shape_dict() {
    static const std::map<std::size_t, std::vector<std::size_t>> dict{
        {320, {4, 8, 10}},    {640, {8, 8, 10}},    {768, {8, 8, 12}},    {1280, {8, 10, 16}},
        {2048, {8, 16, 16}},  {2560, {10, 16, 16}}, {5120, {20, 16, 16}}, {10240, {32, 20, 16}},
    };
    return dict;
}

/// Dictionary entry when present, otherwise the most balanced ascending
/// three-factor split of n.
inline ModeFactorization default_factorization(std::size_t n) {
    if (n == 0) throw DomainError("cannot factorize a zero dimension");
    const auto& dict = tensor_shape_dict();
    if (auto it = dict.find(n); it != dict.end()) return ModeFactorization(it->second);
    std::vector<std::size_t> best{1, 1, n};
    for (std::size_t a = 1; a * a * a <= n; ++a) {
        if (n % a) continue;
        for (std::size_t b = a; a * b * b <= n; ++b) {
            if ((n / a) % b) continue;
            const std::size_t c = n / a / b;
            if (c - a < best[2] - best[0]) best = {a, b, c};
        }
    }
    return ModeFactorization(best);
}

namespace detail {

inline TRMCores noisy_identity_trm(const ModeFactorization& dims, std::size_t rank, double noise,
                                   std::uint64_t seed) {
    TRMCores c = trm_identity_init(dims, dims, rank);
    if (noise > 0.0) {
        CounterRng root(seed, 0x7E5);
        for (std::size_t d = 0; d < c.cores.size(); ++d) {
            CounterRng rng = root.split(d);
            for (double& v : c.cores[d].values()) v += noise * rng.next_normal();
        }
    }
    return c;
}

}  // namespace detail

/// Initialized adapter for a rows x cols base weight: identity (or zero-parameter)
/// transform, zero residual.
inline AdapterSpec build_adapter(const MethodSettings& s, std::size_t rows, std::size_t cols, std::uint64_t seed) {
    const bool trm_needed = method_has_trm(s.method);
    if (trm_needed && s.dims.product() != cols)
        throw DomainError("transform factorization " + s.dims.to_string() + " does not multiply to " +
                          std::to_string(cols));
    auto tr_residual = [&](std::size_t rank) -> Residual {
        if (s.row_dims.product() != rows)
            throw DomainError("TR row factorization " + s.row_dims.to_string() + " does not multiply to " +
                              std::to_string(rows));
        if (s.dims.product() != cols)
            throw DomainError("TR column factorization " + s.dims.to_string() + " does not multiply to " +
                              std::to_string(cols));
        if (s.row_dims.order() != s.dims.order())
            throw DomainError("TR row and column factorizations need the same number of modes");
        return tr_init(s.row_dims, s.dims, rank, seed);
    };
    switch (s.method) {
        case Method::oft: return {oft_init(cols, s.rank), {}};
        case Method::lora: return {{}, lora_init(rows, cols, s.rank, seed)};
        case Method::tr: return {{}, tr_residual(s.rank)};
        case Method::oft_lora: return {oft_init(cols, s.transform_rank), lora_init(rows, cols, s.rank, seed)};
        case Method::trm_lora:
            return {detail::noisy_identity_trm(s.dims, s.transform_rank, s.init_noise, seed),
                    lora_init(rows, cols, s.rank, seed)};
        case Method::trm_tr:
            return {detail::noisy_identity_trm(s.dims, s.transform_rank, s.init_noise, seed), tr_residual(s.rank)};
        case Method::trm: return {detail::noisy_identity_trm(s.dims, s.rank, s.init_noise, seed), {}};
        case Method::boft: return {boft_init(cols, s.rank, s.n_factors), {}};
        case Method::dora: return dora_spec(dora_init(rows, cols, s.rank, seed));
    }
    throw DomainError("unknown method");
}

/// (transform_rank, residual_rank) as reported in sweep output.
inline std::pair<std::size_t, std::size_t> rank_columns(const MethodSettings& s) {
    switch (s.method) {
        case Method::oft:
        case Method::trm:
        case Method::boft: return {s.rank, 0};
        case Method::lora:
        case Method::tr:
        case Method::dora: return {0, s.rank};
        default: return {s.transform_rank, s.rank};
    }
}

/// Factorization label for sweep output.
inline std::string dims_label(const MethodSettings& s) {
    switch (s.method) {
        case Method::trm:
        case Method::trm_lora: return s.dims.to_string();
        case Method::tr:
        case Method::trm_tr:
            return s.row_dims == s.dims ? s.dims.to_string() : s.row_dims.to_string() + "|" + s.dims.to_string();
        case Method::boft: return "m=" + std::to_string(s.n_factors);
        default: return "";
    }
}

}  // namespace tlora
