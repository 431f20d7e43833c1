// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/adapters.hpp"
#include "tlora/gradients.hpp"
#include "tlora/regularizers.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tlora {

enum class RegKind { none, identity, orthogonal };

inline const char* to_string(RegKind k) {
    switch (k) {
        case RegKind::identity: return "identity";
        case RegKind::orthogonal: return "orthogonal";
        default: return "none";
    }
}

struct FitConfig {
    double learning_rate = 1e-3;
    std::size_t steps = 500;
    RegKind reg_kind = RegKind::none;
    double reg_scale = 0.0;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;
    /// Stop once |L_k - L_{k-1}| / L_{k-1} falls below this; disabled when unset.
    std::optional<double> convergence_tol;
    /// eps in sqrt(||X||^2 + eps^2) - eps for the regularizer norms.
    double reg_eps = 1e-12;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be > 0");
        if (steps < 1) throw DomainError("steps must be >= 1");
        if (reg_scale < 0.0) throw DomainError("reg_scale must be >= 0");
        if (log_every < 1) throw DomainError("log_every must be >= 1");
    }
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
        throw DomainError("adam_step: parameter, gradient and moment lengths differ");
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grads[k];
        s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * g;
        s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * g * g;
        const double mhat = s.m[k] / c1;
        const double vhat = s.v[k] / c2;
        params[k] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

struct Evaluation {
    double loss = 0.0;
    double mse = 0.0;
    double reg = 0.0;
    std::vector<double> grad;
};

namespace detail {

inline const TRMCores& require_trm_for_reg(const AdapterSpec& spec) {
    const TRMCores* c = spec.trm();
    if (!c) throw DomainError("regularization requested but the transform is not a TRM");
    return *c;
}

}  // namespace detail

/// mean((W0 T + Delta - W*)^2) + lambda * reg(TRM cores), optionally with its
/// gradient with respect to the flat parameter view.
inline Evaluation evaluate(const Matrix& w0, const AdapterSpec& spec, const Matrix& w_star,
                           const FitConfig& cfg, bool with_grad) {
    require_same_shape(w0, w_star, "base and target weights");
    if (cfg.reg_kind != RegKind::none) detail::require_trm_for_reg(spec);

    const auto t = materialize_transform(spec.transform);
    const auto delta = materialize_residual(spec.residual);
    detail::check_combination(w0, t, delta);
    Matrix e = t ? matmul(w0, *t) : w0;
    if (delta) e = e + *delta;
    e = e - w_star;

    Evaluation out;
    const double n = static_cast<double>(e.size());
    double ss = 0.0;
    for (double v : e.data()) ss += v * v;
    out.mse = ss / n;
    if (cfg.reg_kind == RegKind::identity)
        out.reg = reg_identity(*spec.trm(), cfg.reg_eps);
    else if (cfg.reg_kind == RegKind::orthogonal)
        out.reg = reg_orthogonal(*spec.trm(), cfg.reg_eps);
    out.loss = out.mse + cfg.reg_scale * out.reg;
    if (!with_grad) return out;

    const Matrix g = (2.0 / n) * e;
    out.grad.assign(param_count(spec), 0.0);
    std::span<double> flat(out.grad);
    std::size_t off = 0;
    if (t) {
        const Matrix gt = matmul(transpose(w0), g);
        std::size_t len = 0;
        if (const auto* c = std::get_if<TRMCores>(&spec.transform)) {
            for (const auto& core : c->cores) len += core.size();
            detail::trm_backward(*c, gt, flat.subspan(0, len));
            if (cfg.reg_kind == RegKind::identity && cfg.reg_scale > 0.0)
                reg_identity_grad(*c, cfg.reg_scale, cfg.reg_eps, flat.subspan(0, len));
            else if (cfg.reg_kind == RegKind::orthogonal && cfg.reg_scale > 0.0)
                reg_orthogonal_grad(*c, cfg.reg_scale, cfg.reg_eps, flat.subspan(0, len));
        } else if (const auto* o = std::get_if<OFTParams>(&spec.transform)) {
            len = o->params.size();
            detail::oft_backward(*o, gt, flat.subspan(0, len));
        } else if (const auto* b = std::get_if<BOFTParams>(&spec.transform)) {
            len = b->params.size();
            detail::boft_backward(*b, gt, flat.subspan(0, len));
        } else if (const auto* d = std::get_if<DiagonalTransform>(&spec.transform)) {
            len = d->m.size();
            detail::diagonal_backward(*d, gt, flat.subspan(0, len));
        }
        off = len;
    }
    if (const auto* tr = std::get_if<TRCores>(&spec.residual)) {
        detail::tr_backward(*tr, g, flat.subspan(off));
    } else if (const auto* lora = std::get_if<LoRAFactors>(&spec.residual)) {
        detail::lora_backward(*lora, g, flat.subspan(off));
    }
    return out;
}

inline double loss(const Matrix& w0, const AdapterSpec& spec, const Matrix& w_star, const FitConfig& cfg) {
    return evaluate(w0, spec, w_star, cfg, false).loss;
}

inline std::vector<double> grad(const Matrix& w0, const AdapterSpec& spec, const Matrix& w_star,
                                const FitConfig& cfg) {
    return evaluate(w0, spec, w_star, cfg, true).grad;
}

struct FitReport {
    /// (step, loss) pairs; step k is the loss before the k-th update, and the
    /// last entry is the loss after the final update.
    std::vector<std::pair<std::size_t, double>> trajectory;
    double final_loss = 0.0;
    double final_rel_error = 0.0;
    std::size_t param_count = 0;
    std::uint64_t seed = 0;
    std::size_t steps_executed = 0;
    double wall_seconds = 0.0;
};

/// ||W0 T + Delta - W*||_F / ||W* - W0||_F, or / ||W*||_F when W* = W0.
inline double relative_error(const Matrix& w0, const AdapterSpec& spec, const Matrix& w_star) {
    const double num = fro_dist(adapted_weight(w0, spec), w_star);
    double den = fro_dist(w_star, w0);
    if (den == 0.0) den = fro_norm(w_star);
    return den > 0.0 ? num / den : num;
}

/// Full-gradient Adam on the flat view; `spec` holds the fitted parameters on return.
inline FitReport fit(const Matrix& w0, const Matrix& w_star, AdapterSpec& spec, const FitConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    FitReport rep;
    rep.seed = cfg.seed;
    rep.param_count = param_count(spec);

    std::vector<double> params = flatten(spec);
    AdamState state(params.size());
    double prev = 0.0;
    auto check = [](double l, std::size_t step) {
        if (!std::isfinite(l))
            throw NumericalError("non-finite loss " + std::to_string(l) + " at step " + std::to_string(step));
    };
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Evaluation ev = evaluate(w0, spec, w_star, cfg, true);
        check(ev.loss, step);
        if (step % cfg.log_every == 0) rep.trajectory.emplace_back(step, ev.loss);
        if (cfg.convergence_tol && step > 0 && prev > 0.0 && std::abs(ev.loss - prev) / prev < *cfg.convergence_tol)
            break;
        prev = ev.loss;
        adam_step(state, params, ev.grad, cfg.learning_rate);
        assign_flat(spec, params);
        ++rep.steps_executed;
    }
    rep.final_loss = loss(w0, spec, w_star, cfg);
    check(rep.final_loss, rep.steps_executed);
    if (rep.trajectory.empty() || rep.trajectory.back().first != rep.steps_executed)
        rep.trajectory.emplace_back(rep.steps_executed, rep.final_loss);
    rep.final_rel_error = relative_error(w0, spec, w_star);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

}  // namespace tlora
