// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/io.hpp"
#include "tlora/methods.hpp"
#include "tlora/optimize.hpp"
#include "tlora/targets.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace tlora {

enum class BaseKind { gaussian, identity, npy };

struct BaseSpec {
    BaseKind kind = BaseKind::gaussian;
    double std = 0.02;
    std::uint64_t seed = 0;
    std::string path;
};

/// One `methods[]` entry: a method template plus the ranks to sweep.
struct MethodEntry {
    MethodSettings settings;           ///< `rank` is overwritten per job
    std::vector<std::size_t> ranks;
};

struct SweepConfig {
    std::size_t rows = 0;
    std::size_t cols = 0;
    BaseSpec base;
    TargetSpec target;
    std::vector<MethodEntry> methods;
    FitConfig fit;
    std::string output;
};

struct SweepJob {
    std::size_t index = 0;
    std::size_t entry = 0;  ///< position in SweepConfig::methods
    MethodSettings settings;
};

/// Method-major, rank-minor.
inline std::vector<SweepJob> expand_jobs(const SweepConfig& cfg) {
    std::vector<SweepJob> jobs;
    for (std::size_t e = 0; e < cfg.methods.size(); ++e)
        for (std::size_t r : cfg.methods[e].ranks) {
            SweepJob j{jobs.size(), e, cfg.methods[e].settings};
            j.settings.rank = r;
            jobs.push_back(std::move(j));
        }
    return jobs;
}

namespace detail {

using nlohmann::json;

inline std::string type_name(const json& v) { return v.type_name(); }

class ConfigReader {
public:
    ConfigReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_or_root(), "expected an object, got " + type_name(obj_));
    }

    const std::string& path() const { return path_; }
    std::string child(const std::string& key) const { return path_ + "/" + key; }
    bool has(const std::string& key) const { return obj_.contains(key); }

    const json& get(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) throw ConfigError(child(key), "missing required field");
        return *it;
    }

    std::string string(const std::string& key) {
        const json& v = get(key);
        if (!v.is_string()) throw ConfigError(child(key), "expected a string, got " + type_name(v));
        return v.get<std::string>();
    }

    std::uint64_t uint(const std::string& key, std::uint64_t min = 0) {
        const json& v = get(key);
        return as_uint(v, child(key), min);
    }

    double number(const std::string& key) {
        const json& v = get(key);
        if (!v.is_number()) throw ConfigError(child(key), "expected a number, got " + type_name(v));
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(child(key), "must be finite");
        return d;
    }

    /// Rejects keys never read.
    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(child(it.key()), "unknown field");
    }

    static std::uint64_t as_uint(const json& v, const std::string& path, std::uint64_t min) {
        if (v.is_number_integer() && v.get<std::int64_t>() < 0)
            throw ConfigError(path, "must be >= " + std::to_string(min));
        if (!v.is_number_unsigned() && !v.is_number_integer())
            throw ConfigError(path, "expected a non-negative integer, got " + type_name(v));
        const auto u = v.get<std::uint64_t>();
        if (u < min) throw ConfigError(path, "must be >= " + std::to_string(min));
        return u;
    }

    static std::vector<std::size_t> uint_list(const json& v, const std::string& path, std::uint64_t min) {
        if (!v.is_array()) throw ConfigError(path, "expected an array, got " + type_name(v));
        if (v.empty()) throw ConfigError(path, "must not be empty");
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < v.size(); ++k) out.push_back(as_uint(v[k], path + "/" + std::to_string(k), min));
        return out;
    }

private:
    std::string path_or_root() const { return path_.empty() ? "/" : path_; }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

inline BaseSpec parse_base(const json& v, const std::string& path) {
    ConfigReader r(v, path);
    BaseSpec b;
    const std::string kind = r.string("kind");
    if (kind == "gaussian") {
        b.kind = BaseKind::gaussian;
        if (r.has("std")) b.std = r.number("std");
        if (b.std < 0.0) throw ConfigError(r.child("std"), "must be >= 0");
        if (r.has("seed")) b.seed = r.uint("seed");
    } else if (kind == "identity") {
        b.kind = BaseKind::identity;
    } else if (kind == "npy") {
        b.kind = BaseKind::npy;
        b.path = r.string("path");
    } else {
        throw ConfigError(r.child("kind"), "unknown base kind '" + kind + "' (gaussian, identity, npy)");
    }
    r.finish();
    return b;
}

inline TargetSpec parse_target(const json& v, const std::string& path) {
    ConfigReader r(v, path);
    TargetSpec t;
    const std::string kind = r.string("kind");
    if (kind == "lowrank_additive") {
        t.kind = TargetKind::lowrank_additive;
        t.rank = r.uint("rank", 1);
        if (r.has("target_std")) t.target_std = r.number("target_std");
        if (t.target_std < 0.0) throw ConfigError(r.child("target_std"), "must be >= 0");
    } else if (kind == "orthogonal_rotation") {
        t.kind = TargetKind::orthogonal_rotation;
        if (r.has("epsilon")) t.epsilon = r.number("epsilon");
        if (t.epsilon < 0.0) throw ConfigError(r.child("epsilon"), "must be >= 0");
    } else if (kind == "random_orthogonal") {
        t.kind = TargetKind::random_orthogonal;
    } else if (kind == "file_pair") {
        t.kind = TargetKind::file_pair;
        t.w0_path = r.string("w0");
        t.w_star_path = r.string("w_star");
    } else {
        throw ConfigError(r.child("kind"), "unknown target kind '" + kind +
                                               "' (lowrank_additive, orthogonal_rotation, random_orthogonal, file_pair)");
    }
    if (t.kind != TargetKind::file_pair && r.has("seed")) t.seed = r.uint("seed");
    r.finish();
    return t;
}

inline FitConfig parse_fit(const json& v, const std::string& path) {
    ConfigReader r(v, path);
    FitConfig f;
    if (r.has("learning_rate")) {
        f.learning_rate = r.number("learning_rate");
        if (!(f.learning_rate > 0.0)) throw ConfigError(r.child("learning_rate"), "must be > 0");
    }
    if (r.has("steps")) f.steps = r.uint("steps", 1);
    if (r.has("reg_kind")) {
        const std::string k = r.string("reg_kind");
        if (k == "none") f.reg_kind = RegKind::none;
        else if (k == "identity") f.reg_kind = RegKind::identity;
        else if (k == "orthogonal") f.reg_kind = RegKind::orthogonal;
        else throw ConfigError(r.child("reg_kind"), "unknown regularizer '" + k + "' (none, identity, orthogonal)");
    }
    if (r.has("reg_scale")) {
        f.reg_scale = r.number("reg_scale");
        if (f.reg_scale < 0.0) throw ConfigError(r.child("reg_scale"), "must be >= 0");
    }
    if (r.has("seed")) f.seed = r.uint("seed");
    if (r.has("log_every")) f.log_every = r.uint("log_every", 1);
    if (r.has("convergence_tol")) {
        const double tol = r.number("convergence_tol");
        if (!(tol > 0.0)) throw ConfigError(r.child("convergence_tol"), "must be > 0");
        f.convergence_tol = tol;
    }
    if (r.has("reg_eps")) {
        f.reg_eps = r.number("reg_eps");
        if (f.reg_eps < 0.0) throw ConfigError(r.child("reg_eps"), "must be >= 0");
    }
    r.finish();
    return f;
}

inline MethodEntry parse_method_entry(const json& v, const std::string& path, std::size_t rows, std::size_t cols) {
    ConfigReader r(v, path);
    MethodEntry e;
    MethodSettings& s = e.settings;
    const std::string name = r.string("name");
    const auto m = parse_method(name);
    if (!m) {
        std::string known;
        for (const auto& [k, n] : kMethodNames) known += (known.empty() ? "" : ", ") + std::string(n);
        throw ConfigError(r.child("name"), "unknown method '" + name + "' (" + known + ")");
    }
    s.method = *m;
    e.ranks = ConfigReader::uint_list(r.get("ranks"), r.child("ranks"), 1);

    const bool uses_dims = method_has_trm(s.method) || s.method == Method::tr;
    const bool uses_row_dims = s.method == Method::tr || s.method == Method::trm_tr;
    if (uses_dims) {
        s.dims = r.has("dims") ? ModeFactorization(ConfigReader::uint_list(r.get("dims"), r.child("dims"), 1))
                               : default_factorization(cols);
        if (s.dims.product() != cols)
            throw ConfigError(r.child("dims"), "product " + std::to_string(s.dims.product()) +
                                                   " does not match the column count " + std::to_string(cols));
    }
    if (uses_row_dims) {
        if (r.has("row_dims")) {
            s.row_dims = ModeFactorization(ConfigReader::uint_list(r.get("row_dims"), r.child("row_dims"), 1));
        } else if (rows == cols) {
            s.row_dims = s.dims;
        } else {
            s.row_dims = default_factorization(rows);
        }
        if (s.row_dims.product() != rows)
            throw ConfigError(r.child("row_dims"), "product " + std::to_string(s.row_dims.product()) +
                                                       " does not match the row count " + std::to_string(rows));
        if (s.row_dims.order() != s.dims.order())
            throw ConfigError(r.child("row_dims"), "needs as many modes as dims (" + std::to_string(s.dims.order()) + ")");
    }
    if (method_has_trm(s.method) && s.method != Method::trm) {
        s.transform_rank = r.has("transform_rank") ? r.uint("transform_rank", 1) : 1;
    } else if (s.method == Method::oft_lora) {
        s.transform_rank = r.uint("transform_rank", 1);
    }
    if (s.method == Method::boft && r.has("factors")) s.n_factors = r.uint("factors", 1);
    if (method_has_trm(s.method) && r.has("init_noise")) {
        s.init_noise = r.number("init_noise");
        if (s.init_noise < 0.0) throw ConfigError(r.child("init_noise"), "must be >= 0");
    }
    r.finish();

    // Shape checks that depend on the method, e.g. block sizes dividing the side.
    for (std::size_t k = 0; k < e.ranks.size(); ++k) {
        MethodSettings probe = s;
        probe.rank = e.ranks[k];
        try {
            (void)build_adapter(probe, rows, cols, 0);
        } catch (const DomainError& err) {
            throw ConfigError(r.child("ranks") + "/" + std::to_string(k), err.what());
        }
    }
    return e;
}

}  // namespace detail

/// Parses and validates a sweep document; every error carries a JSON-pointer path.
inline SweepConfig parse_config(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("/", std::string("JSON syntax error: ") + e.what());
    }
    detail::ConfigReader r(doc, "");
    SweepConfig cfg;

    if (r.has("size")) {
        if (r.has("rows") || r.has("cols")) throw ConfigError("/size", "give either size or rows/cols, not both");
        cfg.rows = cfg.cols = r.uint("size", 1);
    } else {
        cfg.rows = r.uint("rows", 1);
        cfg.cols = r.uint("cols", 1);
    }

    cfg.target = detail::parse_target(r.get("target"), "/target");
    if (cfg.target.kind == TargetKind::file_pair) {
        if (r.has("base")) throw ConfigError("/base", "file_pair targets read the base weight from target/w0");
    } else {
        if (r.has("base")) cfg.base = detail::parse_base(r.get("base"), "/base");
    }
    if (cfg.base.kind == BaseKind::identity && cfg.rows != cfg.cols)
        throw ConfigError("/base/kind", "identity base needs a square matrix");
    if ((cfg.target.kind == TargetKind::orthogonal_rotation || cfg.target.kind == TargetKind::random_orthogonal) &&
        cfg.rows != cfg.cols)
        throw ConfigError("/target/kind", "orthogonal targets need a square matrix");

    if (r.has("fit")) cfg.fit = detail::parse_fit(r.get("fit"), "/fit");

    const auto& methods = r.get("methods");
    if (!methods.is_array()) throw ConfigError("/methods", "expected an array, got " + detail::type_name(methods));
    if (methods.empty()) throw ConfigError("/methods", "must not be empty");
    for (std::size_t k = 0; k < methods.size(); ++k) {
        const std::string path = "/methods/" + std::to_string(k);
        cfg.methods.push_back(detail::parse_method_entry(methods[k], path, cfg.rows, cfg.cols));
        if (cfg.fit.reg_kind != RegKind::none && !method_has_trm(cfg.methods.back().settings.method))
            throw ConfigError(path + "/name", "fit.reg_kind needs a TRM transform, method is '" +
                                                  std::string(method_name(cfg.methods.back().settings.method)) + "'");
    }
    if (r.has("output")) cfg.output = r.string("output");
    r.finish();
    return cfg;
}

struct WeightPair {
    Matrix w0;
    Matrix w_star;
};

/// Base and target weights for a config, generated or loaded.
inline WeightPair prepare_weights(const SweepConfig& cfg) {
    WeightPair p;
    auto check_shape = [&](const Matrix& m, const std::string& what) {
        if (m.order() != 2 || m.rows() != cfg.rows || m.cols() != cfg.cols)
            throw ConfigError(what, "array shape does not match " + std::to_string(cfg.rows) + "x" +
                                        std::to_string(cfg.cols));
    };
    if (cfg.target.kind == TargetKind::file_pair) {
        p.w0 = read_npy(cfg.target.w0_path);
        check_shape(p.w0, "/target/w0");
        p.w_star = read_npy(cfg.target.w_star_path);
        check_shape(p.w_star, "/target/w_star");
        return p;
    }
    switch (cfg.base.kind) {
        case BaseKind::gaussian: p.w0 = gen_gaussian_weight(cfg.rows, cfg.cols, cfg.base.std, cfg.base.seed); break;
        case BaseKind::identity: p.w0 = Matrix::identity(cfg.rows); break;
        case BaseKind::npy:
            p.w0 = read_npy(cfg.base.path);
            check_shape(p.w0, "/base/path");
            break;
    }
    p.w_star = generate_target(p.w0, cfg.target);
    return p;
}

struct JobResult {
    SweepRow row;
    FitReport report;
    AdapterSpec spec;  ///< fitted parameters
};

/// Fits one job. The adapter seed is the fit seed, so jobs are independent of
/// scheduling order.
inline JobResult run_job(const SweepJob& job, const WeightPair& w, const FitConfig& fit_cfg) {
    JobResult out;
    out.spec = build_adapter(job.settings, w.w0.rows(), w.w0.cols(), fit_cfg.seed);
    out.report = fit(w.w0, w.w_star, out.spec, fit_cfg);
    const auto [tr, rr] = rank_columns(job.settings);
    out.row = SweepRow{std::string(method_name(job.settings.method)),
                       tr,
                       rr,
                       dims_label(job.settings),
                       out.report.param_count,
                       out.report.final_rel_error,
                       out.report.steps_executed,
                       fit_cfg.seed,
                       out.report.wall_seconds};
    return out;
}

/// Worker count: requested (0 = hardware), capped by TENADAPT_THREADS and the job count.
inline std::size_t resolve_threads(std::size_t requested, std::size_t n_jobs) {
    std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TENADAPT_THREADS")) {
        char* end = nullptr;
        const long long cap = std::strtoll(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1)
            throw ConfigError("TENADAPT_THREADS", "must be a positive integer, got '" + std::string(env) + "'");
        n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, std::min(n, std::max<std::size_t>(1, n_jobs)));
}

/// Runs every job; rows come back in grid order whatever the thread count.
inline std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const WeightPair& w, std::size_t threads) {
    const auto jobs = expand_jobs(cfg);
    std::vector<SweepRow> rows(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
            try {
                rows[k] = run_job(jobs[k], w, cfg.fit).row;
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(jobs.size(), 1));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return rows;
}

inline std::vector<SweepRow> run_sweep(const SweepConfig& cfg, std::size_t threads) {
    return run_sweep(cfg, prepare_weights(cfg), threads);
}

}  // namespace tlora
