// SPDX-License-Identifier: Apache-2.0
#include "test_util.hpp"
#include "tlora/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tlora;
using namespace tlora::testing;

namespace {

std::string config_error_path(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

std::string write_text(const std::string& name, const std::string& text) {
    const std::string p = temp_path(name);
    std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
    return p;
}

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "tlora");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

const char* kSmall = R"({
  "size": 16,
  "target": {"kind": "lowrank_additive", "rank": 2, "seed": 1},
  "fit": {"learning_rate": 0.01, "steps": 40, "seed": 3},
  "methods": [
    {"name": "lora", "ranks": [1, 2]},
    {"name": "trm+tr", "ranks": [1, 2], "dims": [4, 4]}
  ]
})";

}  // namespace

TEST(Config, MinimalDocumentDefaults) {
    const SweepConfig c = parse_config(R"({"size": 8, "target": {"kind": "orthogonal_rotation"},
                                           "methods": [{"name": "trm", "ranks": [1]}]})");
    EXPECT_EQ(c.rows, 8u);
    EXPECT_EQ(c.cols, 8u);
    EXPECT_EQ(c.fit.learning_rate, 1e-3);
    EXPECT_EQ(c.fit.steps, 500u);
    EXPECT_EQ(c.fit.reg_scale, 0.0);
    EXPECT_EQ(c.fit.reg_kind, RegKind::none);
    EXPECT_EQ(c.target.epsilon, 0.05);
    EXPECT_EQ(c.base.kind, BaseKind::gaussian);
    EXPECT_EQ(c.base.std, 0.02);
    EXPECT_EQ(c.methods[0].settings.dims, (ModeFactorization{2, 2, 2}));
    EXPECT_TRUE(c.output.empty());
}

TEST(Config, RectangularAndFullFields) {
    const SweepConfig c = parse_config(R"({
      "rows": 12, "cols": 16,
      "base": {"kind": "gaussian", "std": 0.5, "seed": 9},
      "target": {"kind": "lowrank_additive", "rank": 3, "target_std": 0.1, "seed": 4},
      "fit": {"learning_rate": 0.02, "steps": 7, "reg_kind": "orthogonal", "reg_scale": 0.001,
              "seed": 11, "log_every": 2, "convergence_tol": 1e-9, "reg_eps": 1e-10},
      "methods": [{"name": "trm+tr", "ranks": [2], "dims": [4, 4], "row_dims": [3, 4],
                   "transform_rank": 2, "init_noise": 0.01}],
      "output": "out.csv"})");
    EXPECT_EQ(c.rows, 12u);
    EXPECT_EQ(c.cols, 16u);
    EXPECT_EQ(c.base.std, 0.5);
    EXPECT_EQ(c.base.seed, 9u);
    EXPECT_EQ(c.target.rank, 3u);
    EXPECT_EQ(c.target.target_std, 0.1);
    EXPECT_EQ(c.fit.steps, 7u);
    EXPECT_EQ(c.fit.reg_kind, RegKind::orthogonal);
    EXPECT_EQ(*c.fit.convergence_tol, 1e-9);
    const MethodSettings& s = c.methods[0].settings;
    EXPECT_EQ(s.row_dims, (ModeFactorization{3, 4}));
    EXPECT_EQ(s.transform_rank, 2u);
    EXPECT_EQ(s.init_noise, 0.01);
    EXPECT_EQ(c.output, "out.csv");
}

TEST(Config, ErrorsCarryPaths) {
    const std::string tgt = R"("target": {"kind": "random_orthogonal"})";
    auto doc = [&](const std::string& methods, const std::string& extra = "") {
        return "{\"size\": 16, " + tgt + ", \"methods\": [" + methods + "]" + extra + "}";
    };
    EXPECT_EQ(config_error_path("{"), "/");
    EXPECT_EQ(config_error_path("[]"), "/");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1]})", R"(, "bogus": 1)")), "/bogus");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1], "rnak": 2})")), "/methods/0/rnak");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1]}, {"name": "qlora", "ranks": [1]})")),
              "/methods/1/name");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": []})")), "/methods/0/ranks");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [0]})")), "/methods/0/ranks/0");
    EXPECT_EQ(config_error_path(doc(R"({"name": "trm", "ranks": [1], "dims": [4, 3]})")), "/methods/0/dims");
    EXPECT_EQ(config_error_path(doc(R"({"name": "oft", "ranks": [4, 3]})")), "/methods/0/ranks/1");
    EXPECT_EQ(config_error_path(doc(R"({"name": "boft", "ranks": [2], "factors": 5})")), "/methods/0/ranks/0");
    EXPECT_EQ(config_error_path(doc(R"({"name": "oft+lora", "ranks": [2]})")), "/methods/0/transform_rank");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1], "init_noise": 0.1})")),
              "/methods/0/init_noise");
    EXPECT_EQ(config_error_path(doc("")), "/methods");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1]})", R"(, "fit": {"steps": 0})")),
              "/fit/steps");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1]})", R"(, "fit": {"reg_kind": "identity"})")),
              "/methods/0/name");
    EXPECT_EQ(config_error_path(doc(R"({"name": "lora", "ranks": [1]})", R"(, "fit": {"learning_rate": -1})")),
              "/fit/learning_rate");
    EXPECT_EQ(config_error_path(R"({"rows": 4, "cols": 8, "target": {"kind": "random_orthogonal"},
                                    "methods": [{"name": "lora", "ranks": [1]}]})"),
              "/target/kind");
    EXPECT_EQ(config_error_path(R"({"size": 4, "target": {"kind": "lowrank_additive"},
                                    "methods": [{"name": "lora", "ranks": [1]}]})"),
              "/target/rank");
    EXPECT_EQ(config_error_path(R"({"size": 4, "target": {"kind": "file_pair", "w0": "a", "w_star": "b"},
                                    "base": {"kind": "identity"}, "methods": [{"name": "lora", "ranks": [1]}]})"),
              "/base");
    EXPECT_EQ(config_error_path(R"({"size": 4, "target": {"kind": "file_pair", "w0": "a", "w_star": "b", "seed": 1},
                                    "methods": [{"name": "lora", "ranks": [1]}]})"),
              "/target/seed");
}

TEST(Config, JobGridOrder) {
    const SweepConfig c = parse_config(kSmall);
    const auto jobs = expand_jobs(c);
    ASSERT_EQ(jobs.size(), 4u);
    EXPECT_EQ(jobs[0].settings.method, Method::lora);
    EXPECT_EQ(jobs[0].settings.rank, 1u);
    EXPECT_EQ(jobs[1].settings.rank, 2u);
    EXPECT_EQ(jobs[2].settings.method, Method::trm_tr);
    EXPECT_EQ(jobs[3].entry, 1u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(jobs[k].index, k);

    const SweepConfig three = parse_config(R"({"size": 8, "target": {"kind": "random_orthogonal"},
                                               "methods": [{"name": "lora", "ranks": [1, 2, 4]}]})");
    EXPECT_EQ(expand_jobs(three).size(), 3u);
}

TEST(Methods, NamesRoundTrip) {
    for (const auto& [m, name] : kMethodNames) {
        EXPECT_EQ(parse_method(name), m);
        EXPECT_EQ(method_name(m), std::string(name));
    }
    EXPECT_FALSE(parse_method("LoRA").has_value());
}

TEST(Methods, DefaultFactorization) {
    EXPECT_EQ(default_factorization(768), (ModeFactorization{8, 8, 12}));
    EXPECT_EQ(default_factorization(10240), (ModeFactorization{32, 20, 16}));
    for (const auto& [n, dims] : tensor_shape_dict()) EXPECT_EQ(ModeFactorization(dims).product(), n);
    EXPECT_EQ(default_factorization(16), (ModeFactorization{2, 2, 4}));
    EXPECT_EQ(default_factorization(64), (ModeFactorization{4, 4, 4}));
    EXPECT_EQ(default_factorization(7).product(), 7u);
}

TEST(Methods, BuildAdapterMatchesParamCount) {
    MethodSettings s;
    s.dims = {4, 4};
    s.row_dims = {4, 4};
    s.rank = 2;
    struct Want {
        Method m;
        std::size_t n;
    };
    // 16 x 16, rank 2, transform rank 1; TR has four 4 x 2 x 2 cores.
    for (const Want& w : {Want{Method::lora, 64}, Want{Method::oft, 8}, Want{Method::tr, 4 * 4 * 2 * 2},
                          Want{Method::trm, 2 * 4 * 4 * 4}, Want{Method::trm_lora, 32 + 64},
                          Want{Method::trm_tr, 32 + 64}, Want{Method::dora, 16 + 64}}) {
        s.method = w.m;
        EXPECT_EQ(param_count(build_adapter(s, 16, 16, 0)), w.n) << method_name(w.m);
    }
    s.method = Method::trm;
    s.dims = {4, 3};
    EXPECT_THROW(build_adapter(s, 16, 16, 0), DomainError);
}

TEST(Sweep, RowsInGridOrderIndependentOfThreads) {
    const SweepConfig c = parse_config(kSmall);
    const auto serial = run_sweep(c, 1);
    const auto parallel = run_sweep(c, 3);
    ASSERT_EQ(serial.size(), 4u);
    ASSERT_EQ(parallel.size(), 4u);
    const auto jobs = expand_jobs(c);
    for (std::size_t k = 0; k < 4; ++k) {
        SweepRow a = serial[k], b = parallel[k];
        a.wall_seconds = b.wall_seconds = 0.0;
        EXPECT_EQ(a, b) << k;
        EXPECT_EQ(a.n_params, param_count(build_adapter(jobs[k].settings, 16, 16, c.fit.seed)));
        EXPECT_EQ(a.steps, 40u);
        EXPECT_EQ(a.seed, 3u);
    }
    EXPECT_EQ(serial[0].method, "lora");
    EXPECT_EQ(serial[2].dims, "4x4");
    EXPECT_EQ(serial[3].transform_rank, 1u);
    EXPECT_EQ(serial[3].residual_rank, 2u);
}

TEST(Sweep, ResolveThreads) {
    ::unsetenv("TENADAPT_THREADS");
    EXPECT_EQ(resolve_threads(4, 2), 2u);
    EXPECT_EQ(resolve_threads(2, 10), 2u);
    EXPECT_GE(resolve_threads(0, 10), 1u);
    ::setenv("TENADAPT_THREADS", "1", 1);
    EXPECT_EQ(resolve_threads(8, 10), 1u);
    ::setenv("TENADAPT_THREADS", "zero", 1);
    EXPECT_THROW(resolve_threads(8, 10), ConfigError);
    ::unsetenv("TENADAPT_THREADS");
}

TEST(Sweep, FilePairWeights) {
    const Matrix w0 = random_matrix(4, 4, 1), ws = random_matrix(4, 4, 2);
    const std::string a = temp_path("bench_w0.npy"), b = temp_path("bench_ws.npy");
    write_npy(a, w0);
    write_npy(b, ws);
    const SweepConfig c = parse_config(R"({"size": 4, "target": {"kind": "file_pair", "w0": ")" + a +
                                       R"(", "w_star": ")" + b + R"("}, "methods": [{"name": "lora", "ranks": [1]}]})");
    const WeightPair w = prepare_weights(c);
    EXPECT_EQ(w.w0, w0);
    EXPECT_EQ(w.w_star, ws);
    const SweepConfig wrong = parse_config(R"({"size": 2, "target": {"kind": "file_pair", "w0": ")" + a +
                                           R"(", "w_star": ")" + b + R"("}, "methods": [{"name": "lora", "ranks": [1]}]})");
    EXPECT_THROW(prepare_weights(wrong), ConfigError);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run_cli({}).code, kExitUsage);
    EXPECT_EQ(run_cli({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(run_cli({"sweep"}).code, kExitUsage);
    EXPECT_EQ(run_cli({"--help"}).code, kExitOk);
    const CliRun missing = run_cli({"paramcount", "-c", temp_path("nope.json")});
    EXPECT_EQ(missing.code, kExitUsage);
    EXPECT_NE(missing.err.find("cannot open"), std::string::npos);
    const CliRun bad = run_cli({"paramcount", "-c", write_text("cli_bad.json", R"({"size": 4})")});
    EXPECT_EQ(bad.code, kExitUsage);
    EXPECT_NE(bad.err.find("/target"), std::string::npos) << bad.err;
}

TEST(Cli, ParamCount) {
    const CliRun r = run_cli({"paramcount", "-c", write_text("cli_small.json", kSmall)});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out, "method,transform_rank,residual_rank,dims,n_params\n"
                     "lora,0,1,,32\n"
                     "lora,0,2,,64\n"
                     "trm+tr,1,1,4x4,48\n"
                     "trm+tr,1,2,4x4,96\n");
}

TEST(Cli, SweepWritesCsv) {
    const std::string csv = temp_path("cli_sweep.csv");
    std::filesystem::remove(csv);
    const CliRun r = run_cli({"sweep", "-c", write_text("cli_small.json", kSmall), "-o", csv, "-j", "2"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto rows = read_csv(csv);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[1].method, "lora");
    EXPECT_EQ(rows[1].residual_rank, 2u);
    EXPECT_NE(r.out.find("wrote 4 rows"), std::string::npos);
}

TEST(Cli, FitGenTargetAndMaterialize) {
    const std::string cfg = write_text("cli_one.json", R"({
      "size": 8, "target": {"kind": "orthogonal_rotation", "seed": 2},
      "fit": {"steps": 10, "log_every": 5},
      "methods": [{"name": "trm+lora", "ranks": [2], "dims": [2, 4]}]})");
    const CliRun f = run_cli({"fit", "-c", cfg});
    ASSERT_EQ(f.code, kExitOk) << f.err;
    EXPECT_NE(f.out.find("method trm+lora\n"), std::string::npos);
    EXPECT_NE(f.out.find("n_params 52\n"), std::string::npos) << f.out;
    EXPECT_NE(f.out.find("step,loss\n0,"), std::string::npos);
    EXPECT_NE(f.out.find("\n10,"), std::string::npos);

    const std::string dir = temp_path("cli_out");
    std::filesystem::remove_all(dir);
    const CliRun g = run_cli({"gen-target", "-c", cfg, "-o", dir});
    ASSERT_EQ(g.code, kExitOk) << g.err;
    const WeightPair w = prepare_weights(parse_config(R"({
      "size": 8, "target": {"kind": "orthogonal_rotation", "seed": 2},
      "methods": [{"name": "lora", "ranks": [1]}]})"));
    EXPECT_EQ(read_npy(dir + "/w0.npy"), w.w0);
    EXPECT_EQ(read_npy(dir + "/w_star.npy"), w.w_star);

    const CliRun m = run_cli({"materialize", "-c", cfg, "-o", dir});
    ASSERT_EQ(m.code, kExitOk) << m.err;
    EXPECT_EQ(read_npy(dir + "/T.npy").shape(), (std::vector<std::size_t>{8, 8}));
    EXPECT_EQ(read_npy(dir + "/delta.npy").shape(), (std::vector<std::size_t>{8, 8}));

    EXPECT_EQ(run_cli({"fit", "-c", write_text("cli_small.json", kSmall)}).code, kExitUsage);
    EXPECT_EQ(run_cli({"materialize", "-c", cfg}).code, kExitUsage);
}

TEST(Cli, NumericalAbortExitCode) {
    const Matrix w0 = random_matrix(4, 4, 1);
    Matrix ws = w0;
    ws(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const std::string a = temp_path("cli_nan_w0.npy"), b = temp_path("cli_nan_ws.npy");
    write_npy(a, w0);
    write_npy(b, ws);
    const std::string cfg = write_text("cli_nan.json", R"({"size": 4, "target": {"kind": "file_pair", "w0": ")" + a +
                                                           R"(", "w_star": ")" + b +
                                                           R"("}, "fit": {"steps": 5},
                                                           "methods": [{"name": "lora", "ranks": [1]}]})");
    const CliRun r = run_cli({"fit", "-c", cfg});
    EXPECT_EQ(r.code, kExitNumerical);
    EXPECT_NE(r.err.find("numerical abort"), std::string::npos);
}
