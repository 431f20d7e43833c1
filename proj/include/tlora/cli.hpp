// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/bench.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace tlora {

/// Exit codes returned by cli_main.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2 };

namespace detail {

inline SweepConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline SweepJob single_job(const SweepConfig& cfg, const char* command) {
    const auto jobs = expand_jobs(cfg);
    if (jobs.size() != 1)
        throw ConfigError("/methods", std::string(command) + " needs exactly one method with one rank, config expands to " +
                                          std::to_string(jobs.size()) + " jobs");
    return jobs.front();
}

inline std::filesystem::path output_dir(const std::string& flag, const SweepConfig& cfg, const char* command) {
    const std::string p = flag.empty() ? cfg.output : flag;
    if (p.empty()) throw ConfigError("/output", std::string(command) + " needs --output or an output field");
    std::filesystem::create_directories(p);
    return p;
}

inline void print_report(std::ostream& out, const SweepRow& row, const FitReport& rep) {
    out << "method " << row.method << "\n"
        << "transform_rank " << row.transform_rank << "\n"
        << "residual_rank " << row.residual_rank << "\n";
    if (!row.dims.empty()) out << "dims " << row.dims << "\n";
    out << "n_params " << rep.param_count << "\n"
        << "seed " << rep.seed << "\n"
        << "steps " << rep.steps_executed << "\n"
        << "final_loss " << format_double(rep.final_loss) << "\n"
        << "final_rel_error " << format_double(rep.final_rel_error) << "\n"
        << "wall_seconds " << format_double(rep.wall_seconds) << "\n"
        << "trajectory\nstep,loss\n";
    for (const auto& [step, l] : rep.trajectory) out << step << "," << format_double(l) << "\n";
}

}  // namespace detail

/// Entry point of the tlora command-line tool.
inline int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Transformed low-rank adaptation: fitting, sweeps and target generation", "tlora"};
    app.require_subcommand(1);
    std::string config, output;
    std::size_t threads = 0;

    auto add_common = [&](CLI::App* sub, bool with_output, bool with_threads) {
        sub->add_option("-c,--config", config, "JSON config file")->required();
        if (with_output) sub->add_option("-o,--output", output, "output path (overrides the config)");
        if (with_threads)
            sub->add_option("-j,--threads", threads, "worker threads (0 = hardware concurrency)")
                ->check(CLI::NonNegativeNumber);
    };
    auto* fit_cmd = app.add_subcommand("fit", "fit a single adapter and print its report");
    add_common(fit_cmd, true, false);
    auto* sweep_cmd = app.add_subcommand("sweep", "run the method x rank grid and write CSV");
    add_common(sweep_cmd, true, true);
    auto* gen_cmd = app.add_subcommand("gen-target", "write w0.npy and w_star.npy to a directory");
    add_common(gen_cmd, true, false);
    auto* count_cmd = app.add_subcommand("paramcount", "print parameter counts for every grid point");
    add_common(count_cmd, false, false);
    auto* mat_cmd = app.add_subcommand("materialize", "fit a single adapter and write T.npy and delta.npy");
    add_common(mat_cmd, true, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const SweepConfig cfg = detail::load_config_file(config);
        if (*count_cmd) {
            out << "method,transform_rank,residual_rank,dims,n_params\n";
            for (const auto& job : expand_jobs(cfg)) {
                const auto spec = build_adapter(job.settings, cfg.rows, cfg.cols, cfg.fit.seed);
                const auto [tr, rr] = rank_columns(job.settings);
                out << method_name(job.settings.method) << "," << tr << "," << rr << "," << dims_label(job.settings)
                    << "," << param_count(spec) << "\n";
            }
            return kExitOk;
        }
        if (*gen_cmd) {
            if (cfg.target.kind == TargetKind::file_pair)
                throw ConfigError("/target/kind", "file_pair targets are read from disk, nothing to generate");
            const auto dir = detail::output_dir(output, cfg, "gen-target");
            const WeightPair w = prepare_weights(cfg);
            write_npy((dir / "w0.npy").string(), w.w0);
            write_npy((dir / "w_star.npy").string(), w.w_star);
            out << "wrote " << (dir / "w0.npy").string() << " and " << (dir / "w_star.npy").string() << "\n";
            return kExitOk;
        }
        if (*fit_cmd || *mat_cmd) {
            const SweepJob job = detail::single_job(cfg, *fit_cmd ? "fit" : "materialize");
            const std::filesystem::path dir =
                *mat_cmd ? detail::output_dir(output, cfg, "materialize") : std::filesystem::path{};
            const WeightPair w = prepare_weights(cfg);
            const JobResult res = run_job(job, w, cfg.fit);
            detail::print_report(out, res.row, res.report);
            if (*fit_cmd && !output.empty()) write_csv(output, {res.row});
            if (*mat_cmd) {
                if (const auto t = materialize_transform(res.spec.transform)) {
                    write_npy((dir / "T.npy").string(), *t);
                    out << "wrote " << (dir / "T.npy").string() << "\n";
                }
                if (const auto d = materialize_residual(res.spec.residual)) {
                    write_npy((dir / "delta.npy").string(), *d);
                    out << "wrote " << (dir / "delta.npy").string() << "\n";
                }
            }
            return kExitOk;
        }
        // sweep
        const std::string path = output.empty() ? cfg.output : output;
        if (path.empty()) throw ConfigError("/output", "sweep needs --output or an output field");
        const auto jobs = expand_jobs(cfg);
        const auto rows = run_sweep(cfg, resolve_threads(threads, jobs.size()));
        write_csv(path, rows);
        for (const auto& row : rows) out << csv_line(row) << "\n";
        out << "wrote " << rows.size() << " rows to " << path << "\n";
        return kExitOk;
    } catch (const NumericalError& e) {
        err << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace tlora
