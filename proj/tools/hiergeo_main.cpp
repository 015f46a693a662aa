#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"
#include "hiergeo/pipeline.hpp"

using namespace hiergeo;

int main(int argc, char** argv) {
    CLI::App app{"hiergeo: distance-aware hierarchical retrieval pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    int threads = 0;
    app.add_option("--config", config_path, "pipeline config file (TOML)");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--threads", threads, "worker threads (0 = auto)");

    auto* gen = app.add_subcommand("gen", "generate a synthetic campus");
    auto* train_cmd = app.add_subcommand("train", "train the encoder");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate retrieval metrics");
    std::string rerank_mode = "none";
    eval_cmd->add_option("--rerank", rerank_mode,
                         "re-ranking mode: none | standard | msrerank");

    auto* ablate = app.add_subcommand("ablate", "hyper-parameter sweeps");
    std::string sweep;
    ablate->add_option("--sweep", sweep, "tau | lambda1 | single_vs_multi")
        ->required();

    auto* rerank_cmd =
        app.add_subcommand("rerank", "re-rank a stored distance matrix");
    std::string matrix_path, rerank_out = "reranked.csv";
    std::size_t csv_queries = 0;
    rerank_cmd->add_option("--matrix", matrix_path, "HGEO1D binary or CSV")
        ->required();
    rerank_cmd->add_option("--queries", csv_queries,
                           "query row count (CSV input only)");
    rerank_cmd->add_option("--out-file", rerank_out, "output CSV path");

    auto* shift = app.add_subcommand("shift-profile",
                                     "rank-shift diagnostic after re-ranking");
    std::string before_path, after_path;
    shift->add_option("--before", before_path, "original distances CSV");
    shift->add_option("--after", after_path, "re-ranked distances CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        set_num_threads(threads);
        PipelineConfig config;
        if (!config_path.empty()) {
            config = PipelineConfig::from_file(config_path);
        } else {
            config.propagate_seed();
        }
        if (seed >= 0) {
            config.seed = static_cast<std::uint64_t>(seed);
            config.propagate_seed();
        }
        if (!out_dir.empty()) config.out_dir = out_dir;
        config.validate();

        if (gen->parsed()) {
            cmd_gen(config);
        } else if (train_cmd->parsed()) {
            cmd_train(config);
        } else if (eval_cmd->parsed()) {
            cmd_eval(config, parse_rerank_mode(rerank_mode));
        } else if (ablate->parsed()) {
            cmd_ablate(config, sweep);
        } else if (rerank_cmd->parsed()) {
            cmd_rerank_file(config, matrix_path, csv_queries, rerank_out);
        } else if (shift->parsed()) {
            cmd_shift_profile(config, before_path, after_path);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
