// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

// Benchmark runner: synthesizes (or loads) per-head Q/K/V, compresses the key
// cache, decodes, and writes one CSV row per sweep point.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spark/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;

}  // namespace

int main(int argc, char** argv) {
    using namespace spark;

    ExperimentConfig config;
    std::string strategy = "fixed";
    std::string dist = "degenerate";
    std::string eviction = "none";
    std::string accounting = "values_only";
    std::vector<double> sweep;
    std::string input;
    std::string output;
    std::string dump_bundle;

    CLI::App app{"Query-aware KV-cache channel pruning benchmark"};
    app.option_defaults()->always_capture_default();
    app.add_option("--seq-len", config.seq_len, "Prompt length S");
    app.add_option("--head-dim", config.head_dim, "Channels per head D");
    app.add_option("--heads", config.heads, "Attention heads N");
    app.add_option("--window", config.window, "Observation window W");
    app.add_option("--decode-steps", config.decode_steps, "Decode steps after prefill");
    app.add_option("--lambda-k", config.lambda_k, "Key channel pruning ratio");
    app.add_option("--lambda-v", config.lambda_v, "Value channel pruning ratio");
    app.add_option("--strategy", strategy, "Channel selection")
        ->check(CLI::IsMember({"fixed", "top_p", "grouped"}));
    app.add_option("--top-p", config.top_p, "Cumulative saliency share for top_p");
    app.add_option("--groups", config.groups, "Group count for grouped");
    app.add_option("--group-ratios", config.group_ratios, "Per-group pruning ratios")
        ->delimiter(',');
    app.add_option("--dist", dist, "Recovery distribution")
        ->check(CLI::IsMember({"normal", "exponential", "degenerate"}));
    app.add_option("--eviction", eviction, "Token eviction policy")
        ->check(CLI::IsMember({"none", "snapkv", "streaming"}));
    app.add_option("--kv-budget", config.kv_budget, "SnapKV token budget");
    app.add_option("--pool-kernel", config.pool_kernel, "SnapKV max-pool kernel");
    app.add_option("--sinks", config.sinks, "StreamingLLM sink tokens");
    app.add_option("--recent", config.recent, "StreamingLLM recent tokens");
    app.add_option("--accounting", accounting, "Memory accounting mode")
        ->check(CLI::IsMember({"values_only", "with_overhead"}));
    app.add_option("--elem-bytes", config.elem_bytes, "Bytes per cached element");
    app.add_option("--index-bytes", config.index_bytes, "Bytes per stored channel index");
    app.add_option("--epsilon", config.epsilon, "Floor on |mean query| in recovery");
    app.add_option("--seed", config.seed, "Run seed");
    app.add_option("--input", input, "Tensor bundle with head<h>.* inputs");
    app.add_option("--output", output, "CSV path (stdout when omitted)");
    app.add_option("--sweep", sweep, "Comma-separated lambda-k values")->delimiter(',');
    app.add_option("--dump-bundle", dump_bundle, "Write the run inputs as a tensor bundle");
    app.add_flag("--timing", config.timing, "Record wall_time_ms");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        config.strategy = parse_strategy(strategy);
        config.dist = parse_distribution(dist);
        config.eviction = parse_eviction(eviction);
        config.accounting = parse_accounting(accounting);
        if (app.count("--group-ratios") && !app.count("--groups")) {
            config.groups = static_cast<Index>(config.group_ratios.size());
        }

        std::vector<HeadInputs> heads;
        if (!input.empty()) {
            heads = from_bundle(load_bundle(input), config);
        }
        validate(config);
        if (heads.empty()) {
            heads = generate_synthetic(config);
        }
        if (!dump_bundle.empty()) {
            save_bundle(dump_bundle, to_bundle(heads));
        }

        if (sweep.empty()) {
            sweep.push_back(config.lambda_k);
        }
        std::vector<ExperimentRow> rows;
        for (double lambda : sweep) {
            ExperimentConfig point = config;
            point.lambda_k = lambda;
            rows.push_back(run_experiment(point, heads));
        }
        if (output.empty()) {
            emit_csv(rows, std::cout);
        } else {
            write_csv(rows, output);
        }
    } catch (const BundleError& e) {
        std::cerr << "spark-kv: " << e.what() << '\n';
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "spark-kv: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "spark-kv: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
