// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spark/attention.hpp"
#include "spark/bundle.hpp"
#include "spark/eviction.hpp"
#include "spark/kvstore.hpp"
#include "spark/recovery.hpp"

namespace spark {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class StrategyKind { fixed, top_p, grouped };
enum class EvictionKind { none, snapkv, streaming };

std::string_view to_string(StrategyKind k);
std::string_view to_string(RecoveryDistribution d);
std::string_view to_string(EvictionKind k);
std::string_view to_string(AccountingMode m);

StrategyKind parse_strategy(std::string_view s);
RecoveryDistribution parse_distribution(std::string_view s);
EvictionKind parse_eviction(std::string_view s);
AccountingMode parse_accounting(std::string_view s);

/// One run: a single layer, batch 1, `heads` independent heads.
struct ExperimentConfig {
    Index seq_len = 1024;
    Index head_dim = 128;
    Index heads = 4;
    Index window = 32;
    Index decode_steps = 0;

    double lambda_k = 0.5;
    double lambda_v = 0.0;
    StrategyKind strategy = StrategyKind::fixed;
    double top_p = 0.99;
    Index groups = 4;
    std::vector<double> group_ratios{0.25, 0.5, 0.75, 1.0};

    RecoveryDistribution dist = RecoveryDistribution::degenerate;
    float epsilon = 1e-6f;
    bool signed_division = false;
    bool recover = true;
    bool reprune_aged_tail = false;

    EvictionKind eviction = EvictionKind::none;
    Index kv_budget = 256;
    Index pool_kernel = 7;
    Index sinks = 4;
    Index recent = 252;

    AccountingMode accounting = AccountingMode::values_only;
    std::uint64_t elem_bytes = 2;
    std::uint64_t index_bytes = 1;

    std::uint64_t seed = 0;
    /// Per-channel log-uniform [0.1, 10] scale on synthetic Q/K/V.
    bool channel_scale = true;
    /// Record wall time; off keeps CSV output byte-reproducible.
    bool timing = false;
};

/// Throws ConfigError when any field is out of range.
void validate(const ExperimentConfig& config);

SelectionStrategy key_strategy(const ExperimentConfig& config);
EvictionPolicy eviction_policy(const ExperimentConfig& config);
CompressionConfig compression_config(const ExperimentConfig& config);

/// Inputs for one head. Window queries belong to the last `window` tokens of keys.
struct HeadInputs {
    Matrix window_queries;  // W x D
    Matrix keys;            // S x D
    Matrix values;          // S x D
    Matrix decode_queries;  // steps x D
    Matrix decode_keys;
    Matrix decode_values;
    Vector channel_scale;   // D
};

std::vector<HeadInputs> generate_synthetic(const ExperimentConfig& config);

TensorBundle to_bundle(std::span<const HeadInputs> heads);
/// Reads head<h>.* tensors and overwrites the shape fields of `config` to match.
std::vector<HeadInputs> from_bundle(const TensorBundle& bundle, ExperimentConfig& config);

struct ExperimentMetrics {
    double attn_logit_frobenius_error = 0.0;
    double output_mse = 0.0;
    double output_max_abs = 0.0;
    std::uint64_t kv_bytes_full = 0;
    std::uint64_t kv_bytes_compressed = 0;
    double reduction_fraction = 0.0;
    double achieved_overall_ratio = 0.0;
    double wall_time_ms = 0.0;
};

struct ExperimentRow {
    ExperimentConfig config;
    ExperimentMetrics metrics;
};

/**
 * Evict, prune, recover and decode every head, comparing each attention output
 * (one probe with the last window query, then one per decode step) against an
 * uncompressed run over the same inputs.
 */
ExperimentRow run_experiment(const ExperimentConfig& config, std::span<const HeadInputs> heads);
ExperimentRow run_experiment(const ExperimentConfig& config);

std::vector<std::string> csv_columns();
void emit_csv(std::span<const ExperimentRow> rows, std::ostream& out);
void write_csv(std::span<const ExperimentRow> rows, const std::filesystem::path& path);

}  // namespace spark
