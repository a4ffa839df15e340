// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace spark {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw ConfigError(message);
    }
}

std::string head_name(std::size_t h, std::string_view field) {
    return fmt::format("head{}.{}", h, field);
}

void fill_scaled_normal(Matrix& m, const Vector& scale, Prng& prng) {
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            m(r, c) = sample_normal(prng, 0.0f, 1.0f) * scale[c];
        }
    }
}

void require_finite_metric(double v, std::string_view name) {
    if (!std::isfinite(v)) {
        throw std::runtime_error(fmt::format("run_experiment: metric {} is not finite", name));
    }
}

std::string fmt_float(double v) {
    return fmt::format("{:.6g}", v);
}

}  // namespace

std::string_view to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::fixed: return "fixed";
        case StrategyKind::top_p: return "top_p";
        case StrategyKind::grouped: return "grouped";
    }
    return "?";
}

std::string_view to_string(RecoveryDistribution d) {
    switch (d) {
        case RecoveryDistribution::normal: return "normal";
        case RecoveryDistribution::exponential: return "exponential";
        case RecoveryDistribution::degenerate: return "degenerate";
    }
    return "?";
}

std::string_view to_string(EvictionKind k) {
    switch (k) {
        case EvictionKind::none: return "none";
        case EvictionKind::snapkv: return "snapkv";
        case EvictionKind::streaming: return "streaming";
    }
    return "?";
}

std::string_view to_string(AccountingMode m) {
    switch (m) {
        case AccountingMode::values_only: return "values_only";
        case AccountingMode::with_overhead: return "with_overhead";
    }
    return "?";
}

StrategyKind parse_strategy(std::string_view s) {
    if (s == "fixed") return StrategyKind::fixed;
    if (s == "top_p") return StrategyKind::top_p;
    if (s == "grouped") return StrategyKind::grouped;
    throw ConfigError(fmt::format("unknown strategy '{}'", s));
}

RecoveryDistribution parse_distribution(std::string_view s) {
    if (s == "normal") return RecoveryDistribution::normal;
    if (s == "exponential") return RecoveryDistribution::exponential;
    if (s == "degenerate") return RecoveryDistribution::degenerate;
    throw ConfigError(fmt::format("unknown distribution '{}'", s));
}

EvictionKind parse_eviction(std::string_view s) {
    if (s == "none") return EvictionKind::none;
    if (s == "snapkv") return EvictionKind::snapkv;
    if (s == "streaming") return EvictionKind::streaming;
    throw ConfigError(fmt::format("unknown eviction policy '{}'", s));
}

AccountingMode parse_accounting(std::string_view s) {
    if (s == "values_only") return AccountingMode::values_only;
    if (s == "with_overhead") return AccountingMode::with_overhead;
    throw ConfigError(fmt::format("unknown accounting mode '{}'", s));
}

void validate(const ExperimentConfig& c) {
    require(c.seq_len >= 1, "seq-len must be >= 1");
    require(c.head_dim >= 1, "head-dim must be >= 1");
    require(c.heads >= 1, "heads must be >= 1");
    require(c.window >= 1 && c.window <= c.seq_len, "window must lie in [1, seq-len]");
    require(c.decode_steps >= 0, "decode-steps must be >= 0");
    require(c.lambda_v >= 0.0 && c.lambda_v < 1.0, "lambda-v must lie in [0, 1)");
    if (c.lambda_v > 0.0) {
        require(retained_channels(c.lambda_v, c.head_dim) >= 1, "lambda-v leaves no value channel");
    }
    try {
        validate(key_strategy(c));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    switch (c.strategy) {
        case StrategyKind::fixed:
            require(retained_channels(c.lambda_k, c.head_dim) >= 1,
                    "lambda-k leaves no key channel");
            break;
        case StrategyKind::grouped:
            require(c.groups <= c.head_dim, "groups must not exceed head-dim");
            break;
        case StrategyKind::top_p:
            break;
    }
    require(c.epsilon > 0.0f, "epsilon must be > 0");
    require(c.elem_bytes >= 1, "elem-bytes must be >= 1");
    switch (c.eviction) {
        case EvictionKind::snapkv:
            require(c.kv_budget >= c.window && c.kv_budget <= c.seq_len,
                    "kv-budget must lie in [window, seq-len]");
            require(c.pool_kernel >= 1 && c.pool_kernel % 2 == 1, "pool-kernel must be odd and >= 1");
            break;
        case EvictionKind::streaming:
            require(c.sinks >= 0 && c.recent >= c.window, "recent must cover the window");
            require(c.sinks + c.recent <= c.seq_len, "sinks + recent must not exceed seq-len");
            break;
        case EvictionKind::none:
            break;
    }
}

SelectionStrategy key_strategy(const ExperimentConfig& c) {
    switch (c.strategy) {
        case StrategyKind::fixed: return FixedRatio{c.lambda_k};
        case StrategyKind::top_p: return TopP{c.top_p};
        case StrategyKind::grouped: return Grouped{c.groups, c.group_ratios};
    }
    throw ConfigError("unknown strategy");
}

EvictionPolicy eviction_policy(const ExperimentConfig& c) {
    switch (c.eviction) {
        case EvictionKind::none: return NoEviction{};
        case EvictionKind::snapkv: return SnapKvLite{c.kv_budget, c.pool_kernel};
        case EvictionKind::streaming: return StreamingLite{c.sinks, c.recent};
    }
    throw ConfigError("unknown eviction policy");
}

CompressionConfig compression_config(const ExperimentConfig& c) {
    CompressionConfig out;
    out.key_strategy = key_strategy(c);
    out.lambda_v = c.lambda_v;
    out.recovery = RecoveryOptions{c.dist, c.epsilon, c.signed_division};
    out.recover = c.recover;
    out.reprune_aged_tail = c.reprune_aged_tail;
    out.window = c.window;
    return out;
}

std::vector<HeadInputs> generate_synthetic(const ExperimentConfig& c) {
    validate(c);
    const Index d = c.head_dim;
    std::vector<HeadInputs> heads;
    heads.reserve(static_cast<std::size_t>(c.heads));
    for (Index h = 0; h < c.heads; ++h) {
        Prng prng(c.seed, static_cast<std::uint64_t>(2 * h));
        HeadInputs in;
        in.channel_scale = Vector::Ones(d);
        if (c.channel_scale) {
            const double lo = std::log(0.1);
            const double hi = std::log(10.0);
            for (Index j = 0; j < d; ++j) {
                in.channel_scale[j] = static_cast<float>(std::exp(lo + (hi - lo) * prng.uniform()));
            }
        }
        in.window_queries.resize(c.window, d);
        in.keys.resize(c.seq_len, d);
        in.values.resize(c.seq_len, d);
        in.decode_queries.resize(c.decode_steps, d);
        in.decode_keys.resize(c.decode_steps, d);
        in.decode_values.resize(c.decode_steps, d);
        for (Matrix* m : {&in.window_queries, &in.keys, &in.values, &in.decode_queries,
                          &in.decode_keys, &in.decode_values}) {
            fill_scaled_normal(*m, in.channel_scale, prng);
        }
        heads.push_back(std::move(in));
    }
    return heads;
}

TensorBundle to_bundle(std::span<const HeadInputs> heads) {
    TensorBundle out;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const auto& in = heads[h];
        out.push_back(make_tensor(head_name(h, "window_queries"), in.window_queries));
        out.push_back(make_tensor(head_name(h, "keys"), in.keys));
        out.push_back(make_tensor(head_name(h, "values"), in.values));
        out.push_back(make_tensor(head_name(h, "decode_queries"), in.decode_queries));
        out.push_back(make_tensor(head_name(h, "decode_keys"), in.decode_keys));
        out.push_back(make_tensor(head_name(h, "decode_values"), in.decode_values));
        out.push_back(make_tensor(head_name(h, "channel_scale"), in.channel_scale));
    }
    return out;
}

std::vector<HeadInputs> from_bundle(const TensorBundle& bundle, ExperimentConfig& config) {
    std::vector<HeadInputs> heads;
    for (std::size_t h = 0; has_tensor(bundle, head_name(h, "keys")); ++h) {
        HeadInputs in;
        in.window_queries = to_matrix(find_tensor(bundle, head_name(h, "window_queries")));
        in.keys = to_matrix(find_tensor(bundle, head_name(h, "keys")));
        in.values = to_matrix(find_tensor(bundle, head_name(h, "values")));
        in.decode_queries = to_matrix(find_tensor(bundle, head_name(h, "decode_queries")));
        in.decode_keys = to_matrix(find_tensor(bundle, head_name(h, "decode_keys")));
        in.decode_values = to_matrix(find_tensor(bundle, head_name(h, "decode_values")));
        in.channel_scale = has_tensor(bundle, head_name(h, "channel_scale"))
                               ? to_vector(find_tensor(bundle, head_name(h, "channel_scale")))
                               : Vector::Ones(in.keys.cols());
        heads.push_back(std::move(in));
    }
    if (heads.empty()) {
        throw BundleError(BundleErrc::bad_header, "bundle holds no head0.keys tensor");
    }
    const auto& first = heads.front();
    for (const auto& in : heads) {
        const Index d = first.keys.cols();
        const bool ok = in.keys.rows() == first.keys.rows() && in.keys.cols() == d &&
                        in.values.rows() == in.keys.rows() && in.values.cols() == d &&
                        in.window_queries.rows() == first.window_queries.rows() &&
                        in.window_queries.cols() == d &&
                        in.decode_queries.rows() == first.decode_queries.rows() &&
                        in.decode_keys.rows() == in.decode_queries.rows() &&
                        in.decode_values.rows() == in.decode_queries.rows() &&
                        (in.decode_queries.rows() == 0 ||
                         (in.decode_queries.cols() == d && in.decode_keys.cols() == d &&
                          in.decode_values.cols() == d));
        if (!ok) {
            throw BundleError(BundleErrc::inconsistent_layout, "head tensors disagree in shape");
        }
        require_finite(in.keys, "bundle keys");
        require_finite(in.values, "bundle values");
        require_finite(in.window_queries, "bundle window queries");
    }
    config.heads = static_cast<Index>(heads.size());
    config.seq_len = first.keys.rows();
    config.head_dim = first.keys.cols();
    config.window = first.window_queries.rows();
    config.decode_steps = first.decode_queries.rows();
    return heads;
}

ExperimentRow run_experiment(const ExperimentConfig& config, std::span<const HeadInputs> heads) {
    validate(config);
    if (static_cast<Index>(heads.size()) != config.heads) {
        throw ConfigError("run_experiment: head count does not match the inputs");
    }
    const auto started = std::chrono::steady_clock::now();
    const CompressionConfig compression = compression_config(config);
    const EvictionPolicy policy = eviction_policy(config);
    const ByteWidths widths{config.elem_bytes, config.index_bytes};

    double logit_err_sq = 0.0;
    double mse_sum = 0.0;
    double max_abs = 0.0;
    std::size_t outputs = 0;
    Index kept_entries = 0;
    Index cache_entries = 0;
    std::vector<MemoryReport> memory;

    for (std::size_t h = 0; h < heads.size(); ++h) {
        const HeadInputs& in = heads[h];
        const Index w = in.window_queries.rows();
        const Index d = in.keys.cols();

        const auto kept = evict(policy, in.window_queries, in.keys);
        ComposedState composed =
            compose(kept, in.window_queries, in.keys, in.values, compression, static_cast<Index>(h));
        AttentionState& state = composed.state;

        Matrix surviving_prefix(state.prefix_tokens(), d);
        for (Index i = 0; i < state.prefix_tokens(); ++i) {
            surviving_prefix.row(i) = in.keys.row(kept[static_cast<std::size_t>(i)]);
        }
        const double logit_err =
            error_exact(in.window_queries, surviving_prefix, state.key_cache().mask());
        logit_err_sq += logit_err * logit_err;
        kept_entries += state.key_cache().total_kept() + state.tail_tokens() * d;
        cache_entries += state.tokens() * d;
        memory.push_back(memory_report(composed.layout(), widths, config.accounting));

        Prng prng(config.seed, static_cast<std::uint64_t>(2 * h + 1));
        Matrix ref_keys = in.keys;
        Matrix ref_values = in.values;
        auto accumulate = [&](const Vector& compressed, const Vector& reference) {
            const OutputError e = output_error(compressed, reference);
            mse_sum += e.mse;
            max_abs = std::max(max_abs, e.max_abs);
            ++outputs;
        };

        const Vector probe = in.window_queries.row(w - 1).transpose();
        accumulate(attention_compressed(probe, state, prng).output,
                   attention_full(probe, ref_keys, ref_values).output);

        for (Index step = 0; step < in.decode_queries.rows(); ++step) {
            const Vector q = in.decode_queries.row(step).transpose();
            const Vector k = in.decode_keys.row(step).transpose();
            const Vector v = in.decode_values.row(step).transpose();
            ref_keys.conservativeResize(ref_keys.rows() + 1, d);
            ref_values.conservativeResize(ref_values.rows() + 1, d);
            ref_keys.bottomRows(1) = k.transpose();
            ref_values.bottomRows(1) = v.transpose();
            accumulate(decode_step(state, q, k, v, prng).output,
                       attention_full(q, ref_keys, ref_values).output);
        }
    }

    const MemoryReport total = combine(memory);
    ExperimentRow row{config, {}};
    ExperimentMetrics& m = row.metrics;
    m.attn_logit_frobenius_error = std::sqrt(logit_err_sq);
    m.output_mse = outputs == 0 ? 0.0 : mse_sum / static_cast<double>(outputs);
    m.output_max_abs = max_abs;
    m.kv_bytes_full = total.full_bytes;
    m.kv_bytes_compressed = total.compressed_total();
    m.reduction_fraction = total.reduction_fraction;
    m.achieved_overall_ratio =
        cache_entries == 0 ? 0.0
                           : 1.0 - static_cast<double>(kept_entries) /
                                       static_cast<double>(cache_entries);
    if (config.timing) {
        m.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    }
    require_finite_metric(m.attn_logit_frobenius_error, "attn_logit_frobenius_error");
    require_finite_metric(m.output_mse, "output_mse");
    require_finite_metric(m.output_max_abs, "output_max_abs");
    require_finite_metric(m.reduction_fraction, "reduction_fraction");
    return row;
}

ExperimentRow run_experiment(const ExperimentConfig& config) {
    const auto heads = generate_synthetic(config);
    return run_experiment(config, heads);
}

std::vector<std::string> csv_columns() {
    return {"seq_len",        "head_dim",
            "heads",          "window",
            "decode_steps",   "lambda_k",
            "lambda_v",       "strategy",
            "top_p",          "groups",
            "group_ratios",   "dist",
            "eviction",       "kv_budget",
            "pool_kernel",    "sinks",
            "recent",         "accounting",
            "elem_bytes",     "index_bytes",
            "epsilon",        "seed",
            "attn_logit_frobenius_error", "output_mse",
            "output_max_abs", "kv_bytes_full",
            "kv_bytes_compressed", "reduction_fraction",
            "achieved_overall_ratio", "wall_time_ms"};
}

void emit_csv(std::span<const ExperimentRow> rows, std::ostream& out) {
    if (rows.empty()) {
        throw std::invalid_argument("emit_csv: no rows");
    }
    const auto columns = csv_columns();
    out << fmt::format("{}\n", fmt::join(columns, ","));
    for (const auto& row : rows) {
        const ExperimentConfig& c = row.config;
        const ExperimentMetrics& m = row.metrics;
        std::vector<std::string> ratios;
        for (double r : c.group_ratios) {
            ratios.push_back(fmt_float(r));
        }
        const std::vector<std::string> fields{
            std::to_string(c.seq_len),
            std::to_string(c.head_dim),
            std::to_string(c.heads),
            std::to_string(c.window),
            std::to_string(c.decode_steps),
            fmt_float(c.lambda_k),
            fmt_float(c.lambda_v),
            std::string(to_string(c.strategy)),
            fmt_float(c.top_p),
            std::to_string(c.groups),
            fmt::format("{}", fmt::join(ratios, ";")),
            std::string(to_string(c.dist)),
            std::string(to_string(c.eviction)),
            std::to_string(c.kv_budget),
            std::to_string(c.pool_kernel),
            std::to_string(c.sinks),
            std::to_string(c.recent),
            std::string(to_string(c.accounting)),
            std::to_string(c.elem_bytes),
            std::to_string(c.index_bytes),
            fmt_float(c.epsilon),
            std::to_string(c.seed),
            fmt_float(m.attn_logit_frobenius_error),
            fmt_float(m.output_mse),
            fmt_float(m.output_max_abs),
            std::to_string(m.kv_bytes_full),
            std::to_string(m.kv_bytes_compressed),
            fmt_float(m.reduction_fraction),
            fmt_float(m.achieved_overall_ratio),
            fmt_float(m.wall_time_ms),
        };
        out << fmt::format("{}\n", fmt::join(fields, ","));
    }
}

void write_csv(std::span<const ExperimentRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    emit_csv(rows, out);
    out.flush();
    if (!out) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

}  // namespace spark
