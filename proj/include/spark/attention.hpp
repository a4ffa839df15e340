// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spark/kvstore.hpp"
#include "spark/recovery.hpp"
#include "spark/saliency.hpp"

namespace spark {

struct AttentionResult {
    Vector weights;  // softmax(q K^T / sqrt(D)), one entry per cached token
    Vector output;   // weights V
};

AttentionResult attention_full(const Vector& q, const Matrix& keys, const Matrix& values);

struct CompressionConfig {
    SelectionStrategy key_strategy = FixedRatio{0.5};
    double lambda_v = 0.0;
    RecoveryOptions recovery;
    /// false selects the zero-fill ablation: pruned key entries read as 0.
    bool recover = true;
    /// Prune decode-time rows once they fall out of the last `window` tokens.
    bool reprune_aged_tail = false;
    Index window = 32;
};

/**
 * One head's compressed cache: a pruned prefix (packed keys, stats, packed
 * values) followed by a dense tail that starts as the observation window and
 * grows with every decode step.
 */
class AttentionState {
public:
    AttentionState(CompressionConfig config, Vector mean_q, PrunedKeyCache keys,
                   RecoveryStats stats, PrunedValueCache values, bool values_pruned,
                   Matrix tail_keys, Matrix tail_values);

    /// Splits S tokens into a pruned prefix of S - W rows and a dense window of
    /// the last W rows, W = window_queries.rows().
    static AttentionState prefill(const Matrix& window_queries, const Matrix& keys,
                                  const Matrix& values, const CompressionConfig& config,
                                  Index head_id = 0);

    Index head_dim() const { return mean_q_.size(); }
    Index tokens() const { return prefix_tokens() + tail_tokens(); }
    Index prefix_tokens() const { return keys_.tokens(); }
    Index tail_tokens() const { return tail_keys_.rows(); }

    const CompressionConfig& config() const { return config_; }
    const Vector& mean_q() const { return mean_q_; }
    const PrunedKeyCache& key_cache() const { return keys_; }
    const PrunedValueCache& value_cache() const { return values_; }
    const RecoveryStats& stats() const { return stats_; }
    bool values_pruned() const { return values_pruned_; }
    const Matrix& tail_keys() const { return tail_keys_; }
    const Matrix& tail_values() const { return tail_values_; }

    /// Recovered (or zero-filled) prefix keys stacked over the dense tail.
    Matrix materialize_keys(Prng& prng) const;
    /// Prefix values with pruned channels zeroed, stacked over the tail.
    Matrix materialize_values() const;

    void append(const Vector& key, const Vector& value);

    /// Storage description for memory accounting against a baseline of full_tokens.
    CacheLayout layout(Index full_tokens) const;

private:
    void prune_oldest_tail_row();

    CompressionConfig config_;
    Vector mean_q_;
    PrunedKeyCache keys_;
    RecoveryStats stats_;
    PrunedValueCache values_;
    bool values_pruned_ = false;
    Matrix tail_keys_;
    Matrix tail_values_;
};

AttentionResult attention_compressed(const Vector& q, const AttentionState& state, Prng& prng);

/// Appends (key, value) to the dense tail, then attends with `query`.
AttentionResult decode_step(AttentionState& state, const Vector& query, const Vector& key,
                            const Vector& value, Prng& prng);

struct OutputError {
    double mse = 0.0;
    double max_abs = 0.0;
};

OutputError output_error(const Vector& a, const Vector& b);

}  // namespace spark
