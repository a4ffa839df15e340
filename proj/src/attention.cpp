// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace spark {

namespace {

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), std::max(top.cols(), bottom.cols()));
    if (top.rows() > 0) {
        out.topRows(top.rows()) = top;
    }
    if (bottom.rows() > 0) {
        out.bottomRows(bottom.rows()) = bottom;
    }
    return out;
}

template <typename Tag>
void append_packed(PackedCache<Tag>& cache, const Matrix& row, const ChannelMask& mask) {
    const auto packed = PackedCache<Tag>::gather(row, mask);
    cache.append_row(packed.indices(0), packed.values(0));
}

}  // namespace

AttentionResult attention_full(const Vector& q, const Matrix& keys, const Matrix& values) {
    if (keys.rows() == 0) {
        throw std::invalid_argument("attention_full: empty key cache");
    }
    if (q.size() != keys.cols() || keys.rows() != values.rows()) {
        throw std::invalid_argument("attention_full: shape mismatch");
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(keys.cols()));
    const Vector logits = (keys * q) * scale;
    AttentionResult r;
    r.weights = softmax_row(logits);
    r.output = values.transpose() * r.weights;
    return r;
}

AttentionState::AttentionState(CompressionConfig config, Vector mean_q, PrunedKeyCache keys,
                               RecoveryStats stats, PrunedValueCache values, bool values_pruned,
                               Matrix tail_keys, Matrix tail_values)
    : config_(std::move(config)),
      mean_q_(std::move(mean_q)),
      keys_(std::move(keys)),
      stats_(std::move(stats)),
      values_(std::move(values)),
      values_pruned_(values_pruned),
      tail_keys_(std::move(tail_keys)),
      tail_values_(std::move(tail_values)) {
    const Index d = mean_q_.size();
    if (keys_.tokens() != values_.tokens() || tail_keys_.rows() != tail_values_.rows()) {
        throw std::invalid_argument("AttentionState: key and value token counts differ");
    }
    if (stats_.tokens() != keys_.tokens()) {
        throw std::invalid_argument("AttentionState: stats do not cover the pruned prefix");
    }
    if ((keys_.tokens() > 0 && (keys_.head_dim() != d || values_.head_dim() != d)) ||
        (tail_keys_.rows() > 0 && (tail_keys_.cols() != d || tail_values_.cols() != d))) {
        throw std::invalid_argument("AttentionState: head dim mismatch");
    }
    if (tail_keys_.rows() == 0) {
        tail_keys_.resize(0, d);
        tail_values_.resize(0, d);
    }
}

AttentionState AttentionState::prefill(const Matrix& window_queries, const Matrix& keys,
                                       const Matrix& values, const CompressionConfig& config,
                                       Index head_id) {
    const Index s = keys.rows();
    const Index w = window_queries.rows();
    if (keys.rows() != values.rows() || keys.cols() != values.cols() ||
        window_queries.cols() != keys.cols()) {
        throw std::invalid_argument("prefill: Q/K/V shapes disagree");
    }
    if (w > s) {
        throw std::invalid_argument("prefill: observation window longer than the sequence");
    }
    validate(config.key_strategy);

    const Vector mean_q = mean_query(window_queries);
    const Index prefix = s - w;
    const Matrix prefix_keys = keys.topRows(prefix);
    const Matrix prefix_values = values.topRows(prefix);

    const SaliencyMatrix scores = saliency(mean_q, prefix_keys, head_id);
    const ChannelMask mask = select_channels(scores, config.key_strategy);
    const bool values_pruned = config.lambda_v > 0.0;
    const ChannelMask vmask = values_pruned ? value_mask(prefix_values, config.lambda_v)
                                            : ChannelMask::full(prefix, keys.cols());

    return AttentionState(config, mean_q, prune_keys(prefix_keys, mask),
                          compute_stats(scores, mask), PrunedValueCache::gather(prefix_values, vmask),
                          values_pruned, keys.bottomRows(w), values.bottomRows(w));
}

Matrix AttentionState::materialize_keys(Prng& prng) const {
    Matrix prefix;
    if (config_.recover) {
        prefix = recover_keys(keys_, stats_, mean_q_, config_.recovery, prng);
    } else {
        prefix = keys_.to_dense();
    }
    return stack_rows(prefix, tail_keys_);
}

Matrix AttentionState::materialize_values() const {
    return stack_rows(values_.to_dense(), tail_values_);
}

void AttentionState::append(const Vector& key, const Vector& value) {
    if (key.size() != head_dim() || value.size() != head_dim()) {
        throw std::invalid_argument("append: vector length does not match head dim");
    }
    tail_keys_.conservativeResize(tail_keys_.rows() + 1, head_dim());
    tail_values_.conservativeResize(tail_values_.rows() + 1, head_dim());
    tail_keys_.bottomRows(1) = key.transpose();
    tail_values_.bottomRows(1) = value.transpose();
    if (config_.reprune_aged_tail) {
        while (tail_keys_.rows() > config_.window) {
            prune_oldest_tail_row();
        }
    }
}

void AttentionState::prune_oldest_tail_row() {
    const Matrix key_row = tail_keys_.topRows(1);
    const Matrix value_row = tail_values_.topRows(1);

    const SaliencyMatrix scores = saliency(mean_q_, key_row);
    const ChannelMask mask = select_channels(scores, config_.key_strategy);
    append_packed(keys_, key_row, mask);
    stats_.append(compute_stats(scores, mask));
    append_packed(values_, value_row,
                  values_pruned_ ? value_mask(value_row, config_.lambda_v)
                                 : ChannelMask::full(1, head_dim()));

    const Index rest = tail_keys_.rows() - 1;
    tail_keys_ = Matrix(tail_keys_.bottomRows(rest));
    tail_values_ = Matrix(tail_values_.bottomRows(rest));
}

CacheLayout AttentionState::layout(Index full_tokens) const {
    CacheLayout out;
    out.full_tokens = full_tokens;
    out.head_dim = head_dim();
    out.packed_key_rows = keys_.kept_counts();
    out.dense_key_rows = tail_tokens();
    if (values_pruned_) {
        out.packed_value_rows = values_.kept_counts();
        out.dense_value_rows = tail_tokens();
    } else {
        out.dense_value_rows = tokens();
    }
    return out;
}

AttentionResult attention_compressed(const Vector& q, const AttentionState& state, Prng& prng) {
    return attention_full(q, state.materialize_keys(prng), state.materialize_values());
}

AttentionResult decode_step(AttentionState& state, const Vector& query, const Vector& key,
                            const Vector& value, Prng& prng) {
    state.append(key, value);
    return attention_compressed(query, state, prng);
}

OutputError output_error(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("output_error: length mismatch");
    }
    OutputError e;
    if (a.size() == 0) {
        return e;
    }
    const auto diff = (a.cast<double>() - b.cast<double>()).array();
    e.mse = diff.square().mean();
    e.max_abs = diff.abs().maxCoeff();
    return e;
}

}  // namespace spark
