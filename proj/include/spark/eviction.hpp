// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <variant>
#include <vector>

#include "spark/attention.hpp"

namespace spark {

struct NoEviction {};

/// Window-voted token eviction: keep the budget - window best pooled prefix
/// tokens plus the whole observation window.
struct SnapKvLite {
    Index budget = 0;
    Index kernel = 7;
};

/// Attention sinks plus a recent window.
struct StreamingLite {
    Index sinks = 4;
    Index recent = 0;
};

using EvictionPolicy = std::variant<NoEviction, SnapKvLite, StreamingLite>;

/// Kept token indices (ascending). The window is the last window_queries.rows() tokens.
std::vector<Index> snapkv_lite(const Matrix& window_queries, const Matrix& keys, Index budget,
                               Index kernel);

/// [0, sinks) union [S - recent, S), ascending and duplicate-free.
std::vector<Index> streaming_lite(Index tokens, Index sinks, Index recent);

std::vector<Index> evict(const EvictionPolicy& policy, const Matrix& window_queries,
                         const Matrix& keys);

/// Centered max-pool of width `kernel` (odd); out-of-range neighbours are ignored.
Vector max_pool(const Vector& scores, Index kernel);

struct ComposedState {
    std::vector<Index> kept_tokens;
    Index original_tokens = 0;
    AttentionState state;

    /// Memory accounted against the uncompressed cache before eviction.
    CacheLayout layout() const { return state.layout(original_tokens); }
};

/// Gathers the surviving K/V rows, then runs channel pruning over the survivors.
/// The kept set must contain the observation window (the last W tokens).
ComposedState compose(std::span<const Index> kept_tokens, const Matrix& window_queries,
                      const Matrix& keys, const Matrix& values, const CompressionConfig& config,
                      Index head_id = 0);

}  // namespace spark
