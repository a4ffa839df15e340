// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/eviction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spark {

Vector max_pool(const Vector& scores, Index kernel) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("max_pool: kernel must be odd and >= 1");
    }
    const Index half = kernel / 2;
    const Index n = scores.size();
    Vector out(n);
    for (Index t = 0; t < n; ++t) {
        const Index lo = std::max<Index>(0, t - half);
        const Index hi = std::min<Index>(n - 1, t + half);
        out[t] = scores.segment(lo, hi - lo + 1).maxCoeff();
    }
    return out;
}

std::vector<Index> snapkv_lite(const Matrix& window_queries, const Matrix& keys, Index budget,
                               Index kernel) {
    const Index s = keys.rows();
    const Index w = window_queries.rows();
    if (budget < w) {
        throw std::invalid_argument("snapkv_lite: budget smaller than the observation window");
    }
    if (budget > s) {
        throw std::invalid_argument("snapkv_lite: budget larger than the sequence");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("snapkv_lite: pooling kernel must be odd and >= 1");
    }
    if (window_queries.cols() != keys.cols()) {
        throw std::invalid_argument("snapkv_lite: head dim mismatch");
    }
    const Index prefix = s - w;
    std::vector<Index> kept;
    kept.reserve(static_cast<std::size_t>(budget));

    if (prefix > 0) {
        const float scale = 1.0f / std::sqrt(static_cast<float>(keys.cols()));
        Vector votes = Vector::Zero(prefix);
        for (Index r = 0; r < w; ++r) {
            const Vector logits = (keys * window_queries.row(r).transpose()) * scale;
            votes += softmax_row(logits).head(prefix);
        }
        const Vector pooled = max_pool(votes, kernel);
        const auto order = rank_descending(pooled);
        kept.assign(order.begin(), order.begin() + (budget - w));
        std::sort(kept.begin(), kept.end());
    }
    for (Index t = prefix; t < s; ++t) {
        kept.push_back(t);
    }
    return kept;
}

std::vector<Index> streaming_lite(Index tokens, Index sinks, Index recent) {
    if (sinks < 0 || recent < 0 || sinks + recent > tokens) {
        throw std::invalid_argument("streaming_lite: sinks + recent exceeds the sequence");
    }
    std::vector<Index> kept;
    for (Index t = 0; t < tokens; ++t) {
        if (t < sinks || t >= tokens - recent) {
            kept.push_back(t);
        }
    }
    return kept;
}

std::vector<Index> evict(const EvictionPolicy& policy, const Matrix& window_queries,
                         const Matrix& keys) {
    return std::visit(
        [&](const auto& p) -> std::vector<Index> {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, NoEviction>) {
                std::vector<Index> all(static_cast<std::size_t>(keys.rows()));
                std::iota(all.begin(), all.end(), Index{0});
                return all;
            } else if constexpr (std::is_same_v<P, SnapKvLite>) {
                return snapkv_lite(window_queries, keys, p.budget, p.kernel);
            } else {
                return streaming_lite(keys.rows(), p.sinks, p.recent);
            }
        },
        policy);
}

ComposedState compose(std::span<const Index> kept_tokens, const Matrix& window_queries,
                      const Matrix& keys, const Matrix& values, const CompressionConfig& config,
                      Index head_id) {
    if (kept_tokens.empty()) {
        throw std::invalid_argument("compose: eviction kept no tokens");
    }
    const Index s = keys.rows();
    const Index w = window_queries.rows();
    for (std::size_t i = 0; i < kept_tokens.size(); ++i) {
        if (kept_tokens[i] < 0 || kept_tokens[i] >= s ||
            (i > 0 && kept_tokens[i] <= kept_tokens[i - 1])) {
            throw std::invalid_argument("compose: kept indices must be ascending and in range");
        }
    }
    const auto n = static_cast<Index>(kept_tokens.size());
    if (w > 0 && (n < w || kept_tokens[kept_tokens.size() - static_cast<std::size_t>(w)] != s - w)) {
        throw std::invalid_argument("compose: kept set must contain the observation window");
    }
    Matrix k(n, keys.cols());
    Matrix v(n, values.cols());
    for (Index i = 0; i < n; ++i) {
        k.row(i) = keys.row(kept_tokens[static_cast<std::size_t>(i)]);
        v.row(i) = values.row(kept_tokens[static_cast<std::size_t>(i)]);
    }
    return ComposedState{std::vector<Index>(kept_tokens.begin(), kept_tokens.end()), s,
                         AttentionState::prefill(window_queries, k, v, config, head_id)};
}

}  // namespace spark
