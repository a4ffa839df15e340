// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spark {

float sample_score(RecoveryDistribution dist, const RecoveryStats& stats, Index t, Prng& prng) {
    switch (dist) {
        case RecoveryDistribution::degenerate:
            return stats.mu_pruned[t];
        case RecoveryDistribution::normal:
            return std::max(0.0f, sample_normal(prng, stats.mu[t], stats.sigma[t]));
        case RecoveryDistribution::exponential:
            if (!(stats.mu[t] > 0.0f)) {
                return stats.mu_pruned[t];
            }
            return sample_exponential(prng, stats.mu[t]);
    }
    throw std::invalid_argument("sample_score: unknown distribution");
}

Matrix recover_keys(const PrunedKeyCache& cache, const RecoveryStats& stats, const Vector& mean_q,
                    const RecoveryOptions& options, Prng& prng) {
    if (mean_q.size() != cache.head_dim() || stats.tokens() != cache.tokens()) {
        throw std::invalid_argument("recover_keys: cache, stats and query shapes disagree");
    }
    if (!(options.epsilon > 0.0f)) {
        throw std::invalid_argument("recover_keys: epsilon must be > 0");
    }
    const Index d = cache.head_dim();
    Vector divisor(d);
    for (Index j = 0; j < d; ++j) {
        const float magnitude = std::max(std::abs(mean_q[j]), options.epsilon);
        divisor[j] = options.signed_division ? std::copysign(magnitude, mean_q[j]) : magnitude;
    }

    Matrix out(cache.tokens(), d);
    for (Index t = 0; t < cache.tokens(); ++t) {
        const auto idx = cache.indices(t);
        const auto val = cache.values(t);
        std::size_t next = 0;
        for (Index j = 0; j < d; ++j) {
            if (next < idx.size() && idx[next] == static_cast<std::uint32_t>(j)) {
                out(t, j) = val[next++];
            } else {
                out(t, j) = sample_score(options.dist, stats, t, prng) / divisor[j];
            }
        }
    }
    return out;
}

}  // namespace spark
