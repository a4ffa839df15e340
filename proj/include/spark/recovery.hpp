// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spark/kvstore.hpp"
#include "spark/numerics.hpp"

namespace spark {

/// normal: N(mu, sigma^2) clamped at 0; exponential: mean mu;
/// degenerate: mu_pruned exactly.
enum class RecoveryDistribution { normal, exponential, degenerate };

struct RecoveryOptions {
    RecoveryDistribution dist = RecoveryDistribution::degenerate;
    /// Lower bound on |qbar[j]| in the back-computation.
    float epsilon = 1e-6f;
    /// Divide by signed qbar[j] so the realized product is +w instead of sign(qbar[j]) w.
    bool signed_division = false;
};

/// Draws one plausible saliency score for token t. An exponential request on a
/// row with mu <= 0 falls back to mu_pruned.
float sample_score(RecoveryDistribution dist, const RecoveryStats& stats, Index t, Prng& prng);

/**
 * Rebuilds the dense S x D key matrix: kept positions carry the cached values,
 * each pruned (t, j) gets w / max(|qbar[j]|, epsilon) with one fresh sample w
 * per position, visited row-major.
 */
Matrix recover_keys(const PrunedKeyCache& cache, const RecoveryStats& stats, const Vector& mean_q,
                    const RecoveryOptions& options, Prng& prng);

}  // namespace spark
