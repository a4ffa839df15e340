// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cfloat>
#include <cmath>
#include <vector>

#include "spark/recovery.hpp"
#include "test_support.hpp"

using namespace spark;

namespace {

RecoveryStats single(float mu, float sigma, float mu_pruned) {
    return RecoveryStats{Vector::Constant(1, mu), Vector::Constant(1, sigma),
                         Vector::Constant(1, mu_pruned)};
}

struct Instance {
    Matrix keys;
    Vector mean_q;
    SaliencyMatrix w;
    ChannelMask mask;
    PrunedKeyCache cache;
    RecoveryStats stats;
};

Instance make_instance(Prng& prng, Index s, Index d, double lambda) {
    Instance in;
    in.keys = testing::random_matrix(prng, s, d);
    in.mean_q = testing::random_vector(prng, d);
    in.w = saliency(in.mean_q, in.keys);
    in.mask = select_fixed(in.w, lambda);
    in.cache = prune_keys(in.keys, in.mask);
    in.stats = compute_stats(in.w, in.mask);
    return in;
}

}  // namespace

TEST_CASE("sample_score") {
    Prng prng(1);
    CHECK(sample_score(RecoveryDistribution::degenerate, single(1.0f, 1.0f, 0.4f), 0, prng) ==
          0.4f);
    CHECK(sample_score(RecoveryDistribution::normal, single(0.7f, 0.0f, 0.1f), 0, prng) == 0.7f);
    CHECK(sample_score(RecoveryDistribution::exponential, single(0.0f, 0.0f, 0.3f), 0, prng) ==
          0.3f);
    for (int i = 0; i < 1000; ++i) {
        CHECK(sample_score(RecoveryDistribution::normal, single(0.1f, 2.0f, 0.0f), 0, prng) >=
              0.0f);
        CHECK(sample_score(RecoveryDistribution::exponential, single(0.5f, 0.1f, 0.0f), 0, prng) >=
              0.0f);
    }
}

TEST_CASE("sample_score exponential mean tracks mu") {
    Prng prng(2024);
    const RecoveryStats stats = single(1.5f, 0.0f, 0.0f);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        sum += sample_score(RecoveryDistribution::exponential, stats, 0, prng);
    }
    CHECK(sum / n == doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("recover_keys degenerate closed form") {
    PrunedKeyCache cache(2);
    const std::vector<std::uint32_t> idx{0};
    const std::vector<float> val{5.0f};
    cache.append_row(idx, val);
    Vector q(2);
    q << 1.0f, -2.0f;
    Prng prng(0);
    const Matrix k = recover_keys(cache, single(1.0f, 0.5f, 0.4f), q, RecoveryOptions{}, prng);
    CHECK(k(0, 0) == 5.0f);
    CHECK(k(0, 1) == doctest::Approx(0.2f));

    RecoveryOptions signed_opts;
    signed_opts.signed_division = true;
    const Matrix ks = recover_keys(cache, single(1.0f, 0.5f, 0.4f), q, signed_opts, prng);
    CHECK(ks(0, 1) == doctest::Approx(-0.2f));
}

TEST_CASE("recover_keys is the identity when nothing was pruned") {
    Prng prng(6);
    const Instance in = make_instance(prng, 8, 10, 0.0);
    for (auto dist : {RecoveryDistribution::degenerate, RecoveryDistribution::normal,
                      RecoveryDistribution::exponential}) {
        RecoveryOptions opts;
        opts.dist = dist;
        CHECK(recover_keys(in.cache, in.stats, in.mean_q, opts, prng) == in.keys);
    }
}

TEST_CASE("recover_keys keeps retained entries bit-identical") {
    Prng prng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const Instance in = make_instance(prng, 12, 16, 0.75);
        RecoveryOptions opts;
        opts.dist = trial % 3 == 0 ? RecoveryDistribution::normal
                                   : (trial % 3 == 1 ? RecoveryDistribution::exponential
                                                     : RecoveryDistribution::degenerate);
        const Matrix k = recover_keys(in.cache, in.stats, in.mean_q, opts, prng);
        for (Index t = 0; t < 12; ++t) {
            for (Index j = 0; j < 16; ++j) {
                if (in.mask.kept(t, j)) {
                    CHECK(k(t, j) == in.keys(t, j));
                }
            }
        }
    }
}

TEST_CASE("degenerate recovery realizes sign(qbar) mu_pruned") {
    Prng prng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const Instance in = make_instance(prng, 10, 12, 0.5);
        RecoveryOptions opts;
        Prng a(1);
        Prng b(2);
        const Matrix k = recover_keys(in.cache, in.stats, in.mean_q, opts, a);
        CHECK(k == recover_keys(in.cache, in.stats, in.mean_q, opts, b));
        for (Index t = 0; t < 10; ++t) {
            for (Index j = 0; j < 12; ++j) {
                if (in.mask.kept(t, j) || std::abs(in.mean_q[j]) < opts.epsilon) {
                    continue;
                }
                const float target = std::copysign(in.stats.mu_pruned[t], in.mean_q[j]);
                const float realized = in.mean_q[j] * k(t, j);
                CHECK(std::abs(realized - target) <=
                      4.0f * FLT_EPSILON * std::abs(in.stats.mu_pruned[t]));
            }
        }
    }
}

TEST_CASE("stochastic recovery replays its prng stream") {
    Prng prng(14);
    const Instance in = make_instance(prng, 6, 8, 0.5);
    for (auto dist : {RecoveryDistribution::normal, RecoveryDistribution::exponential}) {
        RecoveryOptions opts;
        opts.dist = dist;
        Prng run(77, 3);
        const Matrix k = recover_keys(in.cache, in.stats, in.mean_q, opts, run);

        Prng replay(77, 3);
        for (Index t = 0; t < 6; ++t) {
            for (Index j = 0; j < 8; ++j) {
                if (in.mask.kept(t, j)) {
                    continue;
                }
                const float sample = sample_score(dist, in.stats, t, replay);
                CHECK(std::abs(std::abs(in.mean_q[j] * k(t, j)) - sample) <=
                      1e-6f * std::max(1.0f, sample));
            }
        }
    }
}

TEST_CASE("epsilon bounds recovered magnitudes") {
    PrunedKeyCache cache(3);
    const std::vector<std::uint32_t> idx{0};
    const std::vector<float> val{1.0f};
    cache.append_row(idx, val);
    Vector q(3);
    q << 1.0f, 0.0f, 1e-9f;
    RecoveryOptions opts;
    opts.epsilon = 1e-3f;
    Prng prng(0);
    const Matrix k = recover_keys(cache, single(1.0f, 0.0f, 0.5f), q, opts, prng);
    CHECK(k(0, 1) == doctest::Approx(500.0f));
    CHECK(k(0, 2) == doctest::Approx(500.0f));
    CHECK(std::isfinite(k(0, 1)));

    opts.epsilon = 0.0f;
    CHECK_THROWS_AS(recover_keys(cache, single(1.0f, 0.0f, 0.5f), q, opts, prng),
                    std::invalid_argument);
    CHECK_THROWS_AS(recover_keys(cache, single(1.0f, 0.0f, 0.5f), Vector::Ones(2), RecoveryOptions{},
                                 prng),
                    std::invalid_argument);
}
