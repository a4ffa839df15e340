// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "spark/eviction.hpp"
#include "test_support.hpp"

using namespace spark;

namespace {

std::vector<Index> iota_indices(Index n) {
    std::vector<Index> out(static_cast<std::size_t>(n));
    std::iota(out.begin(), out.end(), Index{0});
    return out;
}

/// Vote, pool and sort with plain loops in double precision.
std::vector<Index> snapkv_oracle(const Matrix& qw, const Matrix& k, Index budget, Index kernel) {
    const Index s = k.rows();
    const Index w = qw.rows();
    const Index prefix = s - w;
    std::vector<double> votes(static_cast<std::size_t>(prefix), 0.0);
    for (Index r = 0; r < w; ++r) {
        std::vector<double> logits(static_cast<std::size_t>(s));
        double top = -INFINITY;
        for (Index t = 0; t < s; ++t) {
            double dot = 0.0;
            for (Index j = 0; j < k.cols(); ++j) {
                dot += static_cast<double>(qw(r, j)) * k(t, j);
            }
            logits[static_cast<std::size_t>(t)] = dot / std::sqrt(static_cast<double>(k.cols()));
            top = std::max(top, logits[static_cast<std::size_t>(t)]);
        }
        double z = 0.0;
        for (auto& l : logits) {
            l = std::exp(l - top);
            z += l;
        }
        for (Index t = 0; t < prefix; ++t) {
            votes[static_cast<std::size_t>(t)] += logits[static_cast<std::size_t>(t)] / z;
        }
    }
    std::vector<double> pooled(votes.size());
    const Index half = kernel / 2;
    for (Index t = 0; t < prefix; ++t) {
        double m = -INFINITY;
        for (Index u = std::max<Index>(0, t - half); u <= std::min(prefix - 1, t + half); ++u) {
            m = std::max(m, votes[static_cast<std::size_t>(u)]);
        }
        pooled[static_cast<std::size_t>(t)] = m;
    }
    std::vector<Index> order = iota_indices(prefix);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return pooled[static_cast<std::size_t>(a)] > pooled[static_cast<std::size_t>(b)];
    });
    std::vector<Index> kept(order.begin(), order.begin() + (budget - w));
    std::sort(kept.begin(), kept.end());
    for (Index t = prefix; t < s; ++t) {
        kept.push_back(t);
    }
    return kept;
}

bool strictly_ascending(const std::vector<Index>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace

TEST_CASE("max_pool") {
    Vector v(5);
    v << 1.0f, 5.0f, 2.0f, 0.0f, 3.0f;
    CHECK(max_pool(v, 1) == v);
    Vector expected(5);
    expected << 5.0f, 5.0f, 5.0f, 3.0f, 3.0f;
    CHECK(max_pool(v, 3) == expected);
    CHECK_THROWS_AS(max_pool(v, 2), std::invalid_argument);
    CHECK_THROWS_AS(max_pool(v, 0), std::invalid_argument);
}

TEST_CASE("snapkv_lite basics") {
    Prng prng(1);
    const Matrix qw = testing::random_matrix(prng, 4, 8);
    const Matrix k = testing::random_matrix(prng, 30, 8);
    CHECK(snapkv_lite(qw, k, 30, 7) == iota_indices(30));

    const auto kept = snapkv_lite(qw, k, 12, 7);
    CHECK(kept.size() == 12);
    CHECK(strictly_ascending(kept));
    for (Index t = 26; t < 30; ++t) {
        CHECK(std::find(kept.begin(), kept.end(), t) != kept.end());
    }

    CHECK_THROWS_AS(snapkv_lite(qw, k, 3, 7), std::invalid_argument);
    CHECK_THROWS_AS(snapkv_lite(qw, k, 31, 7), std::invalid_argument);
    CHECK_THROWS_AS(snapkv_lite(qw, k, 12, 4), std::invalid_argument);
}

TEST_CASE("snapkv_lite with kernel 1 keeps the top raw votes") {
    Prng prng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix qw = testing::random_matrix(prng, 3, 6);
        const Matrix k = testing::random_matrix(prng, 25, 6, 2.0f);
        CHECK(snapkv_lite(qw, k, 10, 1) == snapkv_oracle(qw, k, 10, 1));
    }
}

TEST_CASE("snapkv_lite matches the naive oracle") {
    Prng prng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Index s = testing::uniform_index(prng, 4, 80);
        const Index w = testing::uniform_index(prng, 1, std::min<Index>(s, 8));
        const Index budget = testing::uniform_index(prng, w, s);
        const Index kernel = 2 * testing::uniform_index(prng, 0, 4) + 1;
        const Matrix qw = testing::random_matrix(prng, w, 8);
        const Matrix k = testing::random_matrix(prng, s, 8, 1.5f);
        CHECK(snapkv_lite(qw, k, budget, kernel) == snapkv_oracle(qw, k, budget, kernel));
    }
}

TEST_CASE("snapkv_lite on uniform keys keeps the lowest prefix tokens") {
    Prng prng(4);
    const Matrix qw = testing::random_matrix(prng, 2, 4);
    const Matrix k = Matrix::Ones(20, 4);
    const std::vector<Index> expected{0, 1, 2, 3, 4, 5, 18, 19};
    CHECK(snapkv_lite(qw, k, 8, 7) == expected);
}

TEST_CASE("streaming_lite") {
    CHECK(streaming_lite(10, 2, 3) == std::vector<Index>{0, 1, 7, 8, 9});
    CHECK(streaming_lite(6, 0, 6) == iota_indices(6));
    CHECK(streaming_lite(6, 3, 3) == iota_indices(6));
    CHECK_THROWS_AS(streaming_lite(6, 4, 3), std::invalid_argument);

    Prng prng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Index s = testing::uniform_index(prng, 1, 100);
        const Index sinks = testing::uniform_index(prng, 0, s);
        const Index recent = testing::uniform_index(prng, 0, s - sinks);
        const auto kept = streaming_lite(s, sinks, recent);
        std::set<Index> expected;
        for (Index t = 0; t < sinks; ++t) {
            expected.insert(t);
        }
        for (Index t = s - recent; t < s; ++t) {
            expected.insert(t);
        }
        const Index overlap = std::max<Index>(0, sinks - (s - recent));
        CHECK(static_cast<Index>(kept.size()) == sinks + recent - overlap);
        CHECK(std::vector<Index>(expected.begin(), expected.end()) == kept);
    }
}

TEST_CASE("evict dispatches on the policy") {
    Prng prng(6);
    const Matrix qw = testing::random_matrix(prng, 2, 4);
    const Matrix k = testing::random_matrix(prng, 12, 4);
    CHECK(evict(NoEviction{}, qw, k) == iota_indices(12));
    CHECK(evict(SnapKvLite{6, 3}, qw, k) == snapkv_lite(qw, k, 6, 3));
    CHECK(evict(StreamingLite{2, 4}, qw, k) == streaming_lite(12, 2, 4));
}

TEST_CASE("compose without eviction equals plain prefill") {
    Prng prng(7);
    const Matrix qw = testing::random_matrix(prng, 4, 8);
    const Matrix k = testing::random_matrix(prng, 24, 8);
    const Matrix v = testing::random_matrix(prng, 24, 8);
    CompressionConfig config;
    config.window = 4;

    const auto all = iota_indices(24);
    const ComposedState composed = compose(all, qw, k, v, config);
    const AttentionState plain = AttentionState::prefill(qw, k, v, config);
    CHECK(composed.state.key_cache() == plain.key_cache());
    CHECK(composed.state.stats().mu_pruned == plain.stats().mu_pruned);
    CHECK(composed.state.tail_keys() == plain.tail_keys());

    config.key_strategy = FixedRatio{0.0};
    const ComposedState dense = compose(all, qw, k, v, config);
    Prng unused(0);
    CHECK(dense.state.materialize_keys(unused) == k);
    CHECK(dense.state.materialize_values() == v);
}

TEST_CASE("compose gathers survivors and accounts against the original length") {
    Prng prng(8);
    const Index s = 40;
    const Index w = 4;
    const Index d = 16;
    const Matrix qw = testing::random_matrix(prng, w, d);
    const Matrix k = testing::random_matrix(prng, s, d);
    const Matrix v = testing::random_matrix(prng, s, d);
    CompressionConfig config;
    config.window = w;
    config.key_strategy = FixedRatio{0.75};

    const auto kept = snapkv_lite(qw, k, 16, 7);
    const ComposedState composed = compose(kept, qw, k, v, config);
    CHECK(composed.original_tokens == s);
    CHECK(composed.state.tokens() == 16);
    CHECK(composed.state.materialize_values().row(0) == v.row(kept[0]));

    const MemoryReport r = memory_report(composed.layout(), ByteWidths{}, AccountingMode::values_only);
    CHECK(r.full_bytes == 2u * s * d * 2u);
    // Eviction-only bytes with the key half scaled by the kept channel fraction.
    const std::uint64_t evicted_keys = 12u * d * 2u;
    const std::uint64_t expected = evicted_keys / 4u + w * d * 2u + 16u * d * 2u;
    CHECK(r.compressed_bytes == expected);
}

TEST_CASE("compose validates the kept set") {
    Prng prng(9);
    const Matrix qw = testing::random_matrix(prng, 2, 4);
    const Matrix k = testing::random_matrix(prng, 8, 4);
    const Matrix v = testing::random_matrix(prng, 8, 4);
    CompressionConfig config;
    config.window = 2;
    const std::vector<Index> empty;
    CHECK_THROWS_AS(compose(empty, qw, k, v, config), std::invalid_argument);
    const std::vector<Index> unsorted{3, 1, 6, 7};
    CHECK_THROWS_AS(compose(unsorted, qw, k, v, config), std::invalid_argument);
    const std::vector<Index> no_window{0, 1, 2, 7};
    CHECK_THROWS_AS(compose(no_window, qw, k, v, config), std::invalid_argument);
    const std::vector<Index> out_of_range{0, 6, 7, 8};
    CHECK_THROWS_AS(compose(out_of_range, qw, k, v, config), std::invalid_argument);
}
