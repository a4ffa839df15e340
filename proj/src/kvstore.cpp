// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/kvstore.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spark {

template <typename Tag>
PackedCache<Tag> PackedCache<Tag>::gather(const Matrix& dense, const ChannelMask& mask,
                                          bool allow_empty_rows) {
    if (mask.tokens() != dense.rows() || mask.channels() != dense.cols()) {
        throw std::invalid_argument("prune: mask shape does not match the cache");
    }
    PackedCache out(dense.cols());
    out.row_ptr_.reserve(static_cast<std::size_t>(dense.rows()) + 1);
    out.indices_.reserve(static_cast<std::size_t>(mask.total_kept()));
    out.values_.reserve(static_cast<std::size_t>(mask.total_kept()));
    for (Index t = 0; t < dense.rows(); ++t) {
        if (!allow_empty_rows && mask.kept_count()[static_cast<std::size_t>(t)] == 0) {
            throw std::invalid_argument("prune: token row keeps no channel");
        }
        for (Index j = 0; j < dense.cols(); ++j) {
            if (mask.kept(t, j)) {
                out.indices_.push_back(static_cast<std::uint32_t>(j));
                out.values_.push_back(dense(t, j));
            }
        }
        out.row_ptr_.push_back(out.indices_.size());
    }
    return out;
}

template <typename Tag>
std::vector<Index> PackedCache<Tag>::kept_counts() const {
    std::vector<Index> out(static_cast<std::size_t>(tokens()));
    for (Index t = 0; t < tokens(); ++t) {
        out[static_cast<std::size_t>(t)] = kept(t);
    }
    return out;
}

template <typename Tag>
std::span<const std::uint32_t> PackedCache<Tag>::indices(Index t) const {
    const auto begin = row_ptr_[static_cast<std::size_t>(t)];
    return {indices_.data() + begin, static_cast<std::size_t>(kept(t))};
}

template <typename Tag>
std::span<const float> PackedCache<Tag>::values(Index t) const {
    const auto begin = row_ptr_[static_cast<std::size_t>(t)];
    return {values_.data() + begin, static_cast<std::size_t>(kept(t))};
}

template <typename Tag>
void PackedCache<Tag>::append_row(std::span<const std::uint32_t> indices,
                                  std::span<const float> values) {
    if (indices.size() != values.size()) {
        throw std::invalid_argument("append_row: index and value counts differ");
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= static_cast<std::uint32_t>(head_dim_) ||
            (i > 0 && indices[i] <= indices[i - 1])) {
            throw std::invalid_argument("append_row: indices must be ascending and < head_dim");
        }
    }
    indices_.insert(indices_.end(), indices.begin(), indices.end());
    values_.insert(values_.end(), values.begin(), values.end());
    row_ptr_.push_back(indices_.size());
}

template <typename Tag>
Matrix PackedCache<Tag>::to_dense() const {
    Matrix out = Matrix::Zero(tokens(), head_dim_);
    for (Index t = 0; t < tokens(); ++t) {
        const auto idx = indices(t);
        const auto val = values(t);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out(t, idx[i]) = val[i];
        }
    }
    return out;
}

template <typename Tag>
ChannelMask PackedCache<Tag>::mask() const {
    ChannelMask::Bits bits = ChannelMask::Bits::Constant(tokens(), head_dim_, false);
    for (Index t = 0; t < tokens(); ++t) {
        for (auto j : indices(t)) {
            bits(t, j) = true;
        }
    }
    return ChannelMask(std::move(bits));
}

template class PackedCache<KeyTag>;
template class PackedCache<ValueTag>;

void RecoveryStats::append(const RecoveryStats& more) {
    auto cat = [](Vector& a, const Vector& b) {
        Vector out(a.size() + b.size());
        out << a, b;
        a = std::move(out);
    };
    cat(mu, more.mu);
    cat(sigma, more.sigma);
    cat(mu_pruned, more.mu_pruned);
}

PrunedKeyCache prune_keys(const Matrix& keys, const ChannelMask& mask) {
    return PrunedKeyCache::gather(keys, mask);
}

RecoveryStats compute_stats(const SaliencyMatrix& w, const ChannelMask& mask) {
    if (mask.tokens() != w.tokens() || mask.channels() != w.channels()) {
        throw std::invalid_argument("compute_stats: mask shape does not match saliency");
    }
    const Index s = w.tokens();
    const auto d = static_cast<double>(w.channels());
    RecoveryStats stats{Vector(s), Vector(s), Vector(s)};
    for (Index t = 0; t < s; ++t) {
        const auto row = w.scores.row(t).cast<double>();
        const double mean = row.sum() / d;
        const double var = (row.array() - mean).square().sum() / d;

        double pruned_sum = 0.0;
        Index pruned = 0;
        for (Index j = 0; j < w.channels(); ++j) {
            if (!mask.kept(t, j)) {
                pruned_sum += row[j];
                ++pruned;
            }
        }
        stats.mu[t] = static_cast<float>(mean);
        stats.sigma[t] = static_cast<float>(std::sqrt(var));
        stats.mu_pruned[t] =
            pruned == 0 ? 0.0f : static_cast<float>(pruned_sum / static_cast<double>(pruned));
    }
    return stats;
}

ChannelMask value_mask(const Matrix& values, double lambda_v) {
    SaliencyMatrix magnitude{values.array().abs().matrix(), 0};
    return select_fixed(magnitude, lambda_v);
}

PrunedValueCache prune_values(const Matrix& values, double lambda_v) {
    return PrunedValueCache::gather(values, value_mask(values, lambda_v));
}

MemoryReport memory_report(const CacheLayout& layout, ByteWidths widths, AccountingMode mode) {
    const auto d = static_cast<std::uint64_t>(layout.head_dim);
    const auto sum = [](const std::vector<Index>& v) {
        return static_cast<std::uint64_t>(std::accumulate(v.begin(), v.end(), Index{0}));
    };
    const std::uint64_t key_entries =
        sum(layout.packed_key_rows) + static_cast<std::uint64_t>(layout.dense_key_rows) * d;
    const std::uint64_t value_entries =
        sum(layout.packed_value_rows) + static_cast<std::uint64_t>(layout.dense_value_rows) * d;

    MemoryReport r;
    r.full_bytes = 2 * static_cast<std::uint64_t>(layout.full_tokens) * d * widths.elem_bytes;
    r.compressed_bytes = (key_entries + value_entries) * widths.elem_bytes;
    if (mode == AccountingMode::with_overhead) {
        r.index_bytes =
            (sum(layout.packed_key_rows) + sum(layout.packed_value_rows)) * widths.index_bytes;
        r.stats_bytes = 3 * static_cast<std::uint64_t>(layout.packed_key_rows.size()) *
                        widths.elem_bytes;
    }
    r.reduction_fraction =
        r.full_bytes == 0 ? 0.0
                          : 1.0 - static_cast<double>(r.compressed_total()) /
                                      static_cast<double>(r.full_bytes);
    return r;
}

MemoryReport combine(std::span<const MemoryReport> reports) {
    MemoryReport total;
    for (const auto& r : reports) {
        total.full_bytes += r.full_bytes;
        total.compressed_bytes += r.compressed_bytes;
        total.stats_bytes += r.stats_bytes;
        total.index_bytes += r.index_bytes;
    }
    total.reduction_fraction =
        total.full_bytes == 0 ? 0.0
                              : 1.0 - static_cast<double>(total.compressed_total()) /
                                          static_cast<double>(total.full_bytes);
    return total;
}

}  // namespace spark
