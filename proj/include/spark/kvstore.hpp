// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spark/numerics.hpp"
#include "spark/saliency.hpp"

namespace spark {

/**
 * Ragged per-token channel storage in CSR layout: row t owns
 * indices[row_ptr[t], row_ptr[t+1]) (strictly ascending, < head_dim) and the
 * matching values. The Tag parameter keeps key and value caches distinct types.
 */
template <typename Tag>
class PackedCache {
public:
    PackedCache() = default;
    explicit PackedCache(Index head_dim) : head_dim_(head_dim) {}

    /// Gathers the kept entries of `dense` under `mask`. Rejects empty rows
    /// unless allow_empty_rows is set.
    static PackedCache gather(const Matrix& dense, const ChannelMask& mask,
                              bool allow_empty_rows = false);

    Index head_dim() const { return head_dim_; }
    /// Number of tokens stored (origin length S).
    Index tokens() const { return static_cast<Index>(row_ptr_.size()) - 1; }
    Index kept(Index t) const {
        return static_cast<Index>(row_ptr_[static_cast<std::size_t>(t) + 1] -
                                  row_ptr_[static_cast<std::size_t>(t)]);
    }
    Index total_kept() const { return static_cast<Index>(indices_.size()); }
    std::vector<Index> kept_counts() const;

    std::span<const std::uint32_t> indices(Index t) const;
    std::span<const float> values(Index t) const;

    /// Appends one token row; indices must be strictly ascending and < head_dim.
    void append_row(std::span<const std::uint32_t> indices, std::span<const float> values);

    /// Dense S x D matrix with pruned positions set to zero.
    Matrix to_dense() const;
    ChannelMask mask() const;

    friend bool operator==(const PackedCache& a, const PackedCache& b) {
        return a.head_dim_ == b.head_dim_ && a.row_ptr_ == b.row_ptr_ &&
               a.indices_ == b.indices_ && a.values_ == b.values_;
    }

private:
    Index head_dim_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::uint32_t> indices_;
    std::vector<float> values_;
};

struct KeyTag {};
struct ValueTag {};
using PrunedKeyCache = PackedCache<KeyTag>;
using PrunedValueCache = PackedCache<ValueTag>;

extern template class PackedCache<KeyTag>;
extern template class PackedCache<ValueTag>;

/// Per-token saliency statistics cached for recovery.
struct RecoveryStats {
    Vector mu;         // mean of all D saliencies of the token
    Vector sigma;      // population std of the same
    Vector mu_pruned;  // mean over pruned channels; 0 when nothing was pruned

    Index tokens() const { return mu.size(); }
    void append(const RecoveryStats& more);
};

PrunedKeyCache prune_keys(const Matrix& keys, const ChannelMask& mask);

RecoveryStats compute_stats(const SaliencyMatrix& w, const ChannelMask& mask);

/// Magnitude-ranked value mask keeping floor((1 - lambda_v) D) channels per token.
ChannelMask value_mask(const Matrix& values, double lambda_v);
PrunedValueCache prune_values(const Matrix& values, double lambda_v);

enum class AccountingMode { values_only, with_overhead };

struct ByteWidths {
    std::uint64_t elem_bytes = 2;
    std::uint64_t index_bytes = 1;
};

/// What one head's cache holds after compression. Dense rows store all D channels.
struct CacheLayout {
    Index full_tokens = 0;  // uncompressed baseline length
    Index head_dim = 0;
    std::vector<Index> packed_key_rows;  // kept count per packed key row
    Index dense_key_rows = 0;
    std::vector<Index> packed_value_rows;
    Index dense_value_rows = 0;
};

struct MemoryReport {
    std::uint64_t full_bytes = 0;
    std::uint64_t compressed_bytes = 0;
    std::uint64_t stats_bytes = 0;
    std::uint64_t index_bytes = 0;
    double reduction_fraction = 0.0;

    std::uint64_t compressed_total() const { return compressed_bytes + stats_bytes + index_bytes; }
};

/// full = 2 S D elem (K and V). Overhead (indices, 3 stats scalars per packed
/// key row) is counted only under AccountingMode::with_overhead.
MemoryReport memory_report(const CacheLayout& layout, ByteWidths widths, AccountingMode mode);

/// Sums per-head reports and recomputes the reduction fraction.
MemoryReport combine(std::span<const MemoryReport> reports);

}  // namespace spark
