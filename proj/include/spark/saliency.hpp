// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "spark/numerics.hpp"

namespace spark {

/// Per-token, per-channel importance w[t][j] = |qbar[j]| * |k[t][j]| for one head.
struct SaliencyMatrix {
    Matrix scores;
    Index head_id = 0;

    Index tokens() const { return scores.rows(); }
    Index channels() const { return scores.cols(); }
};

/**
 * Per-token channel retention mask. Row t keeps channel j when bits(t, j) is set;
 * kept_count() caches the per-row cardinality.
 */
class ChannelMask {
public:
    using Bits = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    ChannelMask() = default;
    explicit ChannelMask(Bits bits);

    static ChannelMask full(Index tokens, Index channels);

    Index tokens() const { return bits_.rows(); }
    Index channels() const { return bits_.cols(); }
    bool kept(Index t, Index j) const { return bits_(t, j); }
    const Bits& bits() const { return bits_; }
    const std::vector<Index>& kept_count() const { return kept_count_; }
    Index total_kept() const;

    /// Kept channel indices of row t, ascending.
    std::vector<Index> kept_channels(Index t) const;

    /// Masks with the rows listed in `rows`, in that order.
    ChannelMask gather_rows(std::span<const Index> rows) const;

    friend bool operator==(const ChannelMask& a, const ChannelMask& b) {
        return a.bits_.rows() == b.bits_.rows() && a.bits_.cols() == b.bits_.cols() &&
               (a.bits_ == b.bits_).all();
    }

private:
    Bits bits_;
    std::vector<Index> kept_count_;
};

struct FixedRatio {
    double lambda = 0.5;
};

struct TopP {
    double p = 0.99;
};

/// Channels ranked by saliency and split into ratios.size() equal groups,
/// most salient first; group k drops ratios[k] of its channels.
struct Grouped {
    Index groups = 4;
    std::vector<double> ratios{0.25, 0.5, 0.75, 1.0};
};

using SelectionStrategy = std::variant<FixedRatio, TopP, Grouped>;

/// Throws std::invalid_argument if the strategy parameters are out of range.
void validate(const SelectionStrategy& strategy);

/// T = floor((1 - lambda) * D), tolerant of binary rounding in (1 - lambda).
Index retained_channels(double lambda, Index channels);

/// Channel indices of one row sorted by descending score; ties go to the lower index.
std::vector<Index> rank_descending(const Eigen::Ref<const Vector>& row);

Vector mean_query(const Matrix& window_queries);

SaliencyMatrix saliency(const Vector& mean_q, const Matrix& keys, Index head_id = 0);

ChannelMask select_fixed(const SaliencyMatrix& w, double lambda);
ChannelMask select_top_p(const SaliencyMatrix& w, double p);
ChannelMask select_grouped(const SaliencyMatrix& w, Index groups, std::span<const double> ratios);
ChannelMask select_channels(const SaliencyMatrix& w, const SelectionStrategy& strategy);

/// Number of channels group k holds when D channels are split into g groups;
/// the D % g remainder goes to the leading (most salient) groups.
Index group_size(Index channels, Index groups, Index k);

/**
 * Frobenius norm of Q K^T - Q (K . mask)^T for an observation window Q (W x D)
 * and keys K (S x D). Each key row's mask also masks the query factor of that
 * row's column of the logit matrix.
 */
double error_exact(const Matrix& window_queries, const Matrix& keys, const ChannelMask& mask);

/**
 * Squared error in channel-expanded form:
 *   sum_j |q_j|^2 sum_t k_tj^2 (1 - z_tj)
 *   + 2 sum_{j<r} <q_j, q_r> sum_t k_tj k_tr (1 - z_tj z_tr)
 * over channel columns q_j of Q and k_j of K. With a mask shared by all tokens the
 * key factor is <k_j, k_r>(1 - z_j z_r). Equals |Q K^T|^2 - |Q_S K_S^T|^2.
 */
double error_expansion(const Matrix& window_queries, const Matrix& keys,
                             const ChannelMask& mask);

/// Per-channel std/mean of saliency over tokens; nullopt where the column mean is 0.
std::vector<std::optional<double>> coefficient_of_variation(const SaliencyMatrix& w);

/// Average of the defined entries; nullopt when none is defined.
std::optional<double> mean_defined(std::span<const std::optional<double>> values);

}  // namespace spark
