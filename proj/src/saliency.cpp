// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace spark {

namespace {

// Absorbs representation error in (1 - ratio) * count, e.g. (1 - 0.8) * 160.
constexpr double kFloorSlack = 1e-9;

MatrixX<double> masked_keys(const Matrix& keys, const ChannelMask& mask) {
    return (keys.cast<double>().array() * mask.bits().cast<double>()).matrix();
}

void require_ratio(double value, bool ok, const char* what) {
    if (!ok) {
        throw std::invalid_argument(std::string(what) + " out of range: " + std::to_string(value));
    }
}

}  // namespace

ChannelMask::ChannelMask(Bits bits) : bits_(std::move(bits)) {
    kept_count_.resize(static_cast<std::size_t>(bits_.rows()));
    for (Index t = 0; t < bits_.rows(); ++t) {
        kept_count_[static_cast<std::size_t>(t)] = bits_.row(t).count();
    }
}

ChannelMask ChannelMask::full(Index tokens, Index channels) {
    return ChannelMask(Bits::Constant(tokens, channels, true));
}

Index ChannelMask::total_kept() const {
    return std::accumulate(kept_count_.begin(), kept_count_.end(), Index{0});
}

std::vector<Index> ChannelMask::kept_channels(Index t) const {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(kept_count_[static_cast<std::size_t>(t)]));
    for (Index j = 0; j < bits_.cols(); ++j) {
        if (bits_(t, j)) {
            out.push_back(j);
        }
    }
    return out;
}

ChannelMask ChannelMask::gather_rows(std::span<const Index> rows) const {
    Bits out(static_cast<Index>(rows.size()), bits_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = bits_.row(rows[i]);
    }
    return ChannelMask(std::move(out));
}

void validate(const SelectionStrategy& strategy) {
    std::visit(
        [](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, FixedRatio>) {
                require_ratio(s.lambda, s.lambda >= 0.0 && s.lambda < 1.0, "lambda");
            } else if constexpr (std::is_same_v<S, TopP>) {
                require_ratio(s.p, s.p > 0.0 && s.p <= 1.0, "top-p");
            } else {
                if (s.groups < 1) {
                    throw std::invalid_argument("grouped: need at least one group");
                }
                if (static_cast<Index>(s.ratios.size()) != s.groups) {
                    throw std::invalid_argument("grouped: ratio count must equal group count");
                }
                for (std::size_t k = 0; k < s.ratios.size(); ++k) {
                    require_ratio(s.ratios[k], s.ratios[k] >= 0.0 && s.ratios[k] <= 1.0,
                                  "group ratio");
                    if (k > 0 && s.ratios[k] < s.ratios[k - 1]) {
                        throw std::invalid_argument("grouped: ratios must be nondecreasing");
                    }
                }
            }
        },
        strategy);
}

Index retained_channels(double lambda, Index channels) {
    const double kept = std::floor((1.0 - lambda) * static_cast<double>(channels) + kFloorSlack);
    return std::clamp(static_cast<Index>(kept), Index{0}, channels);
}

std::vector<Index> rank_descending(const Eigen::Ref<const Vector>& row) {
    std::vector<Index> order(static_cast<std::size_t>(row.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return row[a] > row[b]; });
    return order;
}

Vector mean_query(const Matrix& window_queries) {
    if (window_queries.rows() == 0) {
        throw std::invalid_argument("mean_query: empty observation window");
    }
    return window_queries.cast<double>().colwise().mean().transpose().cast<float>();
}

SaliencyMatrix saliency(const Vector& mean_q, const Matrix& keys, Index head_id) {
    if (mean_q.size() != keys.cols()) {
        throw std::invalid_argument("saliency: query length does not match key head dim");
    }
    SaliencyMatrix w;
    w.head_id = head_id;
    w.scores = (keys.array().abs().rowwise() * mean_q.array().abs().transpose()).matrix();
    return w;
}

ChannelMask select_fixed(const SaliencyMatrix& w, double lambda) {
    validate(FixedRatio{lambda});
    const Index keep = retained_channels(lambda, w.channels());
    if (keep == 0) {
        throw std::invalid_argument("select_fixed: pruning ratio leaves no channel");
    }
    ChannelMask::Bits bits = ChannelMask::Bits::Constant(w.tokens(), w.channels(), false);
    for (Index t = 0; t < w.tokens(); ++t) {
        const Vector row = w.scores.row(t).transpose();
        const auto order = rank_descending(row);
        for (Index r = 0; r < keep; ++r) {
            bits(t, order[static_cast<std::size_t>(r)]) = true;
        }
    }
    return ChannelMask(std::move(bits));
}

ChannelMask select_top_p(const SaliencyMatrix& w, double p) {
    validate(TopP{p});
    ChannelMask::Bits bits = ChannelMask::Bits::Constant(w.tokens(), w.channels(), false);
    for (Index t = 0; t < w.tokens(); ++t) {
        const Vector row = w.scores.row(t).transpose();
        const auto order = rank_descending(row);
        double total = 0.0;
        for (Index j : order) {
            total += row[j];
        }
        if (total <= 0.0) {
            bits(t, 0) = true;
            continue;
        }
        const double target = p * total;
        double prefix = 0.0;
        for (Index j : order) {
            bits(t, j) = true;
            prefix += row[j];
            if (prefix >= target) {
                break;
            }
        }
    }
    return ChannelMask(std::move(bits));
}

Index group_size(Index channels, Index groups, Index k) {
    return channels / groups + (k < channels % groups ? 1 : 0);
}

ChannelMask select_grouped(const SaliencyMatrix& w, Index groups, std::span<const double> ratios) {
    validate(Grouped{groups, std::vector<double>(ratios.begin(), ratios.end())});
    const Index d = w.channels();
    if (groups > d) {
        throw std::invalid_argument("select_grouped: more groups than channels");
    }
    std::vector<Index> keep_in_group(static_cast<std::size_t>(groups));
    for (Index k = 0; k < groups; ++k) {
        keep_in_group[static_cast<std::size_t>(k)] =
            retained_channels(ratios[static_cast<std::size_t>(k)], group_size(d, groups, k));
    }
    keep_in_group[0] = std::max<Index>(keep_in_group[0], 1);

    ChannelMask::Bits bits = ChannelMask::Bits::Constant(w.tokens(), d, false);
    for (Index t = 0; t < w.tokens(); ++t) {
        const Vector row = w.scores.row(t).transpose();
        const auto order = rank_descending(row);
        Index start = 0;
        for (Index k = 0; k < groups; ++k) {
            for (Index r = 0; r < keep_in_group[static_cast<std::size_t>(k)]; ++r) {
                bits(t, order[static_cast<std::size_t>(start + r)]) = true;
            }
            start += group_size(d, groups, k);
        }
    }
    return ChannelMask(std::move(bits));
}

ChannelMask select_channels(const SaliencyMatrix& w, const SelectionStrategy& strategy) {
    return std::visit(
        [&](const auto& s) -> ChannelMask {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, FixedRatio>) {
                return select_fixed(w, s.lambda);
            } else if constexpr (std::is_same_v<S, TopP>) {
                return select_top_p(w, s.p);
            } else {
                return select_grouped(w, s.groups, s.ratios);
            }
        },
        strategy);
}

double error_exact(const Matrix& window_queries, const Matrix& keys, const ChannelMask& mask) {
    if (window_queries.cols() != keys.cols() || mask.tokens() != keys.rows() ||
        mask.channels() != keys.cols()) {
        throw std::invalid_argument("error_exact: shape mismatch");
    }
    const MatrixX<double> q = window_queries.cast<double>();
    const MatrixX<double> full = q * keys.cast<double>().transpose();
    const MatrixX<double> pruned = q * masked_keys(keys, mask).transpose();
    return frobenius(full - pruned);
}

double error_expansion(const Matrix& window_queries, const Matrix& keys,
                             const ChannelMask& mask) {
    if (window_queries.cols() != keys.cols() || mask.tokens() != keys.rows() ||
        mask.channels() != keys.cols()) {
        throw std::invalid_argument("error_expansion: shape mismatch");
    }
    const Index d = keys.cols();
    const MatrixX<double> q = window_queries.cast<double>();
    const MatrixX<double> k = keys.cast<double>();

    // Key-side factor of channel pair (j, r): sum_t k_tj k_tr (1 - z_tj z_tr).
    auto key_factor = [&](Index j, Index r) {
        double acc = 0.0;
        for (Index t = 0; t < k.rows(); ++t) {
            const double both = (mask.kept(t, j) && mask.kept(t, r)) ? 1.0 : 0.0;
            acc += k(t, j) * k(t, r) * (1.0 - both);
        }
        return acc;
    };

    double diagonal = 0.0;
    for (Index j = 0; j < d; ++j) {
        diagonal += q.col(j).squaredNorm() * key_factor(j, j);
    }
    double cross = 0.0;
    for (Index j = 0; j < d; ++j) {
        for (Index r = j + 1; r < d; ++r) {
            cross += q.col(j).dot(q.col(r)) * key_factor(j, r);
        }
    }
    return diagonal + 2.0 * cross;
}

std::vector<std::optional<double>> coefficient_of_variation(const SaliencyMatrix& w) {
    std::vector<std::optional<double>> cv(static_cast<std::size_t>(w.channels()));
    if (w.tokens() == 0) {
        return cv;
    }
    const MatrixX<double> s = w.scores.cast<double>();
    for (Index j = 0; j < s.cols(); ++j) {
        const double mean = s.col(j).mean();
        if (mean == 0.0) {
            continue;
        }
        const double var = (s.col(j).array() - mean).square().mean();
        cv[static_cast<std::size_t>(j)] = std::sqrt(var) / mean;
    }
    return cv;
}

std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(n);
}

}  // namespace spark
