// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

#include <Eigen/Dense>

namespace spark {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Per-head Q/K/V storage: rows are tokens, columns are channels.
using Matrix = MatrixX<float>;
using Vector = VectorX<float>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

/// Throws std::invalid_argument naming `what` if any entry is NaN or Inf.
void require_finite(const Matrix& m, std::string_view what);
void require_finite(const Vector& v, std::string_view what);

/// Max-subtracted softmax of a score vector.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax_row(const Eigen::MatrixBase<Derived>& scores) {
    using Scalar = typename Derived::Scalar;
    if (scores.size() == 0) {
        throw std::invalid_argument("softmax_row: empty input");
    }
    const Scalar peak = scores.maxCoeff();
    VectorX<Scalar> e = (scores.derived().array() - peak).exp().matrix();
    return e / e.sum();
}

template <typename Derived>
typename Derived::Scalar frobenius(const Eigen::MatrixBase<Derived>& m) {
    return m.norm();
}

/// PCG32 (XSH-RR, 64-bit state). Identical (seed, stream) pairs give
/// identical sequences on every platform.
class Prng {
public:
    explicit Prng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint32_t next_u32();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in (0, 1]; safe to pass to log().
    double uniform_open_closed() { return 1.0 - uniform(); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// Independent generator for a sub-task (head, sweep point), same seed.
    Prng fork(std::uint64_t stream) const { return Prng(seed_, stream); }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
};

/// Box-Muller; one normal deviate per call. sigma == 0 returns mu exactly.
float sample_normal(Prng& prng, float mu, float sigma);

/// Inverse-CDF exponential with the given mean (rate 1/mean).
float sample_exponential(Prng& prng, float mean);

/// -mean * ln(u) for u in (0, 1]; the transform behind sample_exponential.
float exponential_from_uniform(double u, float mean);

}  // namespace spark
