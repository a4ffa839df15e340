// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/numerics.hpp"

#include <numbers>
#include <string>

namespace spark {

namespace {

constexpr std::uint64_t kPcgMultiplier = 6364136223846793005ULL;

}  // namespace

void require_finite(const Matrix& m, std::string_view what) {
    if (!all_finite(m)) {
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
    }
}

void require_finite(const Vector& v, std::string_view what) {
    if (!all_finite(v)) {
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
    }
}

Prng::Prng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
}

std::uint32_t Prng::next_u32() {
    const std::uint64_t old = state_;
    state_ = old * kPcgMultiplier + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

double Prng::uniform() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    const std::uint64_t bits = ((hi << 32u) | lo) >> 11u;
    return static_cast<double>(bits) * 0x1.0p-53;
}

float sample_normal(Prng& prng, float mu, float sigma) {
    if (!(sigma >= 0.0f)) {
        throw std::invalid_argument("sample_normal: sigma must be >= 0");
    }
    const double u1 = prng.uniform_open_closed();
    const double u2 = prng.uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    if (sigma == 0.0f) {
        return mu;
    }
    return static_cast<float>(static_cast<double>(mu) + static_cast<double>(sigma) * z);
}

float exponential_from_uniform(double u, float mean) {
    if (!(mean > 0.0f)) {
        throw std::invalid_argument("sample_exponential: mean must be > 0");
    }
    if (!(u > 0.0 && u <= 1.0)) {
        throw std::invalid_argument("exponential_from_uniform: u must lie in (0, 1]");
    }
    return static_cast<float>(-static_cast<double>(mean) * std::log(u));
}

float sample_exponential(Prng& prng, float mean) {
    if (!(mean > 0.0f)) {
        throw std::invalid_argument("sample_exponential: mean must be > 0");
    }
    return exponential_from_uniform(prng.uniform_open_closed(), mean);
}

}  // namespace spark
