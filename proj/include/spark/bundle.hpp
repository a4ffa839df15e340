// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spark/kvstore.hpp"
#include "spark/numerics.hpp"

namespace spark {

/*
 * Tensor bundle layout (all integers little-endian):
 *
 *   bytes 0..7    magic "SPKV0001"
 *   bytes 8..11   u32 header length H
 *   next H bytes  UTF-8 JSON: {"entries":[{"name","dtype":"f32","shape":[...],"offset"}]}
 *   payload       row-major f32 data; entry offsets are relative to the payload
 *                 start and packed back to back in entry order
 */

inline constexpr std::string_view kBundleMagic = "SPKV0001";

enum class BundleErrc {
    io_error = 1,
    magic_mismatch,
    truncated,
    bad_header,
    unknown_dtype,
    inconsistent_layout,
};

std::string_view to_string(BundleErrc code);

class BundleError : public std::runtime_error {
public:
    BundleError(BundleErrc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    BundleErrc code() const { return code_; }

private:
    BundleErrc code_;
};

struct NamedTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::int64_t element_count() const;
};

using TensorBundle = std::vector<NamedTensor>;

std::string encode_bundle(std::span<const NamedTensor> tensors);
TensorBundle decode_bundle(std::string_view bytes);

void save_bundle(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
TensorBundle load_bundle(const std::filesystem::path& path);

NamedTensor make_tensor(std::string name, const Matrix& m);
NamedTensor make_tensor(std::string name, const Vector& v);

/// Throws BundleError(bad_header) if `name` is absent.
const NamedTensor& find_tensor(const TensorBundle& bundle, std::string_view name);
bool has_tensor(const TensorBundle& bundle, std::string_view name);

/// 2-D tensors map directly; a 1-D tensor becomes a single row.
Matrix to_matrix(const NamedTensor& t);
Vector to_vector(const NamedTensor& t);

/// Stores a packed cache as `<prefix>.kept`, `<prefix>.indices`, `<prefix>.values`
/// and `<prefix>.head_dim`. Indices are stored as f32, exact for head_dim < 2^24.
template <typename Tag>
void append_cache(TensorBundle& bundle, const std::string& prefix, const PackedCache<Tag>& cache) {
    NamedTensor kept{prefix + ".kept", {cache.tokens()}, {}};
    NamedTensor indices{prefix + ".indices", {cache.total_kept()}, {}};
    NamedTensor values{prefix + ".values", {cache.total_kept()}, {}};
    for (Index t = 0; t < cache.tokens(); ++t) {
        kept.data.push_back(static_cast<float>(cache.kept(t)));
        for (auto j : cache.indices(t)) {
            indices.data.push_back(static_cast<float>(j));
        }
        for (auto v : cache.values(t)) {
            values.data.push_back(v);
        }
    }
    bundle.push_back(std::move(kept));
    bundle.push_back(std::move(indices));
    bundle.push_back(std::move(values));
    bundle.push_back(NamedTensor{prefix + ".head_dim", {1}, {static_cast<float>(cache.head_dim())}});
}

template <typename Tag>
PackedCache<Tag> read_cache(const TensorBundle& bundle, const std::string& prefix) {
    const auto& kept = find_tensor(bundle, prefix + ".kept").data;
    const auto& indices = find_tensor(bundle, prefix + ".indices").data;
    const auto& values = find_tensor(bundle, prefix + ".values").data;
    const auto& head_dim = find_tensor(bundle, prefix + ".head_dim").data;
    if (head_dim.size() != 1 || indices.size() != values.size()) {
        throw BundleError(BundleErrc::inconsistent_layout, "cache '" + prefix + "' is malformed");
    }
    PackedCache<Tag> cache(static_cast<Index>(head_dim[0]));
    std::size_t begin = 0;
    std::vector<std::uint32_t> row;
    for (float count : kept) {
        const auto n = static_cast<std::size_t>(count);
        if (begin + n > indices.size()) {
            throw BundleError(BundleErrc::inconsistent_layout,
                              "cache '" + prefix + "' row counts exceed stored entries");
        }
        row.clear();
        for (std::size_t i = 0; i < n; ++i) {
            row.push_back(static_cast<std::uint32_t>(indices[begin + i]));
        }
        try {
            cache.append_row(row, std::span<const float>(values.data() + begin, n));
        } catch (const std::invalid_argument& e) {
            throw BundleError(BundleErrc::inconsistent_layout, e.what());
        }
        begin += n;
    }
    if (begin != indices.size()) {
        throw BundleError(BundleErrc::inconsistent_layout,
                          "cache '" + prefix + "' has unreferenced entries");
    }
    return cache;
}

}  // namespace spark
