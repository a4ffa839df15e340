// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "spark/bundle.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

namespace spark {

namespace {

using json = nlohmann::json;

constexpr std::size_t kPreambleBytes = 12;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    }
    return v;
}

std::int64_t checked_count(const std::vector<std::int64_t>& shape, const std::string& name) {
    std::int64_t n = 1;
    for (auto dim : shape) {
        if (dim < 0 || (dim > 0 && n > std::numeric_limits<std::int64_t>::max() / 4 / dim)) {
            throw BundleError(BundleErrc::bad_header, "tensor '" + name + "' has invalid shape");
        }
        n *= dim;
    }
    return n;
}

}  // namespace

std::string_view to_string(BundleErrc code) {
    switch (code) {
        case BundleErrc::io_error: return "io_error";
        case BundleErrc::magic_mismatch: return "magic_mismatch";
        case BundleErrc::truncated: return "truncated";
        case BundleErrc::bad_header: return "bad_header";
        case BundleErrc::unknown_dtype: return "unknown_dtype";
        case BundleErrc::inconsistent_layout: return "inconsistent_layout";
    }
    return "unknown";
}

std::int64_t NamedTensor::element_count() const {
    return checked_count(shape, name);
}

std::string encode_bundle(std::span<const NamedTensor> tensors) {
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const auto count = t.element_count();
        if (static_cast<std::size_t>(count) != t.data.size()) {
            throw std::invalid_argument("encode_bundle: tensor '" + t.name +
                                        "' data does not match its shape");
        }
        entries.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape},
                           {"offset", offset}});
        offset += static_cast<std::uint64_t>(count) * 4;
    }
    const std::string header = json{{"entries", entries}}.dump();

    std::string out(kBundleMagic);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    out.reserve(out.size() + offset);
    for (const auto& t : tensors) {
        for (float f : t.data) {
            put_u32(out, std::bit_cast<std::uint32_t>(f));
        }
    }
    return out;
}

TensorBundle decode_bundle(std::string_view bytes) {
    if (bytes.size() < kBundleMagic.size()) {
        throw BundleError(BundleErrc::truncated, "file shorter than the magic");
    }
    if (bytes.substr(0, kBundleMagic.size()) != kBundleMagic) {
        throw BundleError(BundleErrc::magic_mismatch, "not a SPKV0001 bundle");
    }
    if (bytes.size() < kPreambleBytes) {
        throw BundleError(BundleErrc::truncated, "missing header length");
    }
    const std::size_t header_len = get_u32(bytes, kBundleMagic.size());
    if (bytes.size() - kPreambleBytes < header_len) {
        throw BundleError(BundleErrc::truncated, "header extends past end of file");
    }

    json header;
    try {
        header = json::parse(bytes.substr(kPreambleBytes, header_len));
    } catch (const json::exception& e) {
        throw BundleError(BundleErrc::bad_header, e.what());
    }
    if (!header.is_object() || !header.contains("entries") || !header["entries"].is_array()) {
        throw BundleError(BundleErrc::bad_header, "header lacks an entries array");
    }

    const std::string_view payload = bytes.substr(kPreambleBytes + header_len);
    TensorBundle out;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header["entries"]) {
        NamedTensor t;
        std::uint64_t offset = 0;
        std::string dtype;
        try {
            t.name = entry.at("name").get<std::string>();
            dtype = entry.at("dtype").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            offset = entry.at("offset").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw BundleError(BundleErrc::bad_header, e.what());
        }
        if (dtype != "f32") {
            throw BundleError(BundleErrc::unknown_dtype,
                              "tensor '" + t.name + "' has dtype '" + dtype + "'");
        }
        if (offset != expected_offset) {
            throw BundleError(BundleErrc::inconsistent_layout,
                              "tensor '" + t.name + "' offset does not follow the previous entry");
        }
        const auto count = static_cast<std::uint64_t>(checked_count(t.shape, t.name));
        const std::uint64_t nbytes = count * 4;
        if (offset + nbytes > payload.size()) {
            throw BundleError(BundleErrc::truncated, "payload of '" + t.name + "' is cut short");
        }
        t.data.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            t.data[i] = std::bit_cast<float>(get_u32(payload, offset + 4 * i));
        }
        expected_offset = offset + nbytes;
        out.push_back(std::move(t));
    }
    if (expected_offset != payload.size()) {
        throw BundleError(BundleErrc::inconsistent_layout, "trailing bytes after the last tensor");
    }
    return out;
}

void save_bundle(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
    const std::string bytes = encode_bundle(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw BundleError(BundleErrc::io_error, "cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw BundleError(BundleErrc::io_error, "write to '" + path.string() + "' failed");
    }
}

TensorBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw BundleError(BundleErrc::io_error, "cannot open '" + path.string() + "'");
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_bundle(bytes);
}

NamedTensor make_tensor(std::string name, const Matrix& m) {
    NamedTensor t{std::move(name), {m.rows(), m.cols()}, {}};
    t.data.assign(m.data(), m.data() + m.size());
    return t;
}

NamedTensor make_tensor(std::string name, const Vector& v) {
    NamedTensor t{std::move(name), {v.size()}, {}};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

bool has_tensor(const TensorBundle& bundle, std::string_view name) {
    return std::any_of(bundle.begin(), bundle.end(),
                       [&](const NamedTensor& t) { return t.name == name; });
}

const NamedTensor& find_tensor(const TensorBundle& bundle, std::string_view name) {
    for (const auto& t : bundle) {
        if (t.name == name) {
            return t;
        }
    }
    throw BundleError(BundleErrc::bad_header, "no tensor named '" + std::string(name) + "'");
}

Matrix to_matrix(const NamedTensor& t) {
    Index rows = 1;
    Index cols = 0;
    if (t.shape.size() == 2) {
        rows = t.shape[0];
        cols = t.shape[1];
    } else if (t.shape.size() == 1) {
        cols = t.shape[0];
    } else {
        throw BundleError(BundleErrc::inconsistent_layout,
                          "tensor '" + t.name + "' is not a matrix");
    }
    return Eigen::Map<const Matrix>(t.data.data(), rows, cols);
}

Vector to_vector(const NamedTensor& t) {
    return Eigen::Map<const Vector>(t.data.data(), static_cast<Index>(t.data.size()));
}

}  // namespace spark
