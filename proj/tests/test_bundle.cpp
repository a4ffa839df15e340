// Copyright (C) 2026 The spark-kv Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "spark/bundle.hpp"
#include "test_support.hpp"

using namespace spark;

namespace {

BundleErrc decode_error(std::string_view bytes) {
    try {
        decode_bundle(bytes);
    } catch (const BundleError& e) {
        return e.code();
    }
    FAIL("decode_bundle accepted malformed input");
    return BundleErrc::io_error;
}

std::string with_header(const std::string& header, std::string_view payload = {}) {
    std::string out(kBundleMagic);
    const auto n = static_cast<std::uint32_t>(header.size());
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((n >> (8 * i)) & 0xffu));
    }
    out += header;
    out += payload;
    return out;
}

TensorBundle sample_bundle() {
    Prng prng(1);
    TensorBundle b;
    b.push_back(make_tensor("a", testing::random_matrix(prng, 3, 4)));
    b.push_back(make_tensor("b", testing::random_vector(prng, 5)));
    b.push_back(NamedTensor{"empty", {0, 4}, {}});
    b.push_back(NamedTensor{"special", {3},
                            {std::numeric_limits<float>::infinity(), -0.0f,
                             std::numeric_limits<float>::denorm_min()}});
    return b;
}

bool bit_equal(const TensorBundle& a, const TensorBundle& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].shape != b[i].shape ||
            a[i].data.size() != b[i].data.size() ||
            std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size() * 4) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("encode and decode round-trip bit-exactly") {
    const TensorBundle b = sample_bundle();
    const std::string bytes = encode_bundle(b);
    CHECK(bytes.substr(0, 8) == "SPKV0001");
    CHECK(bit_equal(decode_bundle(bytes), b));
    CHECK(encode_bundle(decode_bundle(bytes)) == bytes);
}

TEST_CASE("payload is little-endian f32") {
    const TensorBundle b{NamedTensor{"x", {1}, {1.0f}}};
    const std::string bytes = encode_bundle(b);
    const std::string tail = bytes.substr(bytes.size() - 4);
    CHECK(tail == std::string("\x00\x00\x80\x3f", 4));
}

TEST_CASE("save and load through a file") {
    const auto path = std::filesystem::temp_directory_path() / "spark_kv_bundle_test.spkv";
    const TensorBundle b = sample_bundle();
    save_bundle(path, b);
    CHECK(bit_equal(load_bundle(path), b));
    std::filesystem::remove(path);

    try {
        load_bundle(path);
        FAIL("missing file loaded");
    } catch (const BundleError& e) {
        CHECK(e.code() == BundleErrc::io_error);
    }
}

TEST_CASE("matrix and vector helpers") {
    Prng prng(2);
    const Matrix m = testing::random_matrix(prng, 4, 3);
    CHECK(to_matrix(make_tensor("m", m)) == m);
    const Vector v = testing::random_vector(prng, 6);
    CHECK(to_vector(make_tensor("v", v)) == v);
    CHECK(to_matrix(make_tensor("v", v)).rows() == 1);

    const TensorBundle b{make_tensor("m", m)};
    CHECK(has_tensor(b, "m"));
    CHECK_FALSE(has_tensor(b, "n"));
    CHECK_THROWS_AS(find_tensor(b, "n"), BundleError);
    CHECK_THROWS_AS(to_matrix(NamedTensor{"c", {2, 2, 2}, std::vector<float>(8)}), BundleError);
    CHECK_THROWS_AS(encode_bundle(TensorBundle{NamedTensor{"bad", {2, 2}, {1.0f}}}),
                    std::invalid_argument);
}

TEST_CASE("packed caches survive a bundle round-trip") {
    Prng prng(3);
    const Matrix k = testing::random_matrix(prng, 10, 12);
    const ChannelMask mask = select_top_p(saliency(testing::random_vector(prng, 12), k), 0.7);
    const PrunedKeyCache cache = prune_keys(k, mask);
    TensorBundle b;
    append_cache(b, "head0.cache", cache);
    const TensorBundle back = decode_bundle(encode_bundle(b));
    CHECK(read_cache<KeyTag>(back, "head0.cache") == cache);

    TensorBundle broken = back;
    broken[0].data[0] += 1.0f;
    try {
        read_cache<KeyTag>(broken, "head0.cache");
        FAIL("inconsistent cache accepted");
    } catch (const BundleError& e) {
        CHECK(e.code() == BundleErrc::inconsistent_layout);
    }
}

TEST_CASE("malformed inputs map to their error codes") {
    const std::string good = encode_bundle(sample_bundle());

    CHECK(decode_error("") == BundleErrc::truncated);
    CHECK(decode_error("SPKV") == BundleErrc::truncated);
    CHECK(decode_error("NOTSPKV1xxxxxxxx") == BundleErrc::magic_mismatch);
    CHECK(decode_error("SPKV0001\x10") == BundleErrc::truncated);
    CHECK(decode_error(good.substr(0, 20)) == BundleErrc::truncated);
    CHECK(decode_error(good.substr(0, good.size() - 1)) == BundleErrc::truncated);
    CHECK(decode_error(good + "x") == BundleErrc::inconsistent_layout);

    CHECK(decode_error(with_header("{not json")) == BundleErrc::bad_header);
    CHECK(decode_error(with_header("[]")) == BundleErrc::bad_header);
    CHECK(decode_error(with_header(R"({"entries":[{"name":"x"}]})")) == BundleErrc::bad_header);
    CHECK(decode_error(with_header(
              R"({"entries":[{"name":"x","dtype":"f32","shape":[-1],"offset":0}]})")) ==
          BundleErrc::bad_header);
    CHECK(decode_error(with_header(
              R"({"entries":[{"name":"x","dtype":"f16","shape":[1],"offset":0}]})",
              std::string(4, '\0'))) == BundleErrc::unknown_dtype);
    CHECK(decode_error(with_header(
              R"({"entries":[{"name":"x","dtype":"f32","shape":[1],"offset":4}]})",
              std::string(8, '\0'))) == BundleErrc::inconsistent_layout);

    CHECK(decode_bundle(with_header(R"({"entries":[]})")).empty());
}

TEST_CASE("random corruption never escapes as anything but BundleError") {
    const std::string good = encode_bundle(sample_bundle());
    Prng prng(4);
    for (int trial = 0; trial < 500; ++trial) {
        std::string bad = good;
        const auto at = static_cast<std::size_t>(prng.next_u32() % bad.size());
        bad[at] = static_cast<char>(prng.next_u32() & 0xffu);
        if (trial % 2 == 0) {
            bad.resize(static_cast<std::size_t>(prng.next_u32() % bad.size()));
        }
        try {
            decode_bundle(bad);
        } catch (const BundleError&) {
        }
    }
}
