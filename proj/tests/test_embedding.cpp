#include "geosem/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"

using namespace geosem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Hand-rolled GEMB writer for corruption tests.
std::string gemb_bytes(std::uint32_t version, std::uint32_t count, std::uint32_t dim,
                       const std::vector<float>& payload) {
    std::string out = "GEMB";
    put_u32(out, version);
    put_u32(out, count);
    put_u32(out, dim);
    for (float f : payload) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    return out;
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double norm_of(std::span<const float> v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    return std::sqrt(sq);
}

}  // namespace

TEST_CASE("store add, lookup and equality") {
    EmbeddingStore store(3, "unit");
    store.add("a", std::vector<float>{1.0f, 0.0f, 0.0f});
    store.add("b", std::vector<float>{0.0f, 2.0f, 0.0f});
    CHECK(store.size() == 2);
    CHECK(store.dim() == 3);
    CHECK(store.source_tag() == "unit");
    CHECK(store.contains("a"));
    CHECK_FALSE(store.contains("c"));
    CHECK(store.vector("b")[1] == 2.0f);
    CHECK(store.row(0)[0] == 1.0f);
    CHECK(store.ids() == std::vector<std::string>{"a", "b"});
    CHECK_THROWS_WITH_AS(store.vector("c"), doctest::Contains("no embedding"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(store.add("a", std::vector<float>{0.0f, 0.0f, 0.0f}),
                         doctest::Contains("duplicate"), ValidationError);
    CHECK_THROWS_AS(store.add("short", std::vector<float>{1.0f}), ValidationError);
    CHECK_THROWS_AS(
        store.add("nan", std::vector<float>{std::numeric_limits<float>::quiet_NaN(),
                                            0.0f, 0.0f}),
        ValidationError);

    EmbeddingStore same(3, "unit");
    same.add("a", std::vector<float>{1.0f, 0.0f, 0.0f});
    same.add("b", std::vector<float>{0.0f, 2.0f, 0.0f});
    CHECK(store == same);
}

TEST_CASE("gemb file round trips bit-exactly") {
    const std::string dir = scratch_dir("gemb");
    EmbeddingStore store(4, "vectors");
    Rng rng(17);
    for (int i = 0; i < 9; ++i) {
        std::vector<float> v(4);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
        store.add("id_" + std::to_string(i), v);
    }
    write_embeddings(store, dir + "/v.gemb", dir + "/v.ids");
    EmbeddingStore loaded = load_embeddings(dir + "/v.gemb", dir + "/v.ids");
    CHECK(loaded == store);

    // A second write of the same store produces identical bytes.
    write_embeddings(loaded, dir + "/v2.gemb", dir + "/v2.ids");
    CHECK(read_text_file(dir + "/v.gemb") == read_text_file(dir + "/v2.gemb"));
    CHECK(read_text_file(dir + "/v.ids") == read_text_file(dir + "/v2.ids"));
}

TEST_CASE("gemb loader rejects malformed files") {
    const std::string dir = scratch_dir("gemb_errors");
    const std::string ids2 = dir + "/two.ids";
    write_text_file(ids2, "a\nb\n");

    write_bytes(dir + "/magic.gemb", "XEMB" + gemb_bytes(1, 2, 2, {1, 0, 0, 1}).substr(4));
    CHECK_THROWS_WITH_AS(load_embeddings(dir + "/magic.gemb", ids2),
                         doctest::Contains("magic mismatch"), ValidationError);

    write_bytes(dir + "/version.gemb", gemb_bytes(9, 2, 2, {1, 0, 0, 1}));
    CHECK_THROWS_WITH_AS(load_embeddings(dir + "/version.gemb", ids2),
                         doctest::Contains("unsupported version"), ValidationError);

    write_bytes(dir + "/dim0.gemb", gemb_bytes(1, 2, 0, {}));
    CHECK_THROWS_WITH_AS(load_embeddings(dir + "/dim0.gemb", ids2),
                         doctest::Contains("dim is zero"), ValidationError);

    write_bytes(dir + "/short.gemb", gemb_bytes(1, 2, 2, {1, 0, 0}));
    CHECK_THROWS_WITH_AS(load_embeddings(dir + "/short.gemb", ids2),
                         doctest::Contains("truncated"), ValidationError);

    write_bytes(dir + "/ok.gemb", gemb_bytes(1, 2, 2, {1, 0, 0, 1}));
    write_text_file(dir + "/three.ids", "a\nb\nc\n");
    CHECK_THROWS_AS(load_embeddings(dir + "/ok.gemb", dir + "/three.ids"),
                    ValidationError);
    write_text_file(dir + "/dup.ids", "a\na\n");
    CHECK_THROWS_WITH_AS(load_embeddings(dir + "/ok.gemb", dir + "/dup.ids"),
                         doctest::Contains("duplicate"), ValidationError);
}

TEST_CASE("truncate_dims keeps leading components") {
    EmbeddingStore store(4, "full");
    store.add("a", std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
    EmbeddingStore cut = truncate_dims(store, 2);
    CHECK(cut.dim() == 2);
    CHECK(cut.vector("a")[0] == 1.0f);
    CHECK(cut.vector("a")[1] == 2.0f);
    CHECK(cut.vector("a").size() == 2);
    CHECK_THROWS_AS(truncate_dims(store, 0), ValidationError);
    CHECK_THROWS_AS(truncate_dims(store, 5), ValidationError);
}

TEST_CASE("l2_normalize_store rescales rows and names zero vectors") {
    EmbeddingStore store(2, "raw");
    store.add("a", std::vector<float>{3.0f, 4.0f});
    EmbeddingStore unit = l2_normalize_store(store);
    CHECK(norm_of(unit.vector("a")) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(unit.vector("a")[0] == doctest::Approx(0.6f));

    EmbeddingStore zero(2, "raw");
    zero.add("null_row", std::vector<float>{0.0f, 0.0f});
    CHECK_THROWS_WITH_AS(l2_normalize_store(zero), doctest::Contains("null_row"),
                         ValidationError);
}

TEST_CASE("fallback_encode is a deterministic unit-norm hash") {
    auto v1 = fallback_encode("A place of Museums, named Tate.", 64, 0);
    auto v2 = fallback_encode("A place of Museums, named Tate.", 64, 0);
    CHECK(v1 == v2);
    CHECK(v1.size() == 64);
    CHECK(norm_of(v1) == doctest::Approx(1.0).epsilon(1e-6));

    // Tokenization lowercases and strips punctuation.
    auto plain = fallback_encode("a place of museums named tate", 64, 0);
    CHECK(v1 == plain);

    auto other_seed = fallback_encode("A place of Museums, named Tate.", 64, 1);
    CHECK(v1 != other_seed);
    auto other_text = fallback_encode("A place of Parks, named Green.", 64, 0);
    CHECK(v1 != other_text);

    // Distinct tokens should populate more than one bucket at this width.
    int nonzero = 0;
    for (float x : v1) nonzero += x != 0.0f;
    CHECK(nonzero > 1);
}

TEST_CASE("fallback_encode rejects tiny dims and empty text") {
    CHECK_THROWS_WITH_AS(fallback_encode("park", 7, 0),
                         doctest::Contains("at least 8"), ValidationError);
    CHECK_THROWS_WITH_AS(fallback_encode("...!?", 16, 0),
                         doctest::Contains("empty text"), ValidationError);
    CHECK_THROWS_AS(fallback_encode("", 16, 0), ValidationError);
}
