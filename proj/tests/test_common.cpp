#include <doctest.h>

#include <filesystem>

#include "psycode/common.hpp"
#include "psycode/feature_block.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/random.hpp"
#include "psycode/state_hash.hpp"
#include "psycode/table.hpp"

using namespace psycode;

TEST_CASE("code and concept names round trip") {
    for (auto c : kAllCodes) CHECK(parse_code(code_name(c)) == c);
    for (auto c : kAllConcepts) CHECK(parse_concept(concept_name(c)) == c);
    CHECK_FALSE(parse_code("joy").has_value());
    CHECK(concept_name(Concept::handgun) == "handgun");
    CHECK(index(Concept::money) == 8);
}

TEST_CASE("sha256 known vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    StateHasher h;
    h.bytes("a", 1).bytes("bc", 2);
    CHECK(h.hex_digest() == sha256_hex("abc"));
}

TEST_CASE("seed derivation depends only on its own keys") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("rng streams are reproducible and roughly uniform") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng r(1);
    double s = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / 1e5) < 0.02);
    CHECK(std::abs(s2 / 1e5 - 1.0) < 0.02);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[r.below(5)];
    for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("table rendering") {
    Table t{{"name", "AP"}, {{"handgun", "0.61"}, {"a, b", "0.1"}}};
    CHECK(t.to_csv() == "name,AP\nhandgun,0.61\n\"a, b\",0.1\n");
    auto md = t.to_markdown();
    CHECK(md.find("| handgun | 0.61 |") != std::string::npos);
    CHECK(fmt_fixed(-0.001) == "0.00");
    CHECK(fmt_fixed(0.835) == "0.83");
    CHECK(fmt_fixed(-0.28) == "-0.28");
}

TEST_CASE("feature blocks round trip, dense and sparse") {
    auto path = (std::filesystem::temp_directory_path() / "psycode_fb.jsonl").string();
    FeatureBlock dense{"global", "t1", std::vector<double>{0.5, -1.0}, std::nullopt, std::nullopt};
    FeatureBlock sparse{"linguistic", "t2", SparseVector{10, {1, 7}, {2.0, 1.0}}, Code::loss, 3};
    save_feature_blocks(path, {dense, sparse});
    auto back = load_feature_blocks(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].dense() == std::vector<double>{0.5, -1.0});
    CHECK(back[1].dim() == 10);
    CHECK(back[1].dense()[7] == 1.0);
    CHECK(back[1].code == Code::loss);
    CHECK(back[1].fold == 3);
    std::filesystem::remove(path);
}
