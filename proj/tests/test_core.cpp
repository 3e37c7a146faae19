#include <cmath>

#include "doctest.h"
#include "semwarm/core.hpp"

using namespace semwarm;

TEST_SUITE("core") {

TEST_CASE("cosine similarity identity and antipodal cases") {
    Rng rng(101);
    EmbeddingVector v = random_unit_vector(64, rng);
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-12));

    EmbeddingVector neg = v;
    for (auto& x : neg.values) x = -x;
    CHECK(cosine_similarity(v, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cosine similarity equals brute-force dot product on unit pairs") {
    Rng rng(102);
    for (int trial = 0; trial < 200; ++trial) {
        EmbeddingVector a = random_unit_vector(32, rng);
        EmbeddingVector b = random_unit_vector(32, rng);
        // independent oracle: plain accumulation over components
        double expect = 0.0;
        for (size_t i = 0; i < a.values.size(); ++i) {
            expect += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
        }
        CHECK(std::fabs(cosine_similarity(a, b) - expect) <= 1e-9);
    }
}

TEST_CASE("cosine similarity rejects dimension mismatch") {
    EmbeddingVector a(std::vector<float>{1.0f, 0.0f});
    EmbeddingVector b(std::vector<float>{1.0f, 0.0f, 0.0f});
    CHECK_THROWS_AS(cosine_similarity(a, b), std::invalid_argument);
}

TEST_CASE("normalize 3-4-5 triangle") {
    EmbeddingVector v = normalize(std::vector<float>{3.0f, 4.0f});
    CHECK(v.values[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(v.values[1] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(v.is_unit());
}

TEST_CASE("normalize is idempotent") {
    Rng rng(103);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<float> raw(16);
        for (auto& x : raw) x = static_cast<float>(rng.normal() * 10.0);
        EmbeddingVector once = normalize(raw);
        EmbeddingVector twice = normalize(once);
        for (size_t i = 0; i < raw.size(); ++i) {
            CHECK(once.values[i] == doctest::Approx(twice.values[i]).epsilon(1e-7));
        }
    }
}

TEST_CASE("normalize rejects the zero vector") {
    CHECK_THROWS_AS(normalize(std::vector<float>{0.0f, 0.0f, 0.0f}), std::invalid_argument);
}

TEST_CASE("cosine similarity invariant under positive scaling") {
    Rng rng(104);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> a(24), b(24);
        for (auto& x : a) x = static_cast<float>(rng.normal());
        for (auto& x : b) x = static_cast<float>(rng.normal());
        double base = cosine_similarity(normalize(a), normalize(b));

        std::vector<float> a2 = a, b2 = b;
        float sa = static_cast<float>(rng.uniform(0.1, 25.0));
        float sb = static_cast<float>(rng.uniform(0.1, 25.0));
        for (auto& x : a2) x *= sa;
        for (auto& x : b2) x *= sb;
        double scaled = cosine_similarity(normalize(a2), normalize(b2));
        CHECK(std::fabs(base - scaled) <= 1e-6);
    }
}

TEST_CASE("rng streams are reproducible per seed") {
    Rng a(777), b(777), c(778);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
        all_equal = all_equal && ua == ub;
        any_diff = any_diff || ua != uc;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("embedding file round trip") {
    Rng rng(105);
    std::vector<EmbeddingVector> vecs;
    for (int i = 0; i < 9; ++i) vecs.push_back(random_unit_vector(24, rng));
    std::string path = "/tmp/semwarm_test_embed.bin";
    save_embeddings(path, vecs);
    auto loaded = load_embeddings(path);
    REQUIRE(loaded.size() == vecs.size());
    for (size_t i = 0; i < vecs.size(); ++i) {
        REQUIRE(loaded[i].dim() == 24);
        for (size_t j = 0; j < 24; ++j) {
            CHECK(loaded[i].values[j] == vecs[i].values[j]);  // bit-exact f32
        }
    }
}

TEST_CASE("base64 embedding round trip") {
    Rng rng(106);
    EmbeddingVector v = random_unit_vector(64, rng);
    EmbeddingVector back = embedding_from_base64(embedding_to_base64(v));
    REQUIRE(back.dim() == v.dim());
    for (size_t i = 0; i < v.dim(); ++i) CHECK(back.values[i] == v.values[i]);
}

TEST_CASE("config parsing handles comments, blanks and overrides") {
    ConfigMap cfg = ConfigMap::parse_string(
        "# comment\n"
        "\n"
        "dim = 32\n"
        "selector.temperature=0.25\n"
        "caching_enabled = false\n");
    CHECK(cfg.get_int("dim", 64) == 32);
    CHECK(cfg.get_double("selector.temperature", 0.05) == doctest::Approx(0.25));
    CHECK(cfg.get_bool("caching_enabled", true) == false);
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK_THROWS(ConfigMap::parse_string("not a key value line\n"));
}

}  // TEST_SUITE
