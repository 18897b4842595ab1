#include <doctest.h>

#include <random>

#include "urbanln/scene_graph.hpp"

using namespace urbanln;

TEST_CASE("normalize_phrase canonicalizes case and whitespace") {
    CHECK(normalize_phrase("  Red   CAR ") == "red car");
    CHECK(normalize_phrase("tree") == "tree");
    CHECK(normalize_phrase("") == "");
    CHECK(normalize_phrase("   \t\n ") == "");
    CHECK(normalize_phrase("a\tb\nc") == "a b c");
}

TEST_CASE("normalize_phrase is idempotent on random strings") {
    std::mt19937_64 rng(42);
    const std::string alphabet = "aA bB\tcC\nd D ";
    for (int i = 0; i < 200; ++i) {
        std::string s;
        const int len = static_cast<int>(rng() % 24);
        for (int j = 0; j < len; ++j) {
            s.push_back(alphabet[rng() % alphabet.size()]);
        }
        const std::string once = normalize_phrase(s);
        CHECK(normalize_phrase(once) == once);
        // order of non-space tokens is preserved
        if (!once.empty()) {
            CHECK(once.front() != ' ');
            CHECK(once.back() != ' ');
            CHECK(once.find("  ") == std::string::npos);
        }
    }
}

TEST_CASE("ingest_scene_graph builds normalized multisets") {
    json rec = {{"objects", {"Car", "car"}}, {"attributes", json::array()},
                {"relations", json::array()}};
    SceneGraph g = ingest_scene_graph(rec);
    CHECK(g.objects.size() == 1);
    CHECK(g.objects.at("car") == 2);
    CHECK(g.attributes.empty());
    CHECK(g.relations.empty());

    SceneGraph empty = ingest_scene_graph(json{{"objects", json::array()},
                                               {"attributes", json::array()},
                                               {"relations", json::array()}});
    CHECK(empty.empty());

    SceneGraph mixed = ingest_scene_graph(json{{"objects", {"tree"}},
                                               {"attributes", {"tall tree"}},
                                               {"relations", {"tree beside road"}}});
    CHECK(mixed.objects.at("tree") == 1);
    CHECK(mixed.attributes.at("tall tree") == 1);
    CHECK(mixed.relations.at("tree beside road") == 1);
}

TEST_CASE("ingest_scene_graph rejects malformed records naming the field") {
    json missing = {{"objects", json::array()}, {"attributes", json::array()}};
    CHECK_THROWS_WITH_AS(ingest_scene_graph(missing), doctest::Contains("relations"), DataError);

    json non_string = {{"objects", {"car", 7}}, {"attributes", json::array()},
                       {"relations", json::array()}};
    CHECK_THROWS_WITH_AS(ingest_scene_graph(non_string), doctest::Contains("objects"), DataError);

    json non_list = {{"objects", "car"}, {"attributes", json::array()},
                     {"relations", json::array()}};
    CHECK_THROWS_AS(ingest_scene_graph(non_list), DataError);
}

TEST_CASE("scene graph serialization round-trips") {
    std::mt19937_64 rng(7);
    const std::vector<std::string> words = {"car", "tree", "red car", "tall", "road", "by river"};
    for (int trial = 0; trial < 50; ++trial) {
        SceneGraph g;
        for (PhraseCategory c :
             {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
            const int n = static_cast<int>(rng() % 5);
            for (int i = 0; i < n; ++i) {
                g.add(c, words[rng() % words.size()]);
            }
        }
        SceneGraph back = ingest_scene_graph(to_json(g));
        CHECK(back == g);
    }
}

TEST_CASE("category purity holds for every accessor") {
    SceneGraph g;
    g.add(PhraseCategory::object, "Car");
    g.add(PhraseCategory::attribute, "red  car");
    g.add(PhraseCategory::relation, "car ON road");
    for (const Phrase& p : g.all_phrases()) {
        CHECK(g.category(p.category).count(p.text) == 1);
    }
    CHECK(g.total_count() == 3);
}

TEST_CASE("empty phrases are dropped at ingestion") {
    SceneGraph g;
    g.add(PhraseCategory::object, "   ");
    CHECK(g.empty());
}
