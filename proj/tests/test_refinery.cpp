#include <doctest.h>

#include <algorithm>
#include <random>

#include "rectangle_oracle.hpp"
#include "urbanln/refinery.hpp"
#include "urbanln/stub_clients.hpp"

using namespace urbanln;

namespace {

SegmentMask mask_from_rows(const std::vector<std::string>& rows, std::string id = "m") {
    json j{{"segment_id", std::move(id)}, {"grid", rows}};
    return mask_from_json(j);
}

} // namespace

TEST_CASE("largest_rectangle examples") {
    SUBCASE("whole grid") {
        auto b = largest_rectangle(mask_from_rows({"1111", "1111", "1111"}));
        CHECK(b == BoundingBox{0, 0, 4, 3});
        CHECK(b.area() == 12);
    }
    SUBCASE("L-shape") {
        auto b = largest_rectangle(mask_from_rows({"1100", "1100", "1111"}));
        CHECK(b == BoundingBox{0, 0, 2, 3});
        CHECK(b.area() == 6);
    }
    SUBCASE("single set cell") {
        auto b = largest_rectangle(mask_from_rows({"000", "000", "010"}));
        CHECK(b == BoundingBox{1, 2, 1, 1});
    }
    SUBCASE("all-zero mask errors") {
        CHECK_THROWS_AS(largest_rectangle(mask_from_rows({"00", "00"})), DataError);
    }
}

TEST_CASE("largest_rectangle matches the brute-force oracle on random masks") {
    std::mt19937_64 rng(99);
    int done = 0;
    while (done < 150) {
        const int h = 1 + static_cast<int>(rng() % 12);
        const int w = 1 + static_cast<int>(rng() % 12);
        // mixed densities so small and large rectangles both appear
        const int fill_pct = 20 + static_cast<int>(rng() % 75);
        std::vector<std::string> rows;
        bool any = false;
        for (int r = 0; r < h; ++r) {
            std::string row;
            for (int c = 0; c < w; ++c) {
                const bool set = static_cast<int>(rng() % 100) < fill_pct;
                any = any || set;
                row.push_back(set ? '1' : '0');
            }
            rows.push_back(row);
        }
        if (!any) {
            continue;
        }
        SegmentMask m = mask_from_rows(rows);
        auto expect = rectangle_oracle::brute_force(m);
        REQUIRE(expect.has_value());
        auto got = largest_rectangle(m);
        CAPTURE(done);
        CHECK(got == *expect);
        ++done;
    }
}

TEST_CASE("box_iou hand values") {
    CHECK(box_iou({0, 0, 4, 4}, {0, 0, 4, 4}) == doctest::Approx(1.0));
    CHECK(box_iou({0, 0, 2, 2}, {2, 2, 2, 2}) == doctest::Approx(0.0));
    CHECK(box_iou({0, 0, 4, 4}, {2, 2, 4, 4}) == doctest::Approx(4.0 / 28.0));
}

TEST_CASE("dedup_boxes examples and properties") {
    RefineConfig cfg;
    SUBCASE("identical boxes collapse") {
        auto kept = dedup_boxes({{0, 0, 4, 4}, {0, 0, 4, 4}}, cfg);
        CHECK(kept.size() == 1);
    }
    SUBCASE("disjoint boxes survive") {
        auto kept = dedup_boxes({{0, 0, 2, 2}, {5, 5, 2, 2}}, cfg);
        CHECK(kept.size() == 2);
    }
    SUBCASE("overlap below threshold keeps both") {
        auto kept = dedup_boxes({{0, 0, 4, 4}, {2, 2, 4, 4}}, cfg);
        CHECK(kept.size() == 2); // IoU 4/28 <= 0.5
    }
    SUBCASE("truncates to max_boxes") {
        cfg.max_boxes = 2;
        auto kept = dedup_boxes({{0, 0, 1, 1}, {5, 0, 1, 1}, {10, 0, 1, 1}}, cfg);
        CHECK(kept.size() == 2);
    }
    SUBCASE("order independence and pairwise constraint") {
        std::mt19937_64 rng(3);
        for (int t = 0; t < 50; ++t) {
            std::vector<BoundingBox> boxes;
            const int n = 1 + static_cast<int>(rng() % 10);
            for (int i = 0; i < n; ++i) {
                boxes.push_back(BoundingBox{static_cast<int>(rng() % 10),
                                            static_cast<int>(rng() % 10),
                                            1 + static_cast<int>(rng() % 8),
                                            1 + static_cast<int>(rng() % 8)});
            }
            auto kept = dedup_boxes(boxes, cfg);
            for (size_t i = 0; i < kept.size(); ++i) {
                for (size_t j = i + 1; j < kept.size(); ++j) {
                    CHECK(box_iou(kept[i], kept[j]) <= cfg.box_iou_threshold + 1e-12);
                }
            }
            std::shuffle(boxes.begin(), boxes.end(), rng);
            CHECK(dedup_boxes(boxes, cfg) == kept);
        }
    }
}

TEST_CASE("filter_phrases honors the strict below-threshold rule") {
    RefineConfig cfg; // threshold 0.01
    auto sp = [](const std::string& t, double s) {
        return ScoredPhrase{Phrase{t, PhraseCategory::object}, s};
    };
    auto res = filter_phrases({sp("a", 0.005), sp("b", 0.01), sp("c", 0.5)}, cfg);
    REQUIRE(res.kept.size() == 2);
    CHECK(res.kept[0].phrase.text == "b"); // boundary value kept
    CHECK(res.kept[1].phrase.text == "c");
    REQUIRE(res.discarded.size() == 1);
    CHECK(res.discarded[0].phrase.text == "a");
}

TEST_CASE("filter_phrases partitions its input") {
    std::mt19937_64 rng(4);
    RefineConfig cfg;
    for (int t = 0; t < 50; ++t) {
        std::vector<ScoredPhrase> in;
        const int n = static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) {
            in.push_back(ScoredPhrase{Phrase{"p" + std::to_string(i), PhraseCategory::object},
                                      static_cast<double>(rng() % 1000) / 1000.0});
        }
        auto res = filter_phrases(in, cfg);
        CHECK(res.kept.size() + res.discarded.size() == in.size());
        for (const auto& k : res.kept) {
            CHECK(k.score >= cfg.phrase_score_threshold);
        }
        for (const auto& d : res.discarded) {
            CHECK(d.score < cfg.phrase_score_threshold);
        }
    }
}

namespace {

// One image, one agent, one mask whose largest rectangle is 2x2 at (1,1).
json base_fixture() {
    return json{
        {"segmenter", {{"img1", {{{"segment_id", "s0"}, {"grid", {"0000", "0110", "0110"}}}}}}},
        {"captioner",
         {{"agentA",
           {{"long", {{"img1", "a busy street with cars"}}},
            {"local", {{"img1|1,1,2,2", "a red car"}}}}}}},
        {"detector", {{"img1", {{"red car", 0.9}, {"car", 0.8}}}}},
        {"parser",
         {{"a busy street with cars",
           {{"objects", {"street", "car"}}, {"attributes", {"busy street"}}, {"relations", json::array()}}},
          {"a red car",
           {{"objects", {"car"}}, {"attributes", {"red car"}}, {"relations", json::array()}}}}}};
}

ModelClients agent_of(const StubAgentPool& pool, size_t i = 0) {
    return pool.agents()[i];
}

} // namespace

TEST_CASE("refine_caption pipeline over echo stubs") {
    auto fixture = std::make_shared<const StubFixture>(StubFixture::from_json(base_fixture()));
    StubAgentPool pool = make_stub_agents(fixture);
    RefineConfig cfg;

    SUBCASE("merge context carries the long caption and kept phrases") {
        std::string out = refine_caption("img1", "a busy street with cars", agent_of(pool), cfg);
        CHECK(out.find("a busy street with cars") != std::string::npos);
        CHECK(out.find("red car") != std::string::npos);
        // deterministic: same call, byte-identical output
        CHECK(refine_caption("img1", "a busy street with cars", agent_of(pool), cfg) == out);
    }

    SUBCASE("all-zero detector scores empty the merge context") {
        json doc = base_fixture();
        doc["detector"]["img1"] = json::object();
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc));
        StubAgentPool p2 = make_stub_agents(f2);
        std::string out = refine_caption("img1", "a busy street with cars", agent_of(p2), cfg);
        MergeContext expect;
        expect.long_caption = "a busy street with cars";
        CHECK(out == expect.serialize());
    }

    SUBCASE("no masks returns the caption unchanged") {
        json doc = base_fixture();
        doc["segmenter"].erase("img1");
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc));
        StubAgentPool p2 = make_stub_agents(f2);
        CHECK(refine_caption("img1", "a busy street with cars", agent_of(p2), cfg) ==
              "a busy street with cars");
    }

    SUBCASE("tiny masks are dropped by the area-fraction knob") {
        json doc = base_fixture();
        doc["segmenter"]["img1"] = json::array(
            {{{"segment_id", "tiny"}, {"grid", {"1000000000", "0000000000", "0000000000",
                                                "0000000000", "0000000000", "0000000000",
                                                "0000000000", "0000000000", "0000000000",
                                                "0000000000"}}}});
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc));
        StubAgentPool p2 = make_stub_agents(f2);
        RefineConfig strict = cfg;
        strict.min_mask_area_fraction = 0.05; // 1/100 < 5%
        CHECK(refine_caption("img1", "a busy street with cars", agent_of(p2), strict) ==
              "a busy street with cars");
    }

    SUBCASE("client failure carries the stage annotation") {
        json doc = base_fixture();
        doc["segmenter"]["img1"] = "@fail";
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc));
        StubAgentPool p2 = make_stub_agents(f2);
        CHECK_THROWS_WITH_AS(refine_caption("img1", "x", agent_of(p2), cfg),
                             doctest::Contains("stage=segment"), ClientError);
    }
}

TEST_CASE("build_pair_dataset selects the consensus winner") {
    // three agents: two produce caption A, one produces caption B
    json doc = base_fixture();
    doc["captioner"] = json::object();
    for (const std::string agent : {"agent1", "agent2", "agent3"}) {
        const std::string text = agent == "agent3" ? "boats in a harbor" : "cars on a street";
        doc["captioner"][agent] = json{{"long", {{"img1", text}}},
                                       {"local", {{"img1|1,1,2,2", text}}},
                                       {"merge", {{"img1", text}}}};
    }
    doc["parser"] = json{{"cars on a street",
                          {{"objects", {"car", "street"}},
                           {"attributes", json::array()},
                           {"relations", json::array()}}},
                         {"boats in a harbor",
                          {{"objects", {"boat", "harbor"}},
                           {"attributes", json::array()},
                           {"relations", json::array()}}}};
    doc["detector"]["img1"] = json{{"car", 0.9}, {"street", 0.9}, {"boat", 0.9}, {"harbor", 0.9}};
    auto fixture = std::make_shared<const StubFixture>(StubFixture::from_json(doc));
    StubAgentPool pool = make_stub_agents(fixture);

    RefineConfig cfg;
    CaptureConfig capture_cfg;
    IdentityLexicon lexicon;

    PairDataset data =
        build_pair_dataset({"img1"}, pool.agents(), cfg, capture_cfg, lexicon, nullptr);
    REQUIRE(data.records.size() == 1);
    CHECK(data.records[0].caption_text == "cars on a street");
    CHECK(data.records[0].source_agent == "agent1"); // lowest index among the tie
    CHECK(data.records[0].consensus_score == doctest::Approx(0.5));
    CHECK(data.skipped_images == 0);

    SUBCASE("empty image list gives an empty dataset") {
        PairDataset empty =
            build_pair_dataset({}, pool.agents(), cfg, capture_cfg, lexicon, nullptr);
        CHECK(empty.records.empty());
        CHECK(empty.skipped_images == 0);
    }

    SUBCASE("a failing agent degrades to the remaining candidates") {
        json doc2 = doc;
        doc2["captioner"]["agent2"]["long"]["img1"] = "@fail";
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc2));
        StubAgentPool p2 = make_stub_agents(f2);
        std::vector<std::string> log;
        PairDataset d2 = build_pair_dataset({"img1"}, p2.agents(), cfg, capture_cfg, lexicon,
                                            nullptr, [&](const std::string& m) { log.push_back(m); });
        REQUIRE(d2.records.size() == 1);
        CHECK(d2.skipped_images == 0);
        CHECK(log.size() == 1);
    }

    SUBCASE("an image failing on every agent is skipped and counted") {
        json doc2 = doc;
        for (const std::string agent : {"agent1", "agent2", "agent3"}) {
            doc2["captioner"][agent]["long"]["img1"] = "@fail";
        }
        auto f2 = std::make_shared<const StubFixture>(StubFixture::from_json(doc2));
        StubAgentPool p2 = make_stub_agents(f2);
        PairDataset d2 =
            build_pair_dataset({"img1"}, p2.agents(), cfg, capture_cfg, lexicon, nullptr);
        CHECK(d2.records.empty());
        CHECK(d2.skipped_images == 1);
    }
}

TEST_CASE("keyword parser drops stopwords and keeps content words") {
    KeywordParser p;
    SceneGraph g = p.parse("A tall tree by the quiet road.");
    CHECK(g.objects.count("tall") == 1);
    CHECK(g.objects.count("tree") == 1);
    CHECK(g.objects.count("quiet") == 1);
    CHECK(g.objects.count("road") == 1);
    CHECK(g.objects.count("the") == 0);
    CHECK(g.objects.count("a") == 0);
}
