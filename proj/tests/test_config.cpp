#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "urbanln/config.hpp"
#include "urbanln/pipeline.hpp"
#include "urbanln/toy_corpus.hpp"

using namespace urbanln;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("urbanln_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

} // namespace

TEST_CASE("empty config file yields the published defaults") {
    TempDir tmp("cfg_empty");
    write_file(tmp.file("empty.json"), "");
    PipelineConfig cfg = load_config(tmp.file("empty.json"));
    CHECK(cfg.ipsi.lambda == 4);
    CHECK(cfg.train.mu == doctest::Approx(0.5));
    CHECK(cfg.train.momentum == doctest::Approx(0.995));
    CHECK(cfg.train.queue_capacity == 4096);
    CHECK(cfg.capture.weights.alpha == doctest::Approx(5.0));
    CHECK(cfg.capture.weights.beta == doctest::Approx(5.0));
    CHECK(cfg.capture.weights.gamma == doctest::Approx(2.0));
    CHECK(cfg.refine.phrase_score_threshold == doctest::Approx(0.01));
}

TEST_CASE("range violations name the key and expected range") {
    json doc{{"train", {{"mu", 1.5}}}};
    CHECK_THROWS_WITH_AS(config_from_json(doc), doctest::Contains("train.mu must be in (0,1)"),
                         ConfigError);
    json doc2{{"train", {{"mu", 0.0}}}};
    CHECK_THROWS_AS(config_from_json(doc2), ConfigError);
    json doc3{{"refine", {{"phrase_score_threshold", 1.5}}}};
    CHECK_THROWS_WITH_AS(config_from_json(doc3), doctest::Contains("phrase_score_threshold"),
                         ConfigError);
}

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_WITH_AS(config_from_json(json{{"foo", 1}}),
                         doctest::Contains("unknown config key 'foo'"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(json{{"train", {{"bogus", 1}}}}),
                         doctest::Contains("train.bogus"), ConfigError);
}

TEST_CASE("type errors are reported") {
    CHECK_THROWS_AS(config_from_json(json{{"seed", "abc"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"batch_size", 2.5}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"capture", {{"stop_phrases", {1, 2}}}}}), ConfigError);
}

TEST_CASE("seed fan-out is deterministic and stage-dependent") {
    CHECK(derive_seed(1, "pretrain") == derive_seed(1, "pretrain"));
    CHECK(derive_seed(1, "pretrain") != derive_seed(1, "split"));
    CHECK(derive_seed(1, "pretrain") != derive_seed(2, "pretrain"));
    PipelineConfig a = config_from_json(json{{"seed", 5}});
    CHECK(a.seed == 5);
    CHECK(a.train.seed == derive_seed(5, "pretrain"));
}

TEST_CASE("score-captions produces one consensus record per image") {
    TempDir tmp("score");
    std::string candidates;
    auto line = [&](const std::string& image, const std::string& cand,
                    const std::vector<std::string>& objects) {
        json rec{{"image_id", image},
                 {"candidate_id", cand},
                 {"source_agent", "a"},
                 {"text", "t"},
                 {"scene_graph",
                  {{"objects", objects}, {"attributes", json::array()}, {"relations", json::array()}}}};
        candidates += rec.dump() + "\n";
    };
    line("img1", "c0", {"car"});
    line("img1", "c1", {"car"});
    line("img1", "c2", {"boat"});
    line("img2", "c0", {"tree"});
    write_file(tmp.file("candidates.jsonl"), candidates);

    PipelineConfig cfg = config_from_json(json::object());
    cfg.capture.soft_matching = false; // hand values below assume exact-only matching
    cfg.paths.candidates = tmp.file("candidates.jsonl");
    auto res = run_score_captions(cfg, tmp.path.string());
    CHECK(res.images == 2);

    auto lines = read_jsonl(res.report_path);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].at("image_id") == "img1");
    CHECK(lines[0].at("selected_id") == "c0");
    auto scores = lines[0].at("scores").get<std::vector<double>>();
    REQUIRE(scores.size() == 3);
    CHECK(scores[0] == doctest::Approx(0.5));
    CHECK(scores[2] == doctest::Approx(0.0));
    CHECK(lines[1].at("image_id") == "img2");
    CHECK(lines[1].at("scores").get<std::vector<double>>() == std::vector<double>{0.0});
}

TEST_CASE("score-captions rejects duplicate candidate ids within an image") {
    TempDir tmp("score_dup");
    json sg{{"objects", {"car"}}, {"attributes", json::array()}, {"relations", json::array()}};
    json a{{"image_id", "img"}, {"candidate_id", "c0"}, {"text", "t"}, {"scene_graph", sg}};
    write_file(tmp.file("candidates.jsonl"), a.dump() + "\n" + a.dump() + "\n");
    PipelineConfig cfg = config_from_json(json::object());
    cfg.paths.candidates = tmp.file("candidates.jsonl");
    CHECK_THROWS_WITH_AS(run_score_captions(cfg, tmp.path.string()),
                         doctest::Contains("duplicate candidate id"), DataError);
}

TEST_CASE("score-captions without scene graphs follows the fallback setting") {
    TempDir tmp("score_fb");
    json rec{{"image_id", "img"}, {"candidate_id", "c0"}, {"text", "a tall tree"}};
    write_file(tmp.file("candidates.jsonl"), rec.dump() + "\n");
    PipelineConfig cfg = config_from_json(json::object());
    cfg.paths.candidates = tmp.file("candidates.jsonl");
    CHECK_THROWS_WITH_AS(run_score_captions(cfg, tmp.path.string()), doctest::Contains("c0"),
                         DataError);
    cfg.capture.fallback_parser = "keyword";
    auto res = run_score_captions(cfg, tmp.path.string());
    CHECK(res.images == 1);
}

TEST_CASE("pretrain runs are reproducible byte-for-byte") {
    TempDir tmp("pretrain_repro");
    ToyCorpusConfig tcfg;
    tcfg.train_pairs = 12;
    tcfg.eval_pairs = 0;
    tcfg.latent_dim = 4;
    tcfg.patch_count = 2;
    tcfg.patch_dim = 4;
    tcfg.buckets_per_dim = 3;
    ToyCorpus corpus = make_toy_corpus(tcfg);
    write_corpus_files(corpus, tmp.file("imagestore.jsonl"), tmp.file("pairs.jsonl"));

    PipelineConfig cfg = config_from_json(json::object());
    cfg.paths.imagestore = tmp.file("imagestore.jsonl");
    cfg.paths.pairs = tmp.file("pairs.jsonl");
    cfg.encoder.depth = 1;
    cfg.encoder.d_model = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.mlp_ratio = 2;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.vocab_size = corpus.vocab_size;
    cfg.encoder.pos_base_len = 21;
    cfg.encoder.patch_count = 2;
    cfg.encoder.patch_dim = 4;
    cfg.ipsi.lambda = 1;
    cfg.train.batch_size = 4;
    cfg.train.epochs = 3;
    cfg.train.queue_capacity = 8;

    fs::create_directories(tmp.file("runA"));
    fs::create_directories(tmp.file("runB"));
    auto a = run_pretrain(cfg, tmp.file("runA"));
    auto b = run_pretrain(cfg, tmp.file("runB"));
    CHECK(a.steps == 9);
    CHECK(read_text_file(a.metrics_path) == read_text_file(b.metrics_path));
    CHECK(read_text_file(a.checkpoint_path) == read_text_file(b.checkpoint_path));

    SUBCASE("extract pools street views, passes satellites through, skips empty regions") {
        std::vector<json> regions;
        regions.push_back(json{{"region_id", "r0"},
                               {"street_view_ids", {"toy-0", "toy-1"}},
                               {"satellite_id", "toy-2"},
                               {"indicators", {{"activity", 1.0}}}});
        regions.push_back(json{{"region_id", "r-empty"},
                               {"street_view_ids", json::array()},
                               {"indicators", {{"activity", 1.0}}}});
        write_jsonl(tmp.file("regions.jsonl"), regions);
        cfg.paths.checkpoint = a.checkpoint_path;
        cfg.paths.regions = tmp.file("regions.jsonl");

        fs::create_directories(tmp.file("exStreet"));
        auto street = run_extract(cfg, tmp.file("exStreet"));
        CHECK(street.regions == 1);
        CHECK(street.skipped == 1); // the region with no street views

        cfg.downstream.imagery = "satellite";
        fs::create_directories(tmp.file("exSat"));
        auto sat = run_extract(cfg, tmp.file("exSat"));
        CHECK(sat.regions == 1);
        CHECK(sat.skipped == 1); // r-empty has no satellite either

        // satellite embedding is the single image's embedding, street is a pooled pair
        auto sat_lines = read_jsonl((fs::path(tmp.file("exSat")) / "embeddings.jsonl").string());
        auto street_lines =
            read_jsonl((fs::path(tmp.file("exStreet")) / "embeddings.jsonl").string());
        REQUIRE(sat_lines.size() == 1);
        REQUIRE(street_lines.size() == 1);
        CHECK(sat_lines[0].at("vector") != street_lines[0].at("vector"));
    }
}

TEST_CASE("dispatch rejects unknown subcommands with exit 2") {
    const char* bad[] = {"urbanln", "frobnicate"};
    CHECK(dispatch(2, bad) == 2);
    const char* none[] = {"urbanln"};
    CHECK(dispatch(1, none) == 2);
}

TEST_CASE("dispatch reports missing inputs as a single error") {
    TempDir tmp("dispatch_err");
    const std::string out = tmp.file("out");
    const char* args[] = {"urbanln", "score-captions", "--out", out.c_str()};
    CHECK(dispatch(4, args) == 1); // no candidates path configured
}
