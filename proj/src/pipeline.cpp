#include "urbanln/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "urbanln/checkpoint.hpp"
#include "urbanln/stub_clients.hpp"
#include "urbanln/toy_corpus.hpp"

namespace urbanln {

namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void require_path(const std::string& value, const char* key) {
    if (value.empty()) {
        throw ConfigError(std::string("config key 'paths.") + key + "' is required here");
    }
}

struct CaptureDeps {
    CaptureConfig cfg;
    IdentityLexicon lexicon;
    std::unique_ptr<HashingPhraseEncoder> encoder; // null when soft matching is off

    explicit CaptureDeps(const CaptureSettings& s) : cfg(s.to_capture_config()) {
        if (s.soft_matching) {
            encoder = std::make_unique<HashingPhraseEncoder>();
        }
    }
    const PhraseEncoder* encoder_ptr() const { return encoder.get(); }
};

} // namespace

ScoreCaptionsResult run_score_captions(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.candidates, "candidates");
    CaptureDeps deps(cfg.capture);
    KeywordParser keyword_parser;
    const bool keyword_fallback = cfg.capture.fallback_parser == "keyword";

    // Group candidates by image in first-appearance order.
    std::vector<std::string> image_order;
    std::map<std::string, std::vector<CaptionCandidate>> by_image;
    for (const auto& j : read_jsonl(cfg.paths.candidates)) {
        CaptionCandidate c;
        c.image_id = j.at("image_id").get<std::string>();
        c.id = j.at("candidate_id").get<std::string>();
        c.source_agent = j.value("source_agent", "");
        c.text = j.value("text", "");
        if (j.contains("scene_graph")) {
            c.graph = ingest_scene_graph(j.at("scene_graph"));
        } else if (keyword_fallback) {
            c.graph = keyword_parser.parse(c.text);
        } else {
            throw DataError("candidate '" + c.id + "' has no scene graph and no fallback parser");
        }
        if (!by_image.count(c.image_id)) {
            image_order.push_back(c.image_id);
        }
        for (const auto& prev : by_image[c.image_id]) {
            if (prev.id == c.id) {
                throw DataError("duplicate candidate id '" + c.id + "' for image '" + c.image_id +
                                "'");
            }
        }
        by_image[c.image_id].push_back(std::move(c));
    }
    if (image_order.empty()) {
        throw DataError("no caption candidates in " + cfg.paths.candidates);
    }

    std::vector<json> lines;
    for (const auto& image : image_order) {
        const auto& candidates = by_image[image];
        ConsensusResult res =
            select_caption(candidates, deps.cfg, deps.lexicon, deps.encoder_ptr());
        lines.push_back(json{{"image_id", image},
                             {"scores", res.scores},
                             {"selected_id", candidates[res.selected_index].id}});
    }

    ScoreCaptionsResult out;
    out.report_path = join(out_dir, "consensus.jsonl");
    out.images = static_cast<int>(lines.size());
    write_jsonl(out.report_path, lines);
    return out;
}

BuildCaptionsResult run_build_captions(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.fixtures, "fixtures");
    auto fixture = std::make_shared<const StubFixture>(StubFixture::from_file(cfg.paths.fixtures));
    StubAgentPool pool = make_stub_agents(fixture);
    if (pool.captioners.empty()) {
        throw DataError("fixture file names no captioning agents");
    }
    std::vector<std::string> images = fixture_image_refs(*fixture);
    CaptureDeps deps(cfg.capture);

    std::vector<std::string> log_lines;
    PairDataset data = build_pair_dataset(images, pool.agents(), cfg.refine, deps.cfg,
                                          deps.lexicon, deps.encoder_ptr(),
                                          [&](const std::string& m) { log_lines.push_back(m); });

    std::vector<json> lines;
    for (const auto& r : data.records) {
        lines.push_back(json{{"image_id", r.image_id},
                             {"caption_text", r.caption_text},
                             {"source_agent", r.source_agent},
                             {"consensus_score", r.consensus_score}});
    }
    BuildCaptionsResult out;
    out.dataset_path = join(out_dir, "dataset.jsonl");
    out.records = static_cast<int>(lines.size());
    out.skipped = data.skipped_images;
    write_jsonl(out.dataset_path, lines);
    json summary{{"images", images.size()},
                 {"records", out.records},
                 {"skipped_images", out.skipped},
                 {"log", log_lines}};
    write_text_atomic(join(out_dir, "build_summary.json"), summary.dump(2) + "\n");
    return out;
}

PretrainResult run_pretrain(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.pairs, "pairs");
    require_path(cfg.paths.imagestore, "imagestore");
    downstream::ImageStore store = downstream::ImageStore::load(cfg.paths.imagestore);

    std::vector<PairExample> dataset;
    for (const auto& j : read_jsonl(cfg.paths.pairs)) {
        const std::string image_id = j.at("image_id").get<std::string>();
        const nn::Tensor* patches = store.find(image_id);
        if (patches == nullptr) {
            throw DataError("pair references unknown image '" + image_id + "'");
        }
        PairExample ex;
        ex.patches = *patches;
        if (j.contains("tokens")) {
            ex.tokens = j.at("tokens").get<std::vector<int>>();
        } else if (j.contains("caption_text")) {
            ex.tokens = hash_tokenize(j.at("caption_text").get<std::string>(),
                                      cfg.encoder.vocab_size);
        } else {
            throw DataError("pair record for '" + image_id + "' has neither tokens nor text");
        }
        dataset.push_back(std::move(ex));
    }

    Trainer trainer(cfg.encoder, cfg.ipsi, cfg.train);
    std::vector<json> metrics;
    trainer.run(dataset, [&](const StepMetrics& m) {
        metrics.push_back(json{{"step", m.step},
                               {"l_c", m.loss.l_c},
                               {"l_d", m.loss.l_d},
                               {"total", m.loss.total},
                               {"tau", m.tau}});
    });

    PretrainResult out;
    out.metrics_path = join(out_dir, "metrics.jsonl");
    out.checkpoint_path = join(out_dir, "checkpoint.bin");
    out.steps = trainer.step_count();
    write_jsonl(out.metrics_path, metrics);
    save_checkpoint(trainer, out.checkpoint_path);
    return out;
}

ExtractResult run_extract(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.checkpoint, "checkpoint");
    require_path(cfg.paths.imagestore, "imagestore");
    require_path(cfg.paths.regions, "regions");
    auto trainer = load_checkpoint(cfg.paths.checkpoint);
    downstream::ImageStore store = downstream::ImageStore::load(cfg.paths.imagestore);

    std::vector<json> lines;
    std::vector<std::string> skipped;
    int regions = 0;
    for (const auto& j : read_jsonl(cfg.paths.regions)) {
        downstream::RegionRecord r = downstream::region_from_json(j);
        ++regions;
        std::vector<std::string> ids;
        if (cfg.downstream.imagery == "satellite") {
            if (r.satellite_image_id) {
                ids.push_back(*r.satellite_image_id);
            }
        } else {
            ids = r.street_view_image_ids;
        }
        downstream::ExtractOutcome feats = downstream::extract_features(*trainer, ids, store);
        std::vector<std::vector<double>> present;
        for (auto& e : feats.embeddings) {
            if (e) {
                present.push_back(std::move(*e));
            }
        }
        if (present.empty()) {
            skipped.push_back(r.region_id);
            continue;
        }
        lines.push_back(
            json{{"region_id", r.region_id}, {"vector", downstream::pool_region(present)}});
    }

    ExtractResult out;
    out.embeddings_path = join(out_dir, "embeddings.jsonl");
    out.regions = static_cast<int>(lines.size());
    out.skipped = static_cast<int>(skipped.size());
    write_jsonl(out.embeddings_path, lines);
    json summary{{"regions", regions}, {"embedded", out.regions}, {"skipped", skipped}};
    write_text_atomic(join(out_dir, "extract_summary.json"), summary.dump(2) + "\n");
    return out;
}

PredictResult run_predict(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.embeddings, "embeddings");
    require_path(cfg.paths.regions, "regions");
    const std::string& indicator = cfg.downstream.indicator;

    std::map<std::string, std::vector<double>> embeddings;
    for (const auto& j : read_jsonl(cfg.paths.embeddings)) {
        embeddings[j.at("region_id").get<std::string>()] =
            j.at("vector").get<std::vector<double>>();
    }

    struct Row {
        std::string region_id;
        std::vector<double> x;
        double y;
    };
    std::vector<Row> rows;
    int dropped = 0;
    for (const auto& j : read_jsonl(cfg.paths.regions)) {
        downstream::RegionRecord r = downstream::region_from_json(j);
        auto e = embeddings.find(r.region_id);
        auto ind = r.indicators.find(indicator);
        if (e == embeddings.end() || ind == r.indicators.end()) {
            ++dropped;
            continue;
        }
        rows.push_back(Row{r.region_id, e->second, downstream::log_transform(ind->second)});
    }
    if (rows.size() < 5) {
        throw DataError("predict needs at least 5 regions with embeddings and indicator '" +
                        indicator + "', got " + std::to_string(rows.size()));
    }

    downstream::SplitIndices split =
        downstream::split_dataset(static_cast<int>(rows.size()), derive_seed(cfg.seed, "split"));
    auto gather_x = [&](const std::vector<int>& idx) {
        std::vector<std::vector<double>> xs;
        for (int i : idx) {
            xs.push_back(rows[static_cast<size_t>(i)].x);
        }
        return xs;
    };
    auto gather_y = [&](const std::vector<int>& idx) {
        std::vector<double> ys;
        for (int i : idx) {
            ys.push_back(rows[static_cast<size_t>(i)].y);
        }
        return ys;
    };

    downstream::RegressionHead head(static_cast<int>(rows[0].x.size()), cfg.head,
                                    derive_seed(cfg.seed, "head"));
    auto fit = head.fit(gather_x(split.train), gather_y(split.train), gather_x(split.val),
                        gather_y(split.val));

    std::vector<std::string> split_label(rows.size(), "train");
    for (int i : split.val) {
        split_label[static_cast<size_t>(i)] = "val";
    }
    for (int i : split.test) {
        split_label[static_cast<size_t>(i)] = "test";
    }

    std::vector<json> lines;
    std::vector<std::vector<double>> all_x;
    for (const auto& r : rows) {
        all_x.push_back(r.x);
    }
    std::vector<double> preds = head.predict_all(all_x);
    for (size_t i = 0; i < rows.size(); ++i) {
        lines.push_back(json{{"region_id", rows[i].region_id},
                             {"split", split_label[i]},
                             {"truth", rows[i].y},
                             {"prediction", preds[i]}});
    }

    PredictResult out;
    out.predictions_path = join(out_dir, "predictions.jsonl");
    out.n_train = static_cast<int>(split.train.size());
    out.n_val = static_cast<int>(split.val.size());
    out.n_test = static_cast<int>(split.test.size());
    out.dropped = dropped;
    write_jsonl(out.predictions_path, lines);
    json summary{{"indicator", indicator},
                 {"n_train", out.n_train},
                 {"n_val", out.n_val},
                 {"n_test", out.n_test},
                 {"dropped", dropped},
                 {"epochs_run", fit.epochs_run},
                 {"train_rmse", fit.train_rmse}};
    write_text_atomic(join(out_dir, "head_summary.json"), summary.dump(2) + "\n");
    return out;
}

namespace {

void read_predictions(const std::string& path, std::vector<downstream::ScatterPoint>* points) {
    for (const auto& j : read_jsonl(path)) {
        points->push_back(downstream::ScatterPoint{j.at("region_id").get<std::string>(),
                                                   j.at("truth").get<double>(),
                                                   j.at("prediction").get<double>(),
                                                   j.at("split").get<std::string>()});
    }
    if (points->empty()) {
        throw DataError("no predictions in " + path);
    }
}

downstream::EvalReport eval_subset(const std::vector<downstream::ScatterPoint>& points,
                                   const std::string& split) {
    std::vector<double> preds, truths;
    for (const auto& p : points) {
        if (split.empty() || p.split == split) {
            preds.push_back(p.prediction);
            truths.push_back(p.truth);
        }
    }
    return downstream::evaluate(preds, truths);
}

} // namespace

EvaluateResult run_evaluate(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.predictions, "predictions");
    std::vector<downstream::ScatterPoint> points;
    read_predictions(cfg.paths.predictions, &points);
    EvaluateResult out;
    out.report = eval_subset(points, "test");
    out.report_path = join(out_dir, "report.json");
    json j{{"r2", out.report.r2},
           {"rmse", out.report.rmse},
           {"mae", out.report.mae},
           {"n_test", out.report.n_test}};
    write_text_atomic(out.report_path, j.dump(2) + "\n");
    return out;
}

ReportResult run_report(const PipelineConfig& cfg, const std::string& out_dir) {
    require_path(cfg.paths.predictions, "predictions");
    std::vector<downstream::ScatterPoint> points;
    read_predictions(cfg.paths.predictions, &points);
    ReportResult out;
    out.r2_test = eval_subset(points, "test").r2;
    out.r2_all = eval_subset(points, "").r2;
    out.scatter_path = join(out_dir, "scatter.jsonl");
    out.svg_path = join(out_dir, "scatter.svg");
    downstream::write_scatter_report(out.scatter_path, out.svg_path, points, out.r2_test,
                                     out.r2_all);
    return out;
}

namespace {

const char* kUsage =
    "usage: urbanln <subcommand> [--config PATH] [--seed N] [--out DIR]\n"
    "subcommands: build-captions score-captions pretrain extract predict evaluate report\n";

std::string run_stamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_utc);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                        now.time_since_epoch())
                        .count() %
                    1000000;
    return std::string(buf) + "-" + std::to_string(us);
}

} // namespace

int dispatch(int argc, const char* const* argv) {
    const std::set<std::string> known = {"build-captions", "score-captions", "pretrain",
                                         "extract",        "predict",        "evaluate",
                                         "report"};
    if (argc < 2 || !known.count(argv[1])) {
        std::cerr << kUsage;
        return 2;
    }
    const std::string sub = argv[1];

    std::string config_path, out_override;
    std::optional<std::uint64_t> seed_override;
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&](const char* flag) -> std::string {
            if (i + 1 >= argc) {
                throw ConfigError(std::string(flag) + " needs a value");
            }
            return argv[++i];
        };
        try {
            if (arg == "--config") {
                config_path = next("--config");
            } else if (arg == "--seed") {
                seed_override = std::stoull(next("--seed"));
            } else if (arg == "--out") {
                out_override = next("--out");
            } else {
                std::cerr << kUsage;
                return 2;
            }
        } catch (const Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "error: bad argument for " << arg << ": " << e.what() << "\n";
            return 1;
        }
    }

    try {
        PipelineConfig cfg =
            config_path.empty() ? config_from_json(json::object()) : load_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.train.seed = derive_seed(cfg.seed, "pretrain");
        }
        std::string out_dir = out_override.empty()
                                  ? join(cfg.paths.out_root, sub + "-" + run_stamp())
                                  : out_override;
        fs::create_directories(out_dir);

        json summary;
        if (sub == "score-captions") {
            auto r = run_score_captions(cfg, out_dir);
            summary = json{{"subcommand", sub}, {"report", r.report_path}, {"images", r.images}};
        } else if (sub == "build-captions") {
            auto r = run_build_captions(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"dataset", r.dataset_path},
                           {"records", r.records},
                           {"skipped_images", r.skipped}};
        } else if (sub == "pretrain") {
            auto r = run_pretrain(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"metrics", r.metrics_path},
                           {"checkpoint", r.checkpoint_path},
                           {"steps", r.steps}};
        } else if (sub == "extract") {
            auto r = run_extract(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"embeddings", r.embeddings_path},
                           {"regions", r.regions},
                           {"skipped", r.skipped}};
        } else if (sub == "predict") {
            auto r = run_predict(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"predictions", r.predictions_path},
                           {"n_train", r.n_train},
                           {"n_val", r.n_val},
                           {"n_test", r.n_test},
                           {"dropped", r.dropped}};
        } else if (sub == "evaluate") {
            auto r = run_evaluate(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"report", r.report_path},
                           {"r2", r.report.r2},
                           {"rmse", r.report.rmse},
                           {"mae", r.report.mae},
                           {"n_test", r.report.n_test}};
        } else if (sub == "report") {
            auto r = run_report(cfg, out_dir);
            summary = json{{"subcommand", sub},
                           {"scatter", r.scatter_path},
                           {"svg", r.svg_path},
                           {"r2_test", r.r2_test},
                           {"r2_all", r.r2_all}};
        }
        std::cout << summary.dump() << "\n";
        return 0;
    } catch (const Error& e) {
        std::string msg = e.what();
        for (char& c : msg) {
            if (c == '\n') {
                c = ' ';
            }
        }
        std::cerr << "error: " << msg << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace urbanln
