#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "urbanln/refinery.hpp"

namespace urbanln {

// Bag-of-words fallback parser: lowercases, drops a small stopword list, and
// emits each remaining word as an object phrase. Good enough for demos and
// fixtures that do not supply real parses.
class KeywordParser : public ParserClient {
public:
    SceneGraph parse(const std::string& text) override;
};

// All stub clients read canned responses from one fixture document:
//
//   {
//     "segmenter": {"<image>": [{"segment_id": "s0", "grid": ["0110", ...]}]},
//     "captioner": {
//       "<agent>": {
//         "long":  {"<image>": "caption text"},
//         "local": {"<image>|x,y,w,h": "local caption"},
//         "merge": {"<image>": "merged caption"}          // optional
//       }
//     },
//     "detector": {"<image>": {"<phrase>": 0.42, ...}},
//     "parser":   {"<caption text>": {"objects": [...], "attributes": [...], "relations": [...]}},
//     "parser_fallback": "keyword" | "error"
//   }
//
// A response value of "@fail" raises ClientError (used to exercise the
// degradation paths). Missing merge entries echo the serialized context;
// phrases unknown to the detector score 0.
struct StubFixture {
    json doc;

    static StubFixture from_file(const std::string& path);
    static StubFixture from_json(json doc);
};

class StubCaptioner : public CaptionerClient {
public:
    StubCaptioner(std::shared_ptr<const StubFixture> fixture, std::string agent);
    std::string agent_name() const override { return agent_; }
    std::string caption(const std::string& image_ref, PromptKind kind,
                        const std::string& context) override;

private:
    std::shared_ptr<const StubFixture> fixture_;
    std::string agent_;
};

class StubSegmenter : public SegmenterClient {
public:
    explicit StubSegmenter(std::shared_ptr<const StubFixture> fixture);
    std::vector<SegmentMask> segment(const std::string& image_ref) override;

private:
    std::shared_ptr<const StubFixture> fixture_;
};

class StubDetector : public DetectorClient {
public:
    explicit StubDetector(std::shared_ptr<const StubFixture> fixture);
    std::vector<ScoredPhrase> score(const std::string& image_ref,
                                    const std::vector<Phrase>& phrases) override;

private:
    std::shared_ptr<const StubFixture> fixture_;
};

class StubParser : public ParserClient {
public:
    explicit StubParser(std::shared_ptr<const StubFixture> fixture);
    SceneGraph parse(const std::string& text) override;

private:
    std::shared_ptr<const StubFixture> fixture_;
    KeywordParser fallback_;
    bool use_fallback_ = false;
};

// Owns the per-agent stub client sets built from one fixture.
struct StubAgentPool {
    std::shared_ptr<const StubFixture> fixture;
    std::vector<std::unique_ptr<StubCaptioner>> captioners;
    std::unique_ptr<StubSegmenter> segmenter;
    std::unique_ptr<StubDetector> detector;
    std::unique_ptr<StubParser> parser;

    std::vector<ModelClients> agents() const;
    // Sorted agent names found in the fixture.
    static std::vector<std::string> agent_names(const StubFixture& fixture);
};

StubAgentPool make_stub_agents(std::shared_ptr<const StubFixture> fixture);

// Image refs named anywhere in the fixture (segmenter or long captions), sorted.
std::vector<std::string> fixture_image_refs(const StubFixture& fixture);

SegmentMask mask_from_json(const json& j);

} // namespace urbanln
