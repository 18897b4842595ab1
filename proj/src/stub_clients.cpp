#include "urbanln/stub_clients.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "urbanln/jsonl.hpp"

namespace urbanln {

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words = {
        "a", "an", "the", "and", "or", "of", "with", "in", "on", "at", "is",
        "are", "was", "were", "to", "by", "for", "this", "that", "there"};
    return words;
}

[[noreturn]] void fail(const std::string& what) {
    throw ClientError(what);
}

std::string check_fail(std::string value, const std::string& what) {
    if (value == "@fail") {
        fail(what + ": canned failure");
    }
    return value;
}

} // namespace

SceneGraph KeywordParser::parse(const std::string& text) {
    SceneGraph g;
    std::istringstream is(normalize_phrase(text));
    std::string word;
    while (is >> word) {
        // strip surrounding punctuation
        size_t b = word.find_first_not_of(".,;:!?()\"'");
        size_t e = word.find_last_not_of(".,;:!?()\"'");
        if (b == std::string::npos) {
            continue;
        }
        word = word.substr(b, e - b + 1);
        if (word.empty() || stopwords().count(word)) {
            continue;
        }
        g.add(PhraseCategory::object, word);
    }
    return g;
}

StubFixture StubFixture::from_file(const std::string& path) {
    return from_json(parse_json(read_text_file(path), "fixture file " + path));
}

StubFixture StubFixture::from_json(json doc) {
    if (!doc.is_object()) {
        throw DataError("fixture document must be a JSON object");
    }
    return StubFixture{std::move(doc)};
}

StubCaptioner::StubCaptioner(std::shared_ptr<const StubFixture> fixture, std::string agent)
    : fixture_(std::move(fixture)), agent_(std::move(agent)) {}

std::string StubCaptioner::caption(const std::string& image_ref, PromptKind kind,
                                   const std::string& context) {
    const json& doc = fixture_->doc;
    const char* kind_name = prompt_kind_name(kind);
    std::string key = image_ref;
    if (kind == PromptKind::local_caption) {
        key += "|" + context;
    }
    auto agents = doc.find("captioner");
    if (agents != doc.end()) {
        auto agent = agents->find(agent_);
        if (agent != agents->end()) {
            auto table = agent->find(kind_name);
            if (table != agent->end()) {
                auto entry = table->find(key);
                if (entry != table->end() && entry->is_string()) {
                    return check_fail(entry->get<std::string>(),
                                      "captioner " + agent_ + " " + kind_name + " " + key);
                }
            }
        }
    }
    if (kind == PromptKind::merge) {
        return context; // echo: merged caption is the serialized context
    }
    fail("captioner " + agent_ + ": no fixture entry for " + std::string(kind_name) + " " + key);
}

StubSegmenter::StubSegmenter(std::shared_ptr<const StubFixture> fixture)
    : fixture_(std::move(fixture)) {}

SegmentMask mask_from_json(const json& j) {
    SegmentMask m;
    m.segment_id = j.value("segment_id", "");
    const auto& rows = j.at("grid");
    if (!rows.is_array() || rows.empty()) {
        throw DataError("mask '" + m.segment_id + "' grid must be a non-empty array of strings");
    }
    m.height = static_cast<int>(rows.size());
    m.width = static_cast<int>(rows[0].get<std::string>().size());
    if (m.width < 1) {
        throw DataError("mask '" + m.segment_id + "' has an empty row");
    }
    for (const auto& row : rows) {
        std::string s = row.get<std::string>();
        if (static_cast<int>(s.size()) != m.width) {
            throw DataError("mask '" + m.segment_id + "' has ragged rows");
        }
        for (char c : s) {
            if (c != '0' && c != '1') {
                throw DataError("mask '" + m.segment_id + "' has a cell that is not 0/1");
            }
            m.grid.push_back(c == '1' ? 1 : 0);
        }
    }
    return m;
}

std::vector<SegmentMask> StubSegmenter::segment(const std::string& image_ref) {
    const json& doc = fixture_->doc;
    auto table = doc.find("segmenter");
    if (table == doc.end()) {
        return {};
    }
    auto entry = table->find(image_ref);
    if (entry == table->end()) {
        return {};
    }
    if (entry->is_string()) {
        check_fail(entry->get<std::string>(), "segmenter " + image_ref);
    }
    std::vector<SegmentMask> masks;
    for (const auto& j : *entry) {
        masks.push_back(mask_from_json(j));
    }
    return masks;
}

StubDetector::StubDetector(std::shared_ptr<const StubFixture> fixture)
    : fixture_(std::move(fixture)) {}

std::vector<ScoredPhrase> StubDetector::score(const std::string& image_ref,
                                              const std::vector<Phrase>& phrases) {
    const json& doc = fixture_->doc;
    const json* scores = nullptr;
    auto table = doc.find("detector");
    if (table != doc.end()) {
        auto entry = table->find(image_ref);
        if (entry != table->end()) {
            if (entry->is_string()) {
                check_fail(entry->get<std::string>(), "detector " + image_ref);
            }
            scores = &*entry;
        }
    }
    std::vector<ScoredPhrase> out;
    for (const auto& p : phrases) {
        double s = 0.0;
        if (scores != nullptr) {
            auto it = scores->find(p.text);
            if (it != scores->end()) {
                s = it->get<double>();
            }
        }
        out.push_back(ScoredPhrase{p, s});
    }
    return out;
}

StubParser::StubParser(std::shared_ptr<const StubFixture> fixture) : fixture_(std::move(fixture)) {
    use_fallback_ = fixture_->doc.value("parser_fallback", "error") == "keyword";
}

SceneGraph StubParser::parse(const std::string& text) {
    const json& doc = fixture_->doc;
    auto table = doc.find("parser");
    if (table != doc.end()) {
        auto entry = table->find(text);
        if (entry != table->end()) {
            if (entry->is_string()) {
                check_fail(entry->get<std::string>(), "parser");
            }
            return ingest_scene_graph(*entry);
        }
    }
    if (use_fallback_) {
        return fallback_.parse(text);
    }
    fail("parser: no fixture entry for caption text '" + text + "'");
}

std::vector<std::string> StubAgentPool::agent_names(const StubFixture& fixture) {
    std::vector<std::string> names;
    auto agents = fixture.doc.find("captioner");
    if (agents != fixture.doc.end()) {
        for (auto it = agents->begin(); it != agents->end(); ++it) {
            names.push_back(it.key());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

std::vector<ModelClients> StubAgentPool::agents() const {
    std::vector<ModelClients> out;
    for (const auto& c : captioners) {
        out.push_back(ModelClients{c.get(), segmenter.get(), detector.get(), parser.get()});
    }
    return out;
}

StubAgentPool make_stub_agents(std::shared_ptr<const StubFixture> fixture) {
    StubAgentPool pool;
    pool.fixture = fixture;
    for (const auto& name : StubAgentPool::agent_names(*fixture)) {
        pool.captioners.push_back(std::make_unique<StubCaptioner>(fixture, name));
    }
    pool.segmenter = std::make_unique<StubSegmenter>(fixture);
    pool.detector = std::make_unique<StubDetector>(fixture);
    pool.parser = std::make_unique<StubParser>(fixture);
    return pool;
}

std::vector<std::string> fixture_image_refs(const StubFixture& fixture) {
    std::set<std::string> refs;
    auto seg = fixture.doc.find("segmenter");
    if (seg != fixture.doc.end()) {
        for (auto it = seg->begin(); it != seg->end(); ++it) {
            refs.insert(it.key());
        }
    }
    auto agents = fixture.doc.find("captioner");
    if (agents != fixture.doc.end()) {
        for (const auto& agent : *agents) {
            auto table = agent.find("long");
            if (table != agent.end()) {
                for (auto it = table->begin(); it != table->end(); ++it) {
                    refs.insert(it.key());
                }
            }
        }
    }
    return {refs.begin(), refs.end()};
}

} // namespace urbanln
