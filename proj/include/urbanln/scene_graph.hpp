#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "urbanln/common.hpp"

namespace urbanln {

using json = nlohmann::json;

enum class PhraseCategory { object, attribute, relation };

const char* category_name(PhraseCategory c);

// A canonical (lowercase, whitespace-collapsed) phrase. Empty text is never
// stored in a scene graph; normalize_phrase returning "" tells the caller to
// drop the phrase.
struct Phrase {
    std::string text;
    PhraseCategory category = PhraseCategory::object;

    bool operator==(const Phrase&) const = default;
};

// Lowercases, trims, and collapses internal whitespace. Idempotent.
// Returns "" when nothing is left (the drop marker).
std::string normalize_phrase(std::string_view raw);

// Multiset of phrases per category, keyed by canonical text. Values are
// occurrence counts (>= 1).
using PhraseMultiset = std::map<std::string, int>;

struct SceneGraph {
    PhraseMultiset objects;
    PhraseMultiset attributes;
    PhraseMultiset relations;

    bool operator==(const SceneGraph&) const = default;

    const PhraseMultiset& category(PhraseCategory c) const;
    PhraseMultiset& category(PhraseCategory c);

    // Adds a raw phrase after normalization; empty results are dropped.
    void add(PhraseCategory c, std::string_view raw);

    bool empty() const;
    int total_count() const;

    // Every phrase with its category tag, objects first, sorted by text,
    // duplicates repeated.
    std::vector<Phrase> all_phrases() const;
};

// Record format: {"objects": [...], "attributes": [...], "relations": [...]},
// each a list of strings. Missing keys or non-string entries raise DataError
// naming the field.
SceneGraph ingest_scene_graph(const json& record);

json to_json(const SceneGraph& g);

// One generated caption for an image.
struct CaptionCandidate {
    std::string id;
    std::string image_id;
    std::string source_agent;
    std::string text;
    std::optional<SceneGraph> graph;
};

} // namespace urbanln
