#include "urbanln/scene_graph.hpp"

#include <cctype>

namespace urbanln {

const char* category_name(PhraseCategory c) {
    switch (c) {
    case PhraseCategory::object: return "objects";
    case PhraseCategory::attribute: return "attributes";
    case PhraseCategory::relation: return "relations";
    }
    return "?";
}

std::string normalize_phrase(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

const PhraseMultiset& SceneGraph::category(PhraseCategory c) const {
    switch (c) {
    case PhraseCategory::object: return objects;
    case PhraseCategory::attribute: return attributes;
    case PhraseCategory::relation: return relations;
    }
    return objects;
}

PhraseMultiset& SceneGraph::category(PhraseCategory c) {
    switch (c) {
    case PhraseCategory::object: return objects;
    case PhraseCategory::attribute: return attributes;
    case PhraseCategory::relation: return relations;
    }
    return objects;
}

void SceneGraph::add(PhraseCategory c, std::string_view raw) {
    std::string text = normalize_phrase(raw);
    if (text.empty()) {
        return;
    }
    category(c)[text] += 1;
}

bool SceneGraph::empty() const {
    return objects.empty() && attributes.empty() && relations.empty();
}

int SceneGraph::total_count() const {
    int n = 0;
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        for (const auto& [text, count] : category(c)) {
            (void)text;
            n += count;
        }
    }
    return n;
}

std::vector<Phrase> SceneGraph::all_phrases() const {
    std::vector<Phrase> out;
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        for (const auto& [text, count] : category(c)) {
            for (int i = 0; i < count; ++i) {
                out.push_back(Phrase{text, c});
            }
        }
    }
    return out;
}

SceneGraph ingest_scene_graph(const json& record) {
    if (!record.is_object()) {
        throw DataError("scene graph record is not an object");
    }
    SceneGraph g;
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        const char* key = category_name(c);
        auto it = record.find(key);
        if (it == record.end()) {
            throw DataError(std::string("scene graph record missing field '") + key + "'");
        }
        if (!it->is_array()) {
            throw DataError(std::string("scene graph field '") + key + "' is not a list");
        }
        size_t idx = 0;
        for (const auto& entry : *it) {
            if (!entry.is_string()) {
                throw DataError(std::string("scene graph field '") + key + "' entry " +
                                std::to_string(idx) + " is not a string");
            }
            g.add(c, entry.get<std::string>());
            ++idx;
        }
    }
    return g;
}

json to_json(const SceneGraph& g) {
    json record = json::object();
    for (PhraseCategory c : {PhraseCategory::object, PhraseCategory::attribute, PhraseCategory::relation}) {
        json list = json::array();
        for (const auto& [text, count] : g.category(c)) {
            for (int i = 0; i < count; ++i) {
                list.push_back(text);
            }
        }
        record[category_name(c)] = std::move(list);
    }
    return record;
}

} // namespace urbanln
