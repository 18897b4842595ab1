#include "urbanln/refinery.hpp"

#include <algorithm>
#include <set>

namespace urbanln {

int SegmentMask::set_cells() const {
    int n = 0;
    for (auto v : grid) {
        n += (v != 0);
    }
    return n;
}

std::string BoundingBox::key() const {
    return std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) + "," +
           std::to_string(h);
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.x + a.w, b.x + b.w);
    const int y1 = std::min(a.y + a.h, b.y + b.h);
    const long long inter =
        static_cast<long long>(std::max(0, x1 - x0)) * std::max(0, y1 - y0);
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

void RefineConfig::validate() const {
    if (phrase_score_threshold < 0 || phrase_score_threshold > 1) {
        throw ConfigError("refine.phrase_score_threshold must be in [0,1]");
    }
    if (box_iou_threshold < 0 || box_iou_threshold > 1) {
        throw ConfigError("refine.box_iou_threshold must be in [0,1]");
    }
    if (max_boxes < 1) {
        throw ConfigError("refine.max_boxes must be >= 1");
    }
    if (min_mask_area_fraction < 0 || min_mask_area_fraction > 1) {
        throw ConfigError("refine.min_mask_area_fraction must be in [0,1]");
    }
}

const char* prompt_kind_name(PromptKind k) {
    switch (k) {
    case PromptKind::long_caption: return "long";
    case PromptKind::local_caption: return "local";
    case PromptKind::merge: return "merge";
    }
    return "?";
}

std::string MergeContext::serialize() const {
    std::string s = long_caption;
    s += " | ";
    for (size_t i = 0; i < kept_local_captions.size(); ++i) {
        if (i > 0) {
            s += " ";
        }
        s += kept_local_captions[i];
    }
    s += " | ";
    for (size_t i = 0; i < kept_phrases.size(); ++i) {
        if (i > 0) {
            s += ", ";
        }
        s += kept_phrases[i];
    }
    return s;
}

BoundingBox largest_rectangle(const SegmentMask& mask) {
    const int H = mask.height;
    const int W = mask.width;
    if (H < 1 || W < 1) {
        throw DataError("mask '" + mask.segment_id + "' has an empty grid");
    }

    // Histogram sweep: heights[c] = run of ones ending at the current row.
    // For every bottom row and column span the tallest all-ones rectangle is
    // span width x min height, which covers every maximum-area rectangle.
    std::vector<int> heights(static_cast<size_t>(W), 0);
    bool found = false;
    BoundingBox best;
    long long best_area = 0;
    auto better = [&](const BoundingBox& b) {
        if (!found || b.area() > best_area) {
            return true;
        }
        if (b.area() < best_area) {
            return false;
        }
        auto key = [](const BoundingBox& r) { return std::tuple(r.y, r.x, r.h, r.w); };
        return key(b) < key(best);
    };
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            heights[c] = mask.at(r, c) ? heights[c] + 1 : 0;
        }
        for (int l = 0; l < W; ++l) {
            int minh = heights[l];
            for (int rr = l; rr < W && minh > 0; ++rr) {
                minh = std::min(minh, heights[rr]);
                if (minh == 0) {
                    break;
                }
                BoundingBox b{l, r - minh + 1, rr - l + 1, minh};
                if (better(b)) {
                    best = b;
                    best_area = b.area();
                    found = true;
                }
            }
        }
    }
    if (!found) {
        throw DataError("mask '" + mask.segment_id + "' has no set cells");
    }
    return best;
}

std::vector<BoundingBox> dedup_boxes(std::vector<BoundingBox> boxes, const RefineConfig& cfg) {
    cfg.validate();
    std::sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
        if (a.area() != b.area()) {
            return a.area() > b.area();
        }
        return std::tuple(a.y, a.x, a.h, a.w) < std::tuple(b.y, b.x, b.h, b.w);
    });
    std::vector<BoundingBox> kept;
    for (const auto& b : boxes) {
        bool ok = true;
        for (const auto& k : kept) {
            if (box_iou(b, k) > cfg.box_iou_threshold) {
                ok = false;
                break;
            }
        }
        if (ok) {
            kept.push_back(b);
            if (static_cast<int>(kept.size()) >= cfg.max_boxes) {
                break;
            }
        }
    }
    return kept;
}

FilterResult filter_phrases(const std::vector<ScoredPhrase>& scored, const RefineConfig& cfg) {
    cfg.validate();
    FilterResult out;
    for (const auto& sp : scored) {
        if (sp.score < cfg.phrase_score_threshold) {
            out.discarded.push_back(sp);
        } else {
            out.kept.push_back(sp);
        }
    }
    return out;
}

namespace {

template <typename F>
auto stage(const char* name, const std::string& image_ref, F&& f) {
    try {
        return f();
    } catch (const ClientError& e) {
        throw ClientError(std::string("stage=") + name + " image=" + image_ref + ": " + e.what());
    }
}

std::vector<std::string> graph_phrase_texts(const SceneGraph& g) {
    std::vector<std::string> out;
    for (const auto& p : g.all_phrases()) {
        out.push_back(p.text);
    }
    return out;
}

} // namespace

std::string refine_caption(const std::string& image_ref, const std::string& long_caption,
                           const ModelClients& clients, const RefineConfig& cfg) {
    cfg.validate();
    if (!clients.captioner || !clients.segmenter || !clients.detector || !clients.parser) {
        throw ConfigError("refine_caption requires all four model clients");
    }

    std::vector<SegmentMask> masks =
        stage("segment", image_ref, [&] { return clients.segmenter->segment(image_ref); });
    if (masks.empty()) {
        return long_caption;
    }

    std::vector<BoundingBox> boxes;
    for (const auto& mask : masks) {
        const long long cells = static_cast<long long>(mask.height) * mask.width;
        if (cells <= 0 || mask.set_cells() == 0) {
            continue;
        }
        if (static_cast<double>(mask.set_cells()) / static_cast<double>(cells) <
            cfg.min_mask_area_fraction) {
            continue;
        }
        boxes.push_back(largest_rectangle(mask));
    }
    boxes = dedup_boxes(std::move(boxes), cfg);
    if (boxes.empty()) {
        return long_caption;
    }

    std::vector<std::string> local_captions;
    for (const auto& b : boxes) {
        local_captions.push_back(stage("local_caption", image_ref, [&] {
            return clients.captioner->caption(image_ref, PromptKind::local_caption, b.key());
        }));
    }

    // Parse long + local captions; phrases from the local captions are the
    // candidates for hallucination filtering.
    SceneGraph long_graph =
        stage("parse", image_ref, [&] { return clients.parser->parse(long_caption); });
    std::vector<SceneGraph> local_graphs;
    for (const auto& lc : local_captions) {
        local_graphs.push_back(stage("parse", image_ref, [&] { return clients.parser->parse(lc); }));
    }

    std::set<std::string> phrase_set;
    for (const auto& t : graph_phrase_texts(long_graph)) {
        phrase_set.insert(t);
    }
    for (const auto& g : local_graphs) {
        for (const auto& t : graph_phrase_texts(g)) {
            phrase_set.insert(t);
        }
    }
    std::vector<Phrase> all_phrases;
    for (const auto& t : phrase_set) {
        all_phrases.push_back(Phrase{t, PhraseCategory::object});
    }

    std::vector<ScoredPhrase> scored = stage(
        "detect", image_ref, [&] { return clients.detector->score(image_ref, all_phrases); });
    FilterResult filtered = filter_phrases(scored, cfg);
    std::set<std::string> kept_set;
    for (const auto& sp : filtered.kept) {
        kept_set.insert(sp.phrase.text);
    }

    MergeContext ctx;
    ctx.long_caption = long_caption;
    for (size_t i = 0; i < local_captions.size(); ++i) {
        bool any_kept = false;
        std::vector<std::string> texts = graph_phrase_texts(local_graphs[i]);
        for (const auto& t : texts) {
            if (kept_set.count(t)) {
                any_kept = true;
                ctx.kept_phrases.push_back(t);
            }
        }
        if (any_kept) {
            ctx.kept_local_captions.push_back(local_captions[i]);
        }
    }
    std::sort(ctx.kept_phrases.begin(), ctx.kept_phrases.end());
    ctx.kept_phrases.erase(std::unique(ctx.kept_phrases.begin(), ctx.kept_phrases.end()),
                           ctx.kept_phrases.end());

    return stage("merge", image_ref, [&] {
        return clients.captioner->caption(image_ref, PromptKind::merge, ctx.serialize());
    });
}

PairDataset build_pair_dataset(const std::vector<std::string>& image_refs,
                               const std::vector<ModelClients>& agents, const RefineConfig& cfg,
                               const CaptureConfig& capture_cfg, const SynonymLexicon& lexicon,
                               const PhraseEncoder* encoder, const RefineLog& log) {
    if (agents.empty()) {
        throw ConfigError("build_pair_dataset requires at least one agent");
    }
    auto logf = [&](const std::string& msg) {
        if (log) {
            log(msg);
        }
    };

    PairDataset out;
    for (const auto& image : image_refs) {
        std::vector<CaptionCandidate> candidates;
        for (size_t ai = 0; ai < agents.size(); ++ai) {
            const ModelClients& agent = agents[ai];
            try {
                std::string long_caption =
                    agent.captioner->caption(image, PromptKind::long_caption, "");
                std::string refined = refine_caption(image, long_caption, agent, cfg);
                CaptionCandidate cand;
                cand.id = agent.captioner->agent_name();
                cand.image_id = image;
                cand.source_agent = agent.captioner->agent_name();
                cand.text = refined;
                cand.graph = agent.parser->parse(refined);
                candidates.push_back(std::move(cand));
            } catch (const ClientError& e) {
                logf("image=" + image + " agent=" + agent.captioner->agent_name() +
                     " skipped: " + e.what());
            }
        }
        if (candidates.empty()) {
            ++out.skipped_images;
            logf("image=" + image + " skipped: no agent produced a caption");
            continue;
        }
        ConsensusResult sel = select_caption(candidates, capture_cfg, lexicon, encoder);
        const CaptionCandidate& winner = candidates[static_cast<size_t>(sel.selected_index)];
        out.records.push_back(
            PairRecord{image, winner.text, winner.source_agent, sel.selected_score});
    }
    return out;
}

} // namespace urbanln
