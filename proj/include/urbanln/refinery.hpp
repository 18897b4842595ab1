#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "urbanln/capture.hpp"
#include "urbanln/scene_graph.hpp"

namespace urbanln {

// Binary segment mask, row-major, entries 0/1.
struct SegmentMask {
    std::string segment_id;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> grid;

    std::uint8_t at(int row, int col) const { return grid[static_cast<size_t>(row) * width + col]; }
    int set_cells() const;
};

// Axis-aligned box; x is the column of the left edge, y the row of the top edge.
struct BoundingBox {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    bool operator==(const BoundingBox&) const = default;
    long long area() const { return static_cast<long long>(w) * h; }
    std::string key() const;
};

double box_iou(const BoundingBox& a, const BoundingBox& b);

struct ScoredPhrase {
    Phrase phrase;
    double score = 0.0;
};

struct RefineConfig {
    double phrase_score_threshold = 0.01;
    double box_iou_threshold = 0.5;
    int max_boxes = 8;
    // Masks covering less than this fraction of the image are dropped before
    // box extraction.
    double min_mask_area_fraction = 0.01;

    void validate() const;
};

enum class PromptKind { long_caption, local_caption, merge };

const char* prompt_kind_name(PromptKind k);

class CaptionerClient {
public:
    virtual ~CaptionerClient() = default;
    virtual std::string agent_name() const = 0;
    // context: "" for long captions, "x,y,w,h" for local captions, and the
    // serialized MergeContext for merges.
    virtual std::string caption(const std::string& image_ref, PromptKind kind,
                                const std::string& context) = 0;
};

class SegmenterClient {
public:
    virtual ~SegmenterClient() = default;
    virtual std::vector<SegmentMask> segment(const std::string& image_ref) = 0;
};

class DetectorClient {
public:
    virtual ~DetectorClient() = default;
    virtual std::vector<ScoredPhrase> score(const std::string& image_ref,
                                            const std::vector<Phrase>& phrases) = 0;
};

class ParserClient {
public:
    virtual ~ParserClient() = default;
    virtual SceneGraph parse(const std::string& text) = 0;
};

struct ModelClients {
    CaptionerClient* captioner = nullptr;
    SegmenterClient* segmenter = nullptr;
    DetectorClient* detector = nullptr;
    ParserClient* parser = nullptr;
};

// What the merge prompt sees: the original long caption plus the local detail
// that survived phrase filtering.
struct MergeContext {
    std::string long_caption;
    std::vector<std::string> kept_local_captions;
    std::vector<std::string> kept_phrases;

    std::string serialize() const;
};

// Maximum-area all-ones rectangle; among equal areas the lexicographically
// smallest (y, x, h, w) wins. Throws DataError for an all-zero mask.
BoundingBox largest_rectangle(const SegmentMask& mask);

// Greedy overlap suppression: boxes sorted by descending area (ties by
// (y, x, h, w)), kept iff IoU with every kept box <= threshold, truncated to
// max_boxes.
std::vector<BoundingBox> dedup_boxes(std::vector<BoundingBox> boxes, const RefineConfig& cfg);

struct FilterResult {
    std::vector<ScoredPhrase> kept;
    std::vector<ScoredPhrase> discarded;
};

// Strict "below threshold" semantics: score == threshold is kept.
FilterResult filter_phrases(const std::vector<ScoredPhrase>& scored, const RefineConfig& cfg);

// Full divide-and-conquer pass over one image. Client failures propagate as
// ClientError annotated with the failing stage; an empty box set degrades to
// the original caption.
std::string refine_caption(const std::string& image_ref, const std::string& long_caption,
                           const ModelClients& clients, const RefineConfig& cfg);

struct PairRecord {
    std::string image_id;
    std::string caption_text;
    std::string source_agent;
    double consensus_score = 0.0;
};

struct PairDataset {
    std::vector<PairRecord> records;
    int skipped_images = 0;
};

using RefineLog = std::function<void(const std::string&)>;

// Runs every agent's caption through refinement, consensus-scores the results
// per image, and keeps the winner. Agents that fail on an image are skipped;
// an image with no surviving candidate is skipped and counted.
PairDataset build_pair_dataset(const std::vector<std::string>& image_refs,
                               const std::vector<ModelClients>& agents, const RefineConfig& cfg,
                               const CaptureConfig& capture_cfg, const SynonymLexicon& lexicon,
                               const PhraseEncoder* encoder, const RefineLog& log = {});

} // namespace urbanln
