#pragma once

#include <string>
#include <vector>

#include "urbanln/capture.hpp"
#include "urbanln/downstream.hpp"
#include "urbanln/encoder.hpp"
#include "urbanln/ipsi.hpp"
#include "urbanln/jsonl.hpp"
#include "urbanln/pretrain.hpp"
#include "urbanln/refinery.hpp"

namespace urbanln {

struct CaptureSettings {
    CaptureWeights weights;                 // alpha, beta, gamma
    std::vector<std::string> stop_phrases;  // pruned before matching
    bool soft_matching = true;              // false disables the stage-3 encoder
    // Parser used for caption candidates without an embedded scene graph:
    // "error" rejects them, "keyword" applies the bag-of-words fallback.
    std::string fallback_parser = "error";

    CaptureConfig to_capture_config() const;
};

struct DownstreamSettings {
    std::string indicator = "indicator";
    std::string imagery = "street"; // or "satellite"
};

struct PathsConfig {
    std::string fixtures;
    std::string candidates;
    std::string pairs;
    std::string imagestore;
    std::string regions;
    std::string checkpoint;
    std::string embeddings;
    std::string predictions;
    std::string out_root = "runs";
};

// Everything the CLI needs, mirroring each module's own config. Defaults are
// the published settings: lambda=4, mu=0.5, momentum=0.995, queue 4096,
// weights 5/5/2, phrase threshold 0.01.
struct PipelineConfig {
    std::uint64_t seed = 1;
    CaptureSettings capture;
    RefineConfig refine;
    ipsi::IpsiConfig ipsi;
    EncoderConfig encoder;
    TrainConfig train;
    downstream::HeadConfig head;
    DownstreamSettings downstream;
    PathsConfig paths;
};

// Strict parse: unknown keys are rejected, every range violation names the
// key and its expected range. An empty file yields the defaults.
PipelineConfig load_config(const std::string& path);
PipelineConfig config_from_json(const json& doc);

// Plain (non-strict) serializers used by checkpoints.
json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const json& j);
json to_json(const ipsi::IpsiConfig& c);
ipsi::IpsiConfig ipsi_config_from_json(const json& j);
json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

} // namespace urbanln
