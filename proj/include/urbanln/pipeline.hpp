#pragma once

#include <string>

#include "urbanln/config.hpp"
#include "urbanln/downstream.hpp"

namespace urbanln {

struct ScoreCaptionsResult {
    std::string report_path;
    int images = 0;
};
ScoreCaptionsResult run_score_captions(const PipelineConfig& cfg, const std::string& out_dir);

struct BuildCaptionsResult {
    std::string dataset_path;
    int records = 0;
    int skipped = 0;
};
BuildCaptionsResult run_build_captions(const PipelineConfig& cfg, const std::string& out_dir);

struct PretrainResult {
    std::string metrics_path;
    std::string checkpoint_path;
    long long steps = 0;
};
PretrainResult run_pretrain(const PipelineConfig& cfg, const std::string& out_dir);

struct ExtractResult {
    std::string embeddings_path;
    int regions = 0;
    int skipped = 0;
};
ExtractResult run_extract(const PipelineConfig& cfg, const std::string& out_dir);

struct PredictResult {
    std::string predictions_path;
    int n_train = 0;
    int n_val = 0;
    int n_test = 0;
    int dropped = 0; // regions without the target indicator
};
PredictResult run_predict(const PipelineConfig& cfg, const std::string& out_dir);

struct EvaluateResult {
    std::string report_path;
    downstream::EvalReport report;
};
EvaluateResult run_evaluate(const PipelineConfig& cfg, const std::string& out_dir);

struct ReportResult {
    std::string scatter_path;
    std::string svg_path;
    double r2_test = 0.0;
    double r2_all = 0.0;
};
ReportResult run_report(const PipelineConfig& cfg, const std::string& out_dir);

// Full CLI: `urbanln <subcommand> [--config PATH] [--seed N] [--out DIR]`.
// Unknown subcommands print usage and return 2; failures print a single
// "error: ..." line on stderr and return 1.
int dispatch(int argc, const char* const* argv);

} // namespace urbanln
