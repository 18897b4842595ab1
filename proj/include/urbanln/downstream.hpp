#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "urbanln/jsonl.hpp"
#include "urbanln/nn/params.hpp"
#include "urbanln/pretrain.hpp"

namespace urbanln::downstream {

struct RegionRecord {
    std::string region_id;
    std::vector<std::string> street_view_image_ids;
    std::optional<std::string> satellite_image_id;
    std::map<std::string, double> indicators;
};

RegionRecord region_from_json(const json& j);
json region_to_json(const RegionRecord& r);

struct RegionEmbedding {
    std::string region_id;
    std::vector<double> vec;
};

struct EvalReport {
    double r2 = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    int n_test = 0;
};

// Coordinate-wise mean; throws DataError on an empty set (the caller skips
// and logs such regions).
std::vector<double> pool_region(const std::vector<std::vector<double>>& embeddings);

// ln(y + 1); y < 0 raises DomainError.
double log_transform(double y);

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// Seeded shuffle then 60/20/20 by floor, remainder to train. Needs n >= 5.
SplitIndices split_dataset(int n, std::uint64_t seed);

// R^2 = 1 - SS_res/SS_tot (0 when truth variance is 0), RMSE, MAE.
EvalReport evaluate(const std::vector<double>& predictions, const std::vector<double>& truths);

struct HeadConfig {
    int hidden_layers = 2;
    int hidden_width = 128;
    double learning_rate = 3e-3;
    double weight_decay = 0.0;
    int batch_size = 32;
    int max_epochs = 300;
    int patience = 10;

    void validate() const;
};

// Small MLP regressor fit by seeded mini-batch steps on squared error with
// early stopping on validation RMSE.
class RegressionHead {
public:
    RegressionHead(int input_dim, HeadConfig cfg, std::uint64_t seed);

    struct FitResult {
        int epochs_run = 0;
        double train_rmse = 0.0;
        double val_rmse = 0.0; // NaN when no validation set was given
    };

    FitResult fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                  const std::vector<std::vector<double>>& val_x,
                  const std::vector<double>& val_y);

    double predict(const std::vector<double>& x) const;
    std::vector<double> predict_all(const std::vector<std::vector<double>>& xs) const;

    const nn::ParamStore& params() const { return params_; }

private:
    int forward(nn::Graph& g, const nn::Tensor& batch, bool with_grad) const;
    double rmse_on(const std::vector<std::vector<double>>& xs,
                   const std::vector<double>& ys) const;

    int input_dim_;
    HeadConfig cfg_;
    std::uint64_t seed_;
    nn::ParamStore params_;
};

// Patch grids addressed by image id. File format: one JSON record per line,
// {"image_id": ..., "patches": [[...], ...]}.
class ImageStore {
public:
    static ImageStore load(const std::string& path);
    void add(std::string image_id, nn::Tensor patches);
    const nn::Tensor* find(const std::string& image_id) const;
    size_t size() const { return images_.size(); }
    json to_json_record(const std::string& image_id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, nn::Tensor> images_;
};

struct ExtractOutcome {
    // One entry per requested id; missing refs stay empty and are reported.
    std::vector<std::optional<std::vector<double>>> embeddings;
    std::vector<std::string> errors;
};

// Frozen student image encoder over the given refs. Parameters are never
// mutated (the value hash is checked before/after).
ExtractOutcome extract_features(const Trainer& trainer, const std::vector<std::string>& image_ids,
                                const ImageStore& store);

struct ScatterPoint {
    std::string region_id;
    double truth = 0.0;
    double prediction = 0.0;
    std::string split;
};

// JSONL: a meta line with the R^2 annotations, then one line per point.
// svg_path, when set, additionally renders a scatter with a 45-degree
// reference line.
void write_scatter_report(const std::string& jsonl_path,
                          const std::optional<std::string>& svg_path,
                          const std::vector<ScatterPoint>& points, double r2_test, double r2_all);

std::vector<ScatterPoint> read_scatter_points(const std::string& jsonl_path);

} // namespace urbanln::downstream
