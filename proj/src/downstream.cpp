#include "urbanln/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "urbanln/nn/graph.hpp"

namespace urbanln::downstream {

RegionRecord region_from_json(const json& j) {
    RegionRecord r;
    if (!j.is_object() || !j.contains("region_id")) {
        throw DataError("region record missing 'region_id'");
    }
    r.region_id = j.at("region_id").get<std::string>();
    if (j.contains("street_view_ids")) {
        for (const auto& id : j.at("street_view_ids")) {
            r.street_view_image_ids.push_back(id.get<std::string>());
        }
    }
    if (j.contains("satellite_id") && !j.at("satellite_id").is_null()) {
        r.satellite_image_id = j.at("satellite_id").get<std::string>();
    }
    if (j.contains("indicators")) {
        for (auto it = j.at("indicators").begin(); it != j.at("indicators").end(); ++it) {
            const double v = it->get<double>();
            if (v < 0) {
                throw DataError("region '" + r.region_id + "' indicator '" + it.key() +
                                "' is negative");
            }
            r.indicators[it.key()] = v;
        }
    }
    return r;
}

json region_to_json(const RegionRecord& r) {
    json j;
    j["region_id"] = r.region_id;
    j["street_view_ids"] = r.street_view_image_ids;
    if (r.satellite_image_id) {
        j["satellite_id"] = *r.satellite_image_id;
    }
    j["indicators"] = r.indicators;
    return j;
}

std::vector<double> pool_region(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.empty()) {
        throw DataError("pool_region over zero embeddings");
    }
    const size_t d = embeddings[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& e : embeddings) {
        if (e.size() != d) {
            throw StateError("pool_region dimension mismatch");
        }
        for (size_t i = 0; i < d; ++i) {
            mean[i] += e[i];
        }
    }
    for (double& x : mean) {
        x /= static_cast<double>(embeddings.size());
    }
    return mean;
}

double log_transform(double y) {
    if (y < 0) {
        throw DomainError("log_transform requires y >= 0");
    }
    return std::log1p(y);
}

SplitIndices split_dataset(int n, std::uint64_t seed) {
    if (n < 5) {
        throw DataError("split_dataset needs at least 5 records, got " + std::to_string(n));
    }
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const int n_val = n / 5;
    const int n_test = n / 5;
    const int n_train = n - n_val - n_test; // floor(0.6n) plus the remainder
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

EvalReport evaluate(const std::vector<double>& predictions, const std::vector<double>& truths) {
    if (predictions.size() != truths.size()) {
        throw DataError("evaluate: predictions and truths differ in length");
    }
    if (predictions.empty()) {
        throw DataError("evaluate: empty input");
    }
    const size_t n = truths.size();
    double mean = 0.0;
    for (double y : truths) {
        mean += y;
    }
    mean /= static_cast<double>(n);

    double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double e = truths[i] - predictions[i];
        ss_res += e * e;
        abs_sum += std::abs(e);
        const double d = truths[i] - mean;
        ss_tot += d * d;
    }
    EvalReport r;
    r.n_test = static_cast<int>(n);
    r.rmse = std::sqrt(ss_res / static_cast<double>(n));
    r.mae = abs_sum / static_cast<double>(n);
    r.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
    return r;
}

void HeadConfig::validate() const {
    if (hidden_layers < 1 || hidden_width < 1) {
        throw ConfigError("head.hidden_layers and head.hidden_width must be >= 1");
    }
    if (learning_rate <= 0) {
        throw ConfigError("head.learning_rate must be > 0");
    }
    if (batch_size < 1 || max_epochs < 1 || patience < 1) {
        throw ConfigError("head.batch_size, head.max_epochs, head.patience must be >= 1");
    }
}

RegressionHead::RegressionHead(int input_dim, HeadConfig cfg, std::uint64_t seed)
    : input_dim_(input_dim), cfg_(cfg), seed_(seed) {
    cfg_.validate();
    if (input_dim_ < 1) {
        throw ConfigError("regression head input dimension must be >= 1");
    }
    std::mt19937_64 rng(derive_seed(seed_, "head-init"));
    int in = input_dim_;
    for (int l = 0; l < cfg_.hidden_layers; ++l) {
        nn::Param& w = params_.add("w" + std::to_string(l), in, cfg_.hidden_width);
        nn::fill_normal(w.value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        params_.add("b" + std::to_string(l), 1, cfg_.hidden_width);
        in = cfg_.hidden_width;
    }
    nn::Param& w = params_.add("w_out", in, 1);
    nn::fill_normal(w.value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    params_.add("b_out", 1, 1);
}

int RegressionHead::forward(nn::Graph& g, const nn::Tensor& batch, bool with_grad) const {
    auto& ps = const_cast<nn::ParamStore&>(params_);
    auto pnode = [&](const std::string& name) {
        nn::Param& p = ps.at(name);
        return g.param(&p.value, with_grad ? &p.grad : nullptr);
    };
    int x = g.constant(batch);
    for (int l = 0; l < cfg_.hidden_layers; ++l) {
        x = g.gelu(g.add_rowvec(g.matmul(x, pnode("w" + std::to_string(l))),
                                pnode("b" + std::to_string(l))));
    }
    return g.add_rowvec(g.matmul(x, pnode("w_out")), pnode("b_out"));
}

double RegressionHead::rmse_on(const std::vector<std::vector<double>>& xs,
                               const std::vector<double>& ys) const {
    std::vector<double> preds = predict_all(xs);
    double ss = 0.0;
    for (size_t i = 0; i < ys.size(); ++i) {
        const double e = preds[i] - ys[i];
        ss += e * e;
    }
    return std::sqrt(ss / static_cast<double>(ys.size()));
}

RegressionHead::FitResult RegressionHead::fit(const std::vector<std::vector<double>>& x,
                                              const std::vector<double>& y,
                                              const std::vector<std::vector<double>>& val_x,
                                              const std::vector<double>& val_y) {
    if (x.empty() || x.size() != y.size()) {
        throw DataError("regression head fit: empty or mismatched training set");
    }
    if (val_x.size() != val_y.size()) {
        throw DataError("regression head fit: mismatched validation set");
    }
    const int n = static_cast<int>(x.size());
    const int batch = std::min(cfg_.batch_size, n);

    nn::AdamW opt;
    nn::AdamWConfig ocfg;
    ocfg.lr = cfg_.learning_rate;
    ocfg.weight_decay = cfg_.weight_decay;

    std::mt19937_64 rng(derive_seed(seed_, "head-fit"));
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    const bool use_val = !val_x.empty();
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<nn::Tensor> best_params;

    FitResult result;
    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < n; start += batch) {
            const int count = std::min(batch, n - start);
            nn::Tensor bx(count, input_dim_);
            nn::Tensor by(count, 1);
            for (int i = 0; i < count; ++i) {
                const auto& row = x[static_cast<size_t>(order[start + i])];
                if (static_cast<int>(row.size()) != input_dim_) {
                    throw DataError("regression head fit: feature dimension mismatch");
                }
                std::copy(row.begin(), row.end(), bx.row(i));
                by.v[static_cast<size_t>(i)] = y[static_cast<size_t>(order[start + i])];
            }
            nn::Graph g;
            int pred = forward(g, bx, true);
            int loss = g.mse(pred, by);
            const double lv = g.scalar(loss);
            if (!std::isfinite(lv)) {
                throw StateError("regression head: non-finite loss at epoch " +
                                 std::to_string(epoch));
            }
            params_.zero_grads();
            g.backward(loss);
            opt.step(params_, ocfg);
        }
        result.epochs_run = epoch + 1;
        if (use_val) {
            const double vr = rmse_on(val_x, val_y);
            if (vr < best_val - 1e-12) {
                best_val = vr;
                since_best = 0;
                best_params.clear();
                for (const auto& p : params_.all()) {
                    best_params.push_back(p.value);
                }
            } else {
                ++since_best;
                if (since_best >= cfg_.patience) {
                    break;
                }
            }
        }
    }
    if (use_val && !best_params.empty()) {
        auto& params = params_.all();
        for (size_t i = 0; i < params.size(); ++i) {
            params[i].value = best_params[i];
        }
        result.val_rmse = best_val;
    } else {
        result.val_rmse = std::numeric_limits<double>::quiet_NaN();
    }
    result.train_rmse = rmse_on(x, y);
    return result;
}

double RegressionHead::predict(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != input_dim_) {
        throw DataError("regression head predict: feature dimension mismatch");
    }
    nn::Graph g;
    nn::Tensor bx(1, input_dim_, std::vector<double>(x.begin(), x.end()));
    int pred = forward(g, bx, false);
    return g.value(pred).v[0];
}

std::vector<double> RegressionHead::predict_all(const std::vector<std::vector<double>>& xs) const {
    std::vector<double> out;
    out.reserve(xs.size());
    if (xs.empty()) {
        return out;
    }
    nn::Tensor bx(static_cast<int>(xs.size()), input_dim_);
    for (size_t i = 0; i < xs.size(); ++i) {
        if (static_cast<int>(xs[i].size()) != input_dim_) {
            throw DataError("regression head predict: feature dimension mismatch");
        }
        std::copy(xs[i].begin(), xs[i].end(), bx.row(static_cast<int>(i)));
    }
    nn::Graph g;
    int pred = forward(g, bx, false);
    const nn::Tensor& p = g.value(pred);
    for (int i = 0; i < p.rows; ++i) {
        out.push_back(p.at(i, 0));
    }
    return out;
}

ImageStore ImageStore::load(const std::string& path) {
    ImageStore store;
    for (const auto& j : read_jsonl(path)) {
        if (!j.contains("image_id") || !j.contains("patches")) {
            throw DataError("image store record needs 'image_id' and 'patches'");
        }
        const auto& rows = j.at("patches");
        if (!rows.is_array() || rows.empty()) {
            throw DataError("image '" + j.at("image_id").get<std::string>() +
                            "' has no patch rows");
        }
        const int pc = static_cast<int>(rows.size());
        const int pd = static_cast<int>(rows[0].size());
        nn::Tensor t(pc, pd);
        for (int r = 0; r < pc; ++r) {
            if (static_cast<int>(rows[r].size()) != pd) {
                throw DataError("image '" + j.at("image_id").get<std::string>() +
                                "' has ragged patch rows");
            }
            for (int c = 0; c < pd; ++c) {
                t.at(r, c) = rows[r][c].get<double>();
            }
        }
        store.add(j.at("image_id").get<std::string>(), std::move(t));
    }
    return store;
}

void ImageStore::add(std::string image_id, nn::Tensor patches) {
    images_[std::move(image_id)] = std::move(patches);
}

const nn::Tensor* ImageStore::find(const std::string& image_id) const {
    auto it = images_.find(image_id);
    return it == images_.end() ? nullptr : &it->second;
}

json ImageStore::to_json_record(const std::string& image_id) const {
    const nn::Tensor* t = find(image_id);
    if (t == nullptr) {
        throw DataError("unknown image '" + image_id + "'");
    }
    json rows = json::array();
    for (int r = 0; r < t->rows; ++r) {
        json row = json::array();
        for (int c = 0; c < t->cols; ++c) {
            row.push_back(t->at(r, c));
        }
        rows.push_back(std::move(row));
    }
    return json{{"image_id", image_id}, {"patches", std::move(rows)}};
}

std::vector<std::string> ImageStore::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, t] : images_) {
        (void)t;
        out.push_back(id);
    }
    return out;
}

ExtractOutcome extract_features(const Trainer& trainer, const std::vector<std::string>& image_ids,
                                const ImageStore& store) {
    ExtractOutcome out;
    out.embeddings.resize(image_ids.size());

    const std::uint64_t hash_before = trainer.student().value_hash();

    std::vector<const nn::Tensor*> present;
    std::vector<size_t> present_idx;
    for (size_t i = 0; i < image_ids.size(); ++i) {
        const nn::Tensor* t = store.find(image_ids[i]);
        if (t == nullptr) {
            out.errors.push_back("image '" + image_ids[i] + "' not found in image store");
            continue;
        }
        present.push_back(t);
        present_idx.push_back(i);
    }
    if (!present.empty()) {
        nn::Tensor feats = trainer.encode_images(present, false);
        for (size_t k = 0; k < present.size(); ++k) {
            out.embeddings[present_idx[k]] =
                std::vector<double>(feats.row(static_cast<int>(k)),
                                    feats.row(static_cast<int>(k)) + feats.cols);
        }
    }

    if (trainer.student().value_hash() != hash_before) {
        throw StateError("encoder parameters changed during feature extraction");
    }
    return out;
}

void write_scatter_report(const std::string& jsonl_path,
                          const std::optional<std::string>& svg_path,
                          const std::vector<ScatterPoint>& points, double r2_test, double r2_all) {
    std::vector<json> lines;
    lines.push_back(json{{"type", "meta"},
                         {"r2_test", r2_test},
                         {"r2_all", r2_all},
                         {"n_points", points.size()}});
    for (const auto& p : points) {
        lines.push_back(json{{"type", "point"},
                             {"region_id", p.region_id},
                             {"truth", p.truth},
                             {"prediction", p.prediction},
                             {"split", p.split}});
    }
    write_jsonl(jsonl_path, lines);

    if (!svg_path) {
        return;
    }
    double lo = 0.0, hi = 1.0;
    if (!points.empty()) {
        lo = std::numeric_limits<double>::infinity();
        hi = -lo;
        for (const auto& p : points) {
            lo = std::min({lo, p.truth, p.prediction});
            hi = std::max({hi, p.truth, p.prediction});
        }
        if (hi - lo < 1e-9) {
            hi = lo + 1.0;
        }
    }
    const double size = 420.0, margin = 30.0;
    auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * (size - 2 * margin); };
    auto sy = [&](double v) { return size - margin - (v - lo) / (hi - lo) * (size - 2 * margin); };
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << size << "' height='" << size
        << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<line x1='" << sx(lo) << "' y1='" << sy(lo) << "' x2='" << sx(hi) << "' y2='" << sy(hi)
        << "' stroke='gray' stroke-dasharray='6,4'/>\n";
    for (const auto& p : points) {
        const char* color = p.split == "test" ? "purple" : "steelblue";
        svg << "<circle cx='" << sx(p.truth) << "' cy='" << sy(p.prediction)
            << "' r='3' fill='" << color << "' fill-opacity='0.6'/>\n";
    }
    svg << "<text x='" << margin << "' y='18' font-size='13'>r2_test=" << r2_test
        << " r2_all=" << r2_all << "</text>\n";
    svg << "</svg>\n";
    write_text_atomic(*svg_path, svg.str());
}

std::vector<ScatterPoint> read_scatter_points(const std::string& jsonl_path) {
    std::vector<ScatterPoint> out;
    for (const auto& j : read_jsonl(jsonl_path)) {
        if (j.value("type", "") != "point") {
            continue;
        }
        out.push_back(ScatterPoint{j.at("region_id").get<std::string>(),
                                   j.at("truth").get<double>(),
                                   j.at("prediction").get<double>(),
                                   j.at("split").get<std::string>()});
    }
    return out;
}

} // namespace urbanln::downstream
