#include "urbanln/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "urbanln/downstream.hpp"
#include "urbanln/jsonl.hpp"

namespace urbanln {

namespace {

double normal_cdf(double x) {
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
}

// Inverse normal CDF by bisection; plenty for bucket boundaries.
double normal_quantile(double p) {
    double lo = -10.0, hi = 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (normal_cdf(mid) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

struct Generator {
    const ToyCorpusConfig& cfg;
    std::vector<nn::Tensor> patch_maps; // per patch: patch_dim x latent_dim
    std::vector<double> bucket_bounds;  // buckets_per_dim - 1 boundaries

    explicit Generator(const ToyCorpusConfig& c) : cfg(c) {
        std::mt19937_64 rng(derive_seed(cfg.seed, "toy-maps"));
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
        for (int p = 0; p < cfg.patch_count; ++p) {
            nn::Tensor a(cfg.patch_dim, cfg.latent_dim);
            nn::fill_normal(a, rng, scale);
            patch_maps.push_back(std::move(a));
        }
        for (int b = 1; b < cfg.buckets_per_dim; ++b) {
            bucket_bounds.push_back(
                normal_quantile(static_cast<double>(b) / cfg.buckets_per_dim));
        }
    }

    int bucket(double z) const {
        int b = 0;
        while (b < static_cast<int>(bucket_bounds.size()) && z >= bucket_bounds[b]) {
            ++b;
        }
        return b;
    }

    PairExample sample(std::mt19937_64& rng, std::vector<double>* latent_out) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> z(static_cast<size_t>(cfg.latent_dim));
        for (double& x : z) {
            x = normal(rng);
        }
        if (latent_out != nullptr) {
            *latent_out = z;
        }
        PairExample ex;
        ex.patches = nn::Tensor(cfg.patch_count, cfg.patch_dim);
        for (int p = 0; p < cfg.patch_count; ++p) {
            const nn::Tensor& a = patch_maps[static_cast<size_t>(p)];
            for (int d = 0; d < cfg.patch_dim; ++d) {
                double s = 0.0;
                for (int j = 0; j < cfg.latent_dim; ++j) {
                    s += a.at(d, j) * z[static_cast<size_t>(j)];
                }
                ex.patches.at(p, d) = s + cfg.image_noise * normal(rng);
            }
        }
        ex.tokens.reserve(static_cast<size_t>(cfg.latent_dim));
        for (int j = 0; j < cfg.latent_dim; ++j) {
            ex.tokens.push_back(1 + j * cfg.buckets_per_dim + bucket(z[static_cast<size_t>(j)]));
        }
        return ex;
    }
};

} // namespace

ToyCorpus make_toy_corpus(const ToyCorpusConfig& cfg) {
    if (cfg.train_pairs < 1 || cfg.eval_pairs < 0 || cfg.latent_dim < 1 ||
        cfg.buckets_per_dim < 2 || cfg.patch_count < 1 || cfg.patch_dim < 1) {
        throw ConfigError("toy corpus config out of range");
    }
    if (cfg.mispair_fraction < 0.0 || cfg.mispair_fraction > 1.0) {
        throw ConfigError("toy corpus mispair_fraction must be in [0,1]");
    }
    Generator gen(cfg);
    ToyCorpus corpus;
    corpus.vocab_size = 1 + cfg.latent_dim * cfg.buckets_per_dim;

    std::mt19937_64 rng(derive_seed(cfg.seed, "toy-samples"));
    for (int i = 0; i < cfg.train_pairs; ++i) {
        std::vector<double> z;
        corpus.train.push_back(gen.sample(rng, &z));
        corpus.train_latents.push_back(std::move(z));
    }
    for (int i = 0; i < cfg.eval_pairs; ++i) {
        std::vector<double> z;
        corpus.eval.push_back(gen.sample(rng, &z));
        corpus.eval_latents.push_back(std::move(z));
    }

    const int n_bad = static_cast<int>(cfg.mispair_fraction * cfg.train_pairs);
    if (n_bad >= 2) {
        std::vector<int> idx(static_cast<size_t>(cfg.train_pairs));
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 mis_rng(derive_seed(cfg.seed, "toy-mispair"));
        std::shuffle(idx.begin(), idx.end(), mis_rng);
        idx.resize(static_cast<size_t>(n_bad));
        // Rotate texts among the chosen pairs; every chosen pair ends up with
        // some other pair's text.
        std::vector<int> first_tokens = corpus.train[static_cast<size_t>(idx[0])].tokens;
        for (int k = 0; k + 1 < n_bad; ++k) {
            corpus.train[static_cast<size_t>(idx[k])].tokens =
                corpus.train[static_cast<size_t>(idx[k + 1])].tokens;
        }
        corpus.train[static_cast<size_t>(idx[n_bad - 1])].tokens = std::move(first_tokens);
        corpus.mispaired = n_bad;
    }
    return corpus;
}

void write_corpus_files(const ToyCorpus& corpus, const std::string& imagestore_path,
                        const std::string& pairs_path, const std::string& eval_pairs_path) {
    downstream::ImageStore store;
    std::vector<json> pairs;
    std::vector<json> eval_pairs;
    auto add = [&](const std::vector<PairExample>& set, const std::string& prefix,
                   std::vector<json>* sink) {
        for (size_t i = 0; i < set.size(); ++i) {
            const std::string id = prefix + std::to_string(i);
            store.add(id, set[i].patches);
            sink->push_back(json{{"image_id", id},
                                 {"tokens", set[i].tokens},
                                 {"source_agent", "toy"},
                                 {"consensus_score", 1.0}});
        }
    };
    add(corpus.train, "toy-", &pairs);
    add(corpus.eval, "toy-eval-", &eval_pairs);

    std::vector<json> images;
    for (const auto& id : store.ids()) {
        images.push_back(store.to_json_record(id));
    }
    write_jsonl(imagestore_path, images);
    write_jsonl(pairs_path, pairs);
    if (!eval_pairs_path.empty()) {
        write_jsonl(eval_pairs_path, eval_pairs);
    }
}

std::vector<int> hash_tokenize(const std::string& text, int vocab_size) {
    if (vocab_size < 2) {
        throw ConfigError("hash_tokenize needs vocab_size >= 2");
    }
    std::vector<int> out;
    std::istringstream is(text);
    std::string word;
    while (is >> word) {
        out.push_back(1 + static_cast<int>(fnv1a64(word) %
                                           static_cast<std::uint64_t>(vocab_size - 1)));
    }
    if (out.empty()) {
        out.push_back(1);
    }
    return out;
}

double topk_accuracy(const nn::Tensor& query_feats, const nn::Tensor& target_feats, int k) {
    if (query_feats.rows != target_feats.rows || query_feats.cols != target_feats.cols) {
        throw DataError("topk_accuracy: feature matrices must match");
    }
    if (query_feats.rows == 0) {
        return 0.0;
    }
    int hits = 0;
    for (int i = 0; i < query_feats.rows; ++i) {
        const double own = nn::row_dot(query_feats, i, target_feats, i);
        int ahead = 0;
        for (int j = 0; j < target_feats.rows; ++j) {
            if (j == i) {
                continue;
            }
            const double s = nn::row_dot(query_feats, i, target_feats, j);
            if (s > own || (s == own && j < i)) {
                ++ahead;
            }
        }
        if (ahead < k) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / query_feats.rows;
}

} // namespace urbanln
