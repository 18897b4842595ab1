#pragma once

#include <string>
#include <vector>

#include "urbanln/pretrain.hpp"

namespace urbanln {

// Synthetic paired corpus drawn from a shared latent z ~ N(0, I):
//   image: patch p = A_p z + noise, with per-patch random maps A_p fixed by
//          the seed;
//   text:  one token per latent dimension, encoding the dimension's normal
//          quantile bucket: token(j) = 1 + j * buckets + bucket(z_j).
// mispair_fraction rotates the texts of that fraction of *training* pairs
// among themselves, so each affected pair carries a wrong caption. Evaluation
// pairs are always clean.
struct ToyCorpusConfig {
    int train_pairs = 512;
    int eval_pairs = 64;
    int latent_dim = 8;
    int patch_count = 8;
    int patch_dim = 16;
    int buckets_per_dim = 6;
    double image_noise = 0.25;
    double mispair_fraction = 0.0;
    std::uint64_t seed = 7;
};

struct ToyCorpus {
    std::vector<PairExample> train;
    std::vector<PairExample> eval;
    // The latent each pair was drawn from, for building downstream targets.
    std::vector<std::vector<double>> train_latents;
    std::vector<std::vector<double>> eval_latents;
    int vocab_size = 0;   // 1 + latent_dim * buckets_per_dim (id 0 reserved)
    int mispaired = 0;    // train pairs whose text was rotated away
};

ToyCorpus make_toy_corpus(const ToyCorpusConfig& cfg);

// File layout consumed by the CLI: an image store with ids "toy-<i>" /
// "toy-eval-<i>" and a pairs file carrying explicit token sequences. The
// held-out pairs go to eval_pairs_path when given.
void write_corpus_files(const ToyCorpus& corpus, const std::string& imagestore_path,
                        const std::string& pairs_path, const std::string& eval_pairs_path = "");

// Deterministic word hashing for caption text -> token ids in [1, vocab).
std::vector<int> hash_tokenize(const std::string& text, int vocab_size);

// Fraction of query rows whose matching row (same index) ranks in the top k
// candidates by cosine similarity; ties resolved toward lower indices.
double topk_accuracy(const nn::Tensor& query_feats, const nn::Tensor& target_feats, int k);

} // namespace urbanln
