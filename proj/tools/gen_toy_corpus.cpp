// Writes a synthetic image-text corpus (image store + pair files) so the
// pretrain subcommand can be exercised without any captioning pipeline.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "urbanln/toy_corpus.hpp"

int main(int argc, char** argv) {
    CLI::App app{"toy paired-corpus generator"};
    std::string out_dir = "toy-corpus";
    urbanln::ToyCorpusConfig cfg;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--train-pairs", cfg.train_pairs, "training pairs");
    app.add_option("--eval-pairs", cfg.eval_pairs, "held-out pairs");
    app.add_option("--latent-dim", cfg.latent_dim, "shared latent dimension");
    app.add_option("--patch-count", cfg.patch_count, "patches per image");
    app.add_option("--patch-dim", cfg.patch_dim, "floats per patch");
    app.add_option("--buckets", cfg.buckets_per_dim, "token buckets per latent dim");
    app.add_option("--image-noise", cfg.image_noise, "stddev of patch noise");
    app.add_option("--mispair", cfg.mispair_fraction, "fraction of train pairs mis-paired");
    app.add_option("--seed", cfg.seed, "corpus seed");
    CLI11_PARSE(app, argc, argv);

    try {
        urbanln::ToyCorpus corpus = urbanln::make_toy_corpus(cfg);
        std::filesystem::create_directories(out_dir);
        const std::string store = out_dir + "/imagestore.jsonl";
        const std::string pairs = out_dir + "/pairs.jsonl";
        const std::string eval_pairs = out_dir + "/eval_pairs.jsonl";
        urbanln::write_corpus_files(corpus, store, pairs, eval_pairs);
        std::cout << "wrote " << corpus.train.size() << " train pairs (" << corpus.mispaired
                  << " mis-paired), " << corpus.eval.size() << " eval pairs, vocab "
                  << corpus.vocab_size << " to " << out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
