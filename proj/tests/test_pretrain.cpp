#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <random>

#include "urbanln/checkpoint.hpp"
#include "urbanln/pretrain.hpp"
#include "urbanln/toy_corpus.hpp"

using namespace urbanln;
using nn::Tensor;

namespace {

Tensor unit_rows(int rows, int cols, std::uint64_t seed) {
    Tensor t(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : t.v) {
        x = dist(rng);
    }
    nn::l2_normalize_rows_inplace(t);
    return t;
}

// Small dual-encoder setup shared by the trainer tests.
EncoderConfig tiny_encoder(int d_model = 8, int embed = 8) {
    EncoderConfig cfg;
    cfg.depth = 2;
    cfg.d_model = d_model;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.embed_dim = embed;
    cfg.vocab_size = 17;
    cfg.pos_base_len = 24;
    cfg.patch_count = 3;
    cfg.patch_dim = 5;
    return cfg;
}

ipsi::IpsiConfig tiny_ipsi() {
    ipsi::IpsiConfig cfg;
    cfg.lambda = 1;
    return cfg;
}

TrainConfig tiny_train(double mu = 0.5) {
    TrainConfig cfg;
    cfg.mu = mu;
    cfg.momentum = 0.99;
    cfg.queue_capacity = 8;
    cfg.batch_size = 3;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 2;
    cfg.seed = 21;
    return cfg;
}

std::vector<PairExample> tiny_dataset(int n, const EncoderConfig& enc, std::uint64_t seed) {
    std::vector<PairExample> out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        PairExample ex;
        ex.patches = Tensor(enc.patch_count, enc.patch_dim);
        for (double& x : ex.patches.v) {
            x = dist(rng);
        }
        const int len = 2 + static_cast<int>(rng() % 4);
        for (int t = 0; t < len; ++t) {
            ex.tokens.push_back(1 + static_cast<int>(rng() % (enc.vocab_size - 1)));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<const PairExample*> as_batch(const std::vector<PairExample>& data, int from, int count) {
    std::vector<const PairExample*> b;
    for (int i = 0; i < count; ++i) {
        b.push_back(&data[static_cast<size_t>(from + i)]);
    }
    return b;
}

} // namespace

TEST_CASE("feature queue is exact FIFO") {
    SUBCASE("push 3 then 3 into capacity 4 evicts the first two") {
        FeatureQueue q(4, 4);
        Tensor first = unit_rows(3, 4, 1);
        Tensor second = unit_rows(3, 4, 2);
        q.push(first);
        q.push(second);
        REQUIRE(q.size() == 4);
        Tensor snap = q.snapshot();
        for (int j = 0; j < 4; ++j) {
            CHECK(snap.at(0, j) == first.at(2, j));
            CHECK(snap.at(1, j) == second.at(0, j));
            CHECK(snap.at(3, j) == second.at(2, j));
        }
    }
    SUBCASE("capacity zero stays empty") {
        FeatureQueue q(0, 4);
        q.push(unit_rows(5, 4, 3));
        CHECK(q.size() == 0);
    }
    SUBCASE("push within capacity keeps everything") {
        FeatureQueue q(16, 4);
        q.push(unit_rows(5, 4, 4));
        CHECK(q.size() == 5);
    }
    SUBCASE("non-unit rows are rejected") {
        FeatureQueue q(4, 4);
        Tensor bad(1, 4);
        bad.v = {0.5, 0.5, 0.5, 0.0};
        CHECK_THROWS_AS(q.push(bad), StateError);
    }
    SUBCASE("matches a reference deque over random push sequences") {
        std::mt19937_64 rng(77);
        for (int trial = 0; trial < 1000; ++trial) {
            const int cap = static_cast<int>(rng() % 6);
            FeatureQueue q(cap, 3);
            std::deque<std::vector<double>> ref;
            const int pushes = 1 + static_cast<int>(rng() % 5);
            for (int p = 0; p < pushes; ++p) {
                Tensor batch = unit_rows(1 + static_cast<int>(rng() % 4), 3, rng());
                q.push(batch);
                for (int r = 0; r < batch.rows; ++r) {
                    ref.emplace_back(batch.row(r), batch.row(r) + 3);
                    while (static_cast<int>(ref.size()) > cap) {
                        ref.pop_front();
                    }
                }
            }
            REQUIRE(q.size() == static_cast<int>(ref.size()));
            auto it = ref.begin();
            for (const auto& e : q.entries()) {
                CHECK(e == *it);
                ++it;
            }
        }
    }
}

TEST_CASE("modality distribution examples") {
    SUBCASE("single candidate gives probability one") {
        Tensor f = unit_rows(1, 4, 5);
        FeatureQueue q(0, 4);
        Tensor p = modality_distribution(f, f, q, 0.07);
        REQUIRE(p.rows == 1);
        REQUIRE(p.cols == 1);
        CHECK(p.v[0] == doctest::Approx(1.0));
    }
    SUBCASE("orthogonal pairs at tau=1 give e/(e+1) on the diagonal") {
        Tensor stu(2, 2);
        stu.v = {1, 0, 0, 1};
        FeatureQueue q(0, 2);
        Tensor p = modality_distribution(stu, stu, q, 1.0);
        const double expect = std::exp(1.0) / (std::exp(1.0) + 1.0);
        CHECK(p.at(0, 0) == doctest::Approx(expect).epsilon(1e-9));
        CHECK(p.at(1, 1) == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("rows always sum to one") {
        Tensor stu = unit_rows(4, 6, 6);
        Tensor tea = unit_rows(4, 6, 7);
        FeatureQueue q(8, 6);
        q.push(unit_rows(5, 6, 8));
        Tensor p = modality_distribution(stu, tea, q, 0.07);
        REQUIRE(p.cols == 9);
        for (int i = 0; i < p.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < p.cols; ++j) {
                s += p.at(i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    SUBCASE("tau must be positive") {
        Tensor f = unit_rows(1, 4, 9);
        FeatureQueue q(0, 4);
        CHECK_THROWS_AS(modality_distribution(f, f, q, 0.0), DomainError);
        CHECK_THROWS_AS(modality_distribution(f, f, q, -1.0), DomainError);
    }
}

TEST_CASE("contrastive loss identities") {
    SUBCASE("single matched pair with empty queue is zero") {
        Tensor f = unit_rows(1, 4, 10);
        FeatureQueue q(0, 4);
        DistributionPair p = similarity_distributions(f, f, f, f, q, q, 0.07);
        CHECK(contrastive_loss(p) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal two-pair batch gives -ln(e/(e+1))") {
        Tensor feats(2, 2);
        feats.v = {1, 0, 0, 1};
        FeatureQueue q(0, 2);
        DistributionPair p = similarity_distributions(feats, feats, feats, feats, q, q, 1.0);
        const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
        CHECK(contrastive_loss(p) == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("non-negative on random distributions") {
        std::mt19937_64 rng(11);
        for (int t = 0; t < 20; ++t) {
            Tensor si = unit_rows(3, 4, rng());
            Tensor st = unit_rows(3, 4, rng());
            Tensor ti = unit_rows(3, 4, rng());
            Tensor tt = unit_rows(3, 4, rng());
            FeatureQueue q(4, 4);
            q.push(unit_rows(2, 4, rng()));
            DistributionPair p = similarity_distributions(si, st, ti, tt, q, q, 0.1);
            CHECK(contrastive_loss(p) >= 0.0);
        }
    }
}

TEST_CASE("pseudo-targets equal student distributions when features coincide") {
    Tensor img = unit_rows(3, 4, 12);
    Tensor txt = unit_rows(3, 4, 13);
    FeatureQueue qi(4, 4), qt(4, 4);
    qi.push(unit_rows(2, 4, 14));
    qt.push(unit_rows(2, 4, 15));
    DistributionPair p = similarity_distributions(img, txt, img, txt, qi, qt, 0.07);
    DistributionPair q = pseudo_targets(img, txt, qi, qt, 0.07);
    CHECK(p.i2t == q.i2t);
    CHECK(p.t2i == q.t2i);
}

TEST_CASE("distillation loss identities") {
    SUBCASE("zero when q equals p") {
        Tensor img = unit_rows(3, 4, 16);
        Tensor txt = unit_rows(3, 4, 17);
        FeatureQueue q0(0, 4);
        DistributionPair q = pseudo_targets(img, txt, q0, q0, 0.07);
        CHECK(distillation_loss(q, q) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("hand KL: q=[1,0] against p=[1/2,1/2] is ln 2") {
        DistributionPair q, p;
        q.i2t = Tensor(1, 2);
        q.i2t.v = {1.0, 0.0};
        q.t2i = q.i2t;
        p.i2t = Tensor(1, 2);
        p.i2t.v = {0.5, 0.5};
        p.t2i = p.i2t;
        CHECK(distillation_loss(q, p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("non-negative for random valid distributions") {
        std::mt19937_64 rng(18);
        for (int t = 0; t < 30; ++t) {
            Tensor a = nn::softmax_rows(unit_rows(3, 5, rng()));
            Tensor b = nn::softmax_rows(unit_rows(3, 5, rng()));
            DistributionPair q{a, a};
            DistributionPair p{b, b};
            CHECK(distillation_loss(q, p) >= -1e-12);
        }
    }
}

TEST_CASE("total loss mixes the two terms") {
    CHECK(total_loss(0.4, 0.2, 0.0) == doctest::Approx(0.4));
    CHECK(total_loss(0.4, 0.2, 1.0) == doctest::Approx(0.2));
    CHECK(total_loss(0.4, 0.2, 0.5) == doctest::Approx(0.3));
}

TEST_CASE("ema update endpoints and contraction") {
    auto store_with = [](double x) {
        nn::ParamStore s;
        s.add("w", 1, 1).value.v[0] = x;
        return s;
    };
    SUBCASE("m=1 freezes the teacher") {
        nn::ParamStore t = store_with(1.0), s = store_with(0.0);
        ema_update(t, s, 1.0);
        CHECK(t.at("w").value.v[0] == doctest::Approx(1.0));
    }
    SUBCASE("m=0 copies the student") {
        nn::ParamStore t = store_with(1.0), s = store_with(0.0);
        ema_update(t, s, 0.0);
        CHECK(t.at("w").value.v[0] == doctest::Approx(0.0));
    }
    SUBCASE("single step at m=0.995") {
        nn::ParamStore t = store_with(1.0), s = store_with(0.0);
        ema_update(t, s, 0.995);
        CHECK(t.at("w").value.v[0] == doctest::Approx(0.995).epsilon(1e-12));
    }
    SUBCASE("gap contracts as m^n with a frozen student") {
        const double m = 0.995;
        nn::ParamStore t, s;
        t.add("w", 2, 3).value = unit_rows(2, 3, 19);
        s.add("w", 2, 3).value = unit_rows(2, 3, 20);
        Tensor gap0(2, 3);
        for (size_t i = 0; i < gap0.v.size(); ++i) {
            gap0.v[i] = t.at("w").value.v[i] - s.at("w").value.v[i];
        }
        for (int n = 1; n <= 100; ++n) {
            ema_update(t, s, m);
            const double factor = std::pow(m, n);
            for (size_t i = 0; i < gap0.v.size(); ++i) {
                const double gap = t.at("w").value.v[i] - s.at("w").value.v[i];
                CHECK(std::abs(gap - factor * gap0.v[i]) <= 1e-6 * std::max(1.0, std::abs(gap0.v[i])));
            }
        }
    }
    SUBCASE("shape mismatch raises") {
        nn::ParamStore t, s;
        t.add("w", 1, 2);
        s.add("w", 2, 1);
        CHECK_THROWS_AS(ema_update(t, s, 0.5), StateError);
    }
    SUBCASE("momentum outside [0,1] raises") {
        nn::ParamStore t = store_with(1.0), s = store_with(0.0);
        CHECK_THROWS_AS(ema_update(t, s, 1.5), ConfigError);
    }
}

TEST_CASE("trainer embeddings are unit-norm and deterministic") {
    Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
    auto data = tiny_dataset(4, trainer.encoder_config(), 30);
    std::vector<const Tensor*> patches;
    std::vector<const std::vector<int>*> tokens;
    for (const auto& ex : data) {
        patches.push_back(&ex.patches);
        tokens.push_back(&ex.tokens);
    }
    Tensor i1 = trainer.encode_images(patches);
    Tensor i2 = trainer.encode_images(patches);
    CHECK(i1 == i2);
    Tensor t1 = trainer.encode_texts(tokens);
    for (const Tensor* f : {&i1, &t1}) {
        for (int r = 0; r < f->rows; ++r) {
            double n2 = 0.0;
            for (int c = 0; c < f->cols; ++c) {
                n2 += f->at(r, c) * f->at(r, c);
            }
            CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    // teacher starts as a copy of the student
    Tensor teacher_feats = trainer.encode_images(patches, true);
    CHECK(teacher_feats == i1);
}

TEST_CASE("over-length text is truncated with a warning") {
    Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
    std::vector<std::string> warnings;
    trainer.set_warn_sink([&](const std::string& w) { warnings.push_back(w); });
    const int limit = trainer.max_text_tokens();
    std::vector<int> longseq(static_cast<size_t>(limit + 5), 1);
    std::vector<int> exact(longseq.begin(), longseq.begin() + limit);
    Tensor a = trainer.encode_texts({&longseq});
    Tensor b = trainer.encode_texts({&exact});
    CHECK(a == b);
    CHECK(warnings.size() == 1);
}

TEST_CASE("train steps are bit-deterministic across runs") {
    auto run = [](int steps) {
        Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
        auto data = tiny_dataset(9, trainer.encoder_config(), 31);
        std::vector<LossBreakdown> out;
        for (int s = 0; s < steps; ++s) {
            out.push_back(trainer.train_step(as_batch(data, (s * 3) % 9, 3)));
        }
        return out;
    };
    auto a = run(12);
    auto b = run(12);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].l_c == b[i].l_c);
        CHECK(a[i].l_d == b[i].l_d);
        CHECK(a[i].total == b[i].total);
    }
}

TEST_CASE("mu=0, m=1, K=0 reduces to contrastive-only training") {
    TrainConfig cfg = tiny_train(0.0);
    cfg.momentum = 1.0;
    cfg.queue_capacity = 0;
    Trainer trainer(tiny_encoder(), tiny_ipsi(), cfg);
    auto data = tiny_dataset(6, trainer.encoder_config(), 32);

    const std::uint64_t teacher_before = trainer.teacher().value_hash();
    for (int s = 0; s < 4; ++s) {
        LossBreakdown loss = trainer.train_step(as_batch(data, 0, 3));
        CHECK(loss.total == doctest::Approx(loss.l_c).epsilon(1e-15));
        CHECK(loss.l_d >= 0.0); // computed but unused
    }
    CHECK(trainer.teacher().value_hash() == teacher_before);
    CHECK(trainer.image_queue().size() == 0);
    CHECK(trainer.text_queue().size() == 0);
}

TEST_CASE("loss is permutation-equivariant over the batch") {
    Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
    auto data = tiny_dataset(5, trainer.encoder_config(), 33);
    auto batch = as_batch(data, 0, 5);
    LossBreakdown base = trainer.eval_loss(batch);
    std::vector<const PairExample*> permuted = {batch[3], batch[0], batch[4], batch[2], batch[1]};
    LossBreakdown moved = trainer.eval_loss(permuted);
    CHECK(moved.l_c == doctest::Approx(base.l_c).epsilon(1e-12));
    CHECK(moved.l_d == doctest::Approx(base.l_d).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences on a width-8 model") {
    TrainConfig cfg = tiny_train(0.5);
    cfg.queue_capacity = 4;
    Trainer trainer(tiny_encoder(8, 8), tiny_ipsi(), cfg);
    auto data = tiny_dataset(3, trainer.encoder_config(), 34);
    auto batch = as_batch(data, 0, 3);

    // non-empty queues so the loss sees queue negatives too
    trainer.image_queue().push(unit_rows(2, 8, 35));
    trainer.text_queue().push(unit_rows(2, 8, 36));

    trainer.eval_loss(batch, true);

    // sample parameters spread across every tensor, tau included
    std::mt19937_64 rng(37);
    int checked = 0;
    auto& params = trainer.student().all();
    for (size_t pi = 0; pi < params.size(); pi += 3) {
        nn::Param& p = params[pi];
        const size_t k = rng() % p.value.v.size();
        const double orig = p.value.v[k];
        const double h = 1e-5 * std::max(1.0, std::abs(orig));
        p.value.v[k] = orig + h;
        const double up = trainer.eval_loss(batch).total;
        p.value.v[k] = orig - h;
        const double down = trainer.eval_loss(batch).total;
        p.value.v[k] = orig;
        const double fd = (up - down) / (2.0 * h);
        const double an = p.grad.v[k];
        CAPTURE(p.name);
        CHECK(std::abs(an - fd) <= 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-6}));
        ++checked;
    }
    CHECK(checked >= 10);
}

TEST_CASE("checkpoint round-trip restores every tensor bit-exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "urbanln_ckpt_test.bin").string();

    Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
    auto data = tiny_dataset(9, trainer.encoder_config(), 38);
    for (int s = 0; s < 3; ++s) {
        trainer.train_step(as_batch(data, s * 3, 3));
    }
    save_checkpoint(trainer, path);
    auto loaded = load_checkpoint(path);

    CHECK(loaded->step_count() == trainer.step_count());
    CHECK(loaded->student().value_hash() == trainer.student().value_hash());
    CHECK(loaded->teacher().value_hash() == trainer.teacher().value_hash());
    CHECK(loaded->image_queue().snapshot() == trainer.image_queue().snapshot());
    CHECK(loaded->text_queue().snapshot() == trainer.text_queue().snapshot());
    for (size_t i = 0; i < trainer.student().count(); ++i) {
        CHECK(loaded->student().all()[i].value == trainer.student().all()[i].value);
    }
    fs::remove(path);
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "urbanln_resume_test.bin").string();

    EncoderConfig enc = tiny_encoder();
    TrainConfig cfg = tiny_train();
    cfg.batch_size = 3;
    cfg.epochs = 2; // dataset of 9 -> 3 steps per epoch -> 6 steps total
    auto data = tiny_dataset(9, enc, 39);

    std::vector<LossBreakdown> full;
    {
        Trainer t(enc, tiny_ipsi(), cfg);
        t.run(data, [&](const StepMetrics& m) { full.push_back(m.loss); });
    }
    REQUIRE(full.size() == 6);

    TrainConfig half = cfg;
    half.epochs = 1;
    {
        Trainer t(enc, tiny_ipsi(), half);
        t.run(data, {});
        save_checkpoint(t, path);
    }
    std::vector<LossBreakdown> resumed;
    {
        auto t = load_checkpoint(path);
        t->set_epochs(2);
        t->run(data, [&](const StepMetrics& m) { resumed.push_back(m.loss); });
    }
    REQUIRE(resumed.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(resumed[static_cast<size_t>(i)].total == full[static_cast<size_t>(i) + 3].total);
        CHECK(resumed[static_cast<size_t>(i)].l_c == full[static_cast<size_t>(i) + 3].l_c);
        CHECK(resumed[static_cast<size_t>(i)].l_d == full[static_cast<size_t>(i) + 3].l_d);
    }
    fs::remove(path);
}

TEST_CASE("truncated checkpoints are rejected without partial state") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "urbanln_trunc_test.bin").string();
    Trainer trainer(tiny_encoder(), tiny_ipsi(), tiny_train());
    save_checkpoint(trainer, path);

    std::string bytes;
    {
        FILE* f = std::fopen(path.c_str(), "rb");
        REQUIRE(f != nullptr);
        char buf[4096];
        size_t n;
        while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) {
            bytes.append(buf, n);
        }
        std::fclose(f);
    }
    bytes.resize(bytes.size() / 2);
    {
        FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite(bytes.data(), 1, bytes.size(), f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), StateError);
    fs::remove(path);
}

TEST_CASE("toy corpus generator shapes, mispairing, and determinism") {
    ToyCorpusConfig cfg;
    cfg.train_pairs = 20;
    cfg.eval_pairs = 6;
    cfg.mispair_fraction = 0.3;
    ToyCorpus a = make_toy_corpus(cfg);
    ToyCorpus b = make_toy_corpus(cfg);
    CHECK(a.train.size() == 20);
    CHECK(a.eval.size() == 6);
    CHECK(a.mispaired == 6);
    CHECK(a.vocab_size == 1 + cfg.latent_dim * cfg.buckets_per_dim);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].patches == b.train[i].patches);
        CHECK(a.train[i].tokens == b.train[i].tokens);
    }
    // every token in range
    for (const auto& ex : a.train) {
        for (int t : ex.tokens) {
            CHECK(t >= 1);
            CHECK(t < a.vocab_size);
        }
    }
    // mispairing changed exactly the rotated texts, images untouched
    ToyCorpusConfig clean = cfg;
    clean.mispair_fraction = 0.0;
    ToyCorpus c = make_toy_corpus(clean);
    int changed = 0;
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].patches == c.train[i].patches);
        if (a.train[i].tokens != c.train[i].tokens) {
            ++changed;
        }
    }
    CHECK(changed == 6);
}

TEST_CASE("topk accuracy on hand-built features") {
    Tensor q(3, 2), t(3, 2);
    // identity alignment
    q.v = {1, 0, 0, 1, -1, 0};
    t.v = {1, 0, 0, 1, -1, 0};
    CHECK(topk_accuracy(q, t, 1) == doctest::Approx(1.0));
    // row 0 now prefers target 1
    q.v = {0, 1, 0, 1, -1, 0};
    CHECK(topk_accuracy(q, t, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(topk_accuracy(q, t, 2) == doctest::Approx(1.0));
}
