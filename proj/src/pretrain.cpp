#include "urbanln/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace urbanln {

FeatureQueue::FeatureQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity_ < 0) {
        throw ConfigError("queue capacity must be >= 0");
    }
    if (dim_ < 1) {
        throw ConfigError("queue feature dimension must be >= 1");
    }
}

void FeatureQueue::push(const nn::Tensor& feats) {
    if (feats.cols != dim_) {
        throw StateError("queue push dimension mismatch");
    }
    for (int i = 0; i < feats.rows; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < dim_; ++j) {
            n2 += feats.at(i, j) * feats.at(i, j);
        }
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
            throw StateError("queue entries must be unit-norm");
        }
        entries_.emplace_back(feats.row(i), feats.row(i) + dim_);
    }
    while (static_cast<int>(entries_.size()) > capacity_) {
        entries_.pop_front();
    }
}

nn::Tensor FeatureQueue::snapshot() const {
    nn::Tensor t(size(), dim_);
    int r = 0;
    for (const auto& e : entries_) {
        std::copy(e.begin(), e.end(), t.row(r));
        ++r;
    }
    return t;
}

void FeatureQueue::restore(std::deque<std::vector<double>> entries) {
    if (static_cast<int>(entries.size()) > capacity_) {
        throw StateError("restored queue exceeds capacity");
    }
    for (const auto& e : entries) {
        if (static_cast<int>(e.size()) != dim_) {
            throw StateError("restored queue entry dimension mismatch");
        }
    }
    entries_ = std::move(entries);
}

namespace {

nn::Tensor candidate_matrix(const nn::Tensor& teacher_batch, const FeatureQueue& queue) {
    nn::Tensor qsnap = queue.snapshot();
    nn::Tensor cands(teacher_batch.rows + qsnap.rows, teacher_batch.cols);
    for (int i = 0; i < teacher_batch.rows; ++i) {
        std::copy(teacher_batch.row(i), teacher_batch.row(i) + teacher_batch.cols, cands.row(i));
    }
    for (int i = 0; i < qsnap.rows; ++i) {
        std::copy(qsnap.row(i), qsnap.row(i) + qsnap.cols, cands.row(teacher_batch.rows + i));
    }
    return cands;
}

constexpr double kProbFloor = 1e-12;

} // namespace

nn::Tensor modality_distribution(const nn::Tensor& query_feats, const nn::Tensor& teacher_batch,
                                 const FeatureQueue& queue, double tau) {
    if (tau <= 0) {
        throw DomainError("tau must be > 0");
    }
    if (query_feats.rows < 1) {
        throw DataError("empty batch");
    }
    if (query_feats.cols != teacher_batch.cols) {
        throw StateError("feature dimension mismatch");
    }
    nn::Tensor cands = candidate_matrix(teacher_batch, queue);
    nn::Tensor logits(query_feats.rows, cands.rows);
    nn::matmul_nt_acc(logits, query_feats, cands);
    for (double& x : logits.v) {
        x /= tau;
    }
    return nn::softmax_rows(logits);
}

DistributionPair similarity_distributions(const nn::Tensor& stu_img, const nn::Tensor& stu_txt,
                                          const nn::Tensor& tea_img, const nn::Tensor& tea_txt,
                                          const FeatureQueue& img_queue,
                                          const FeatureQueue& txt_queue, double tau) {
    DistributionPair p;
    p.i2t = modality_distribution(stu_img, tea_txt, txt_queue, tau);
    p.t2i = modality_distribution(stu_txt, tea_img, img_queue, tau);
    return p;
}

double contrastive_loss(const DistributionPair& p) {
    const int n = p.i2t.rows;
    if (p.t2i.rows != n) {
        throw StateError("distribution pair batch mismatch");
    }
    double acc = 0.0;
    int floored = 0;
    for (int i = 0; i < n; ++i) {
        for (const nn::Tensor* d : {&p.i2t, &p.t2i}) {
            double pos = d->at(i, i);
            if (pos < kProbFloor) {
                pos = kProbFloor;
                ++floored;
            }
            acc += std::log(pos);
        }
    }
    if (floored > 0) {
        std::cerr << "warning: " << floored
                  << " positive probabilities clamped to 1e-12 in contrastive loss\n";
    }
    return -acc / (2.0 * n);
}

DistributionPair pseudo_targets(const nn::Tensor& tea_img, const nn::Tensor& tea_txt,
                                const FeatureQueue& img_queue, const FeatureQueue& txt_queue,
                                double tau) {
    return similarity_distributions(tea_img, tea_txt, tea_img, tea_txt, img_queue, txt_queue, tau);
}

namespace {

double kl_rows_mean(const nn::Tensor& q, const nn::Tensor& p) {
    if (!q.same_shape(p)) {
        throw StateError("KL shape mismatch");
    }
    double total = 0.0;
    for (size_t i = 0; i < q.v.size(); ++i) {
        const double qi = q.v[i];
        if (qi > 0) {
            total += qi * (std::log(qi) - std::log(std::max(p.v[i], kProbFloor)));
        }
    }
    return total / q.rows;
}

} // namespace

double distillation_loss(const DistributionPair& q, const DistributionPair& p) {
    return 0.5 * (kl_rows_mean(q.i2t, p.i2t) + kl_rows_mean(q.t2i, p.t2i));
}

double total_loss(double l_c, double l_d, double mu) {
    return (1.0 - mu) * l_c + mu * l_d;
}

void ema_update(nn::ParamStore& teacher, const nn::ParamStore& student, double m) {
    if (m < 0.0 || m > 1.0) {
        throw ConfigError("ema momentum must be in [0,1]");
    }
    for (auto& tp : teacher.all()) {
        const nn::Param* sp = student.find(tp.name);
        if (sp == nullptr) {
            throw StateError("ema: student is missing parameter '" + tp.name + "'");
        }
        if (!sp->value.same_shape(tp.value)) {
            throw StateError("ema: shape mismatch on parameter '" + tp.name + "'");
        }
        for (size_t i = 0; i < tp.value.v.size(); ++i) {
            tp.value.v[i] = m * tp.value.v[i] + (1.0 - m) * sp->value.v[i];
        }
    }
}

void TrainConfig::validate() const {
    if (mu < 0.0 || mu > 1.0) {
        throw ConfigError("train.mu must be in [0,1]");
    }
    if (momentum < 0.0 || momentum > 1.0) {
        throw ConfigError("train.momentum must be in [0,1]");
    }
    if (queue_capacity < 0) {
        throw ConfigError("train.queue_capacity must be >= 0");
    }
    if (batch_size < 1) {
        throw ConfigError("train.batch_size must be >= 1");
    }
    if (learning_rate <= 0) {
        throw ConfigError("train.learning_rate must be > 0");
    }
    if (epochs < 0) {
        throw ConfigError("train.epochs must be >= 0");
    }
    if (tau_init <= 0 || tau_min <= 0 || tau_max < tau_min) {
        throw ConfigError("train.tau settings must satisfy 0 < tau_min <= tau_max, tau_init > 0");
    }
}

Trainer::Trainer(EncoderConfig enc_cfg, ipsi::IpsiConfig ipsi_cfg, TrainConfig cfg)
    : enc_cfg_(enc_cfg), ipsi_cfg_(ipsi_cfg), cfg_(cfg),
      img_queue_(cfg.queue_capacity, enc_cfg.embed_dim),
      txt_queue_(cfg.queue_capacity, enc_cfg.embed_dim) {
    enc_cfg_.validate();
    ipsi_cfg_.validate();
    cfg_.validate();

    std::mt19937_64 rng(derive_seed(cfg_.seed, "init"));
    init_encoder_params(student_, enc_cfg_, "img.", false, rng);
    init_encoder_params(student_, enc_cfg_, "txt.", true, rng);
    nn::Param& tau = student_.add("tau", 1, 1);
    tau.value.v[0] = cfg_.tau_init;

    // Teacher mirrors the encoders (not tau) and starts as a copy.
    for (const auto& p : student_.all()) {
        if (p.name == "tau") {
            continue;
        }
        teacher_.add(p.name, p.value.rows, p.value.cols).value = p.value;
    }
}

double Trainer::tau() const {
    return student_.at("tau").value.v[0];
}

void Trainer::warn(const std::string& msg) const {
    if (warn_) {
        warn_(msg);
    } else {
        std::cerr << "warning: " << msg << "\n";
    }
}

std::vector<int> Trainer::truncated(const std::vector<int>& tokens) const {
    const int limit = max_text_tokens();
    if (static_cast<int>(tokens.size()) <= limit) {
        return tokens;
    }
    warn("token sequence of length " + std::to_string(tokens.size()) + " truncated to " +
         std::to_string(limit));
    return {tokens.begin(), tokens.begin() + limit};
}

nn::Tensor Trainer::encode_images(const std::vector<const nn::Tensor*>& patch_grids,
                                  bool use_teacher) const {
    nn::Tensor out(static_cast<int>(patch_grids.size()), enc_cfg_.embed_dim);
    if (patch_grids.empty()) {
        return out;
    }
    nn::Graph g;
    auto& store = const_cast<nn::ParamStore&>(use_teacher ? teacher_ : student_);
    EncoderForward enc(g, store, enc_cfg_, "img.", false, false, ipsi_cfg_);
    for (size_t i = 0; i < patch_grids.size(); ++i) {
        int node = enc.image_sample(*patch_grids[i]);
        const nn::Tensor& v = g.value(node);
        std::copy(v.v.begin(), v.v.end(), out.row(static_cast<int>(i)));
    }
    return out;
}

nn::Tensor Trainer::encode_texts(const std::vector<const std::vector<int>*>& token_seqs,
                                 bool use_teacher) const {
    nn::Tensor out(static_cast<int>(token_seqs.size()), enc_cfg_.embed_dim);
    if (token_seqs.empty()) {
        return out;
    }
    nn::Graph g;
    auto& store = const_cast<nn::ParamStore&>(use_teacher ? teacher_ : student_);
    EncoderForward enc(g, store, enc_cfg_, "txt.", true, false, ipsi_cfg_);
    for (size_t i = 0; i < token_seqs.size(); ++i) {
        int node = enc.text_sample(truncated(*token_seqs[i]));
        const nn::Tensor& v = g.value(node);
        std::copy(v.v.begin(), v.v.end(), out.row(static_cast<int>(i)));
    }
    return out;
}

Trainer::ForwardResult Trainer::forward_losses(const std::vector<const PairExample*>& batch,
                                               bool with_grads) {
    if (batch.empty()) {
        throw DataError("train_step on an empty batch");
    }
    const int n = static_cast<int>(batch.size());
    const double tau_value = tau();

    // 1. Teacher forward (no gradients).
    std::vector<const nn::Tensor*> patch_ptrs;
    std::vector<const std::vector<int>*> token_ptrs;
    patch_ptrs.reserve(batch.size());
    token_ptrs.reserve(batch.size());
    for (const PairExample* ex : batch) {
        patch_ptrs.push_back(&ex->patches);
        token_ptrs.push_back(&ex->tokens);
    }
    nn::Tensor tea_img = encode_images(patch_ptrs, true);
    nn::Tensor tea_txt = encode_texts(token_ptrs, true);

    // 2. Pseudo-targets from the teacher.
    DistributionPair q = pseudo_targets(tea_img, tea_txt, img_queue_, txt_queue_, tau_value);

    // 3. Student forward on the tape.
    nn::Graph g;
    EncoderForward img_enc(g, student_, enc_cfg_, "img.", false, with_grads, ipsi_cfg_);
    EncoderForward txt_enc(g, student_, enc_cfg_, "txt.", true, with_grads, ipsi_cfg_);
    std::vector<int> img_nodes, txt_nodes;
    for (const PairExample* ex : batch) {
        img_nodes.push_back(img_enc.image_sample(ex->patches));
        txt_nodes.push_back(txt_enc.text_sample(truncated(ex->tokens)));
    }
    int stu_img = g.concat_rows(img_nodes);
    int stu_txt = g.concat_rows(txt_nodes);

    nn::Param& tau_param = student_.at("tau");
    int tau_node = g.param(&tau_param.value, with_grads ? &tau_param.grad : nullptr);
    int inv_tau = g.reciprocal(tau_node);

    int cand_txt = g.constant(candidate_matrix(tea_txt, txt_queue_));
    int cand_img = g.constant(candidate_matrix(tea_img, img_queue_));
    int p_i2t = g.softmax_rows(g.mul_scalar(g.matmul_nt(stu_img, cand_txt), inv_tau));
    int p_t2i = g.softmax_rows(g.mul_scalar(g.matmul_nt(stu_txt, cand_img), inv_tau));

    // 4. Losses.
    std::vector<int> diag(static_cast<size_t>(n));
    std::iota(diag.begin(), diag.end(), 0);
    int lc_node = g.scale(g.add(g.mean_all(g.log_floor(g.pick(p_i2t, diag), kProbFloor)),
                                g.mean_all(g.log_floor(g.pick(p_t2i, diag), kProbFloor))),
                          -0.5);
    int ld_node =
        g.scale(g.add(g.kl_from(q.i2t, p_i2t, kProbFloor), g.kl_from(q.t2i, p_t2i, kProbFloor)),
                0.5);
    int total_node = g.add_scaled(lc_node, 1.0 - cfg_.mu, ld_node, cfg_.mu);

    ForwardResult out;
    out.loss.l_c = g.scalar(lc_node);
    out.loss.l_d = g.scalar(ld_node);
    out.loss.total = g.scalar(total_node);
    if (!std::isfinite(out.loss.total)) {
        throw StateError("non-finite loss at step " + std::to_string(step_) +
                         ": l_c=" + std::to_string(out.loss.l_c) +
                         " l_d=" + std::to_string(out.loss.l_d) +
                         " tau=" + std::to_string(tau_value));
    }

    if (with_grads) {
        student_.zero_grads();
        g.backward(total_node);
        if (!student_.grads_finite()) {
            std::ostringstream diag_msg;
            diag_msg << "non-finite gradient at step " << step_ << " (tau=" << tau_value << ")";
            throw StateError(diag_msg.str());
        }
    }
    out.tea_img = std::move(tea_img);
    out.tea_txt = std::move(tea_txt);
    return out;
}

LossBreakdown Trainer::eval_loss(const std::vector<const PairExample*>& batch, bool with_grads) {
    return forward_losses(batch, with_grads).loss;
}

LossBreakdown Trainer::train_step(const std::vector<const PairExample*>& batch) {
    ForwardResult fr = forward_losses(batch, true);

    // 5. Student gradient step.
    nn::AdamWConfig ocfg;
    ocfg.lr = cfg_.learning_rate;
    ocfg.beta1 = cfg_.adam_beta1;
    ocfg.beta2 = cfg_.adam_beta2;
    ocfg.eps = cfg_.adam_eps;
    ocfg.weight_decay = cfg_.weight_decay;
    opt_.step(student_, ocfg);
    nn::Param& tau_param = student_.at("tau");
    tau_param.value.v[0] = std::clamp(tau_param.value.v[0], cfg_.tau_min, cfg_.tau_max);

    // 6. EMA update, then enqueue this batch's teacher features.
    ema_update(teacher_, student_, cfg_.momentum);
    img_queue_.push(fr.tea_img);
    txt_queue_.push(fr.tea_txt);

    ++step_;
    return fr.loss;
}

void Trainer::run(const std::vector<PairExample>& dataset, const MetricsSink& sink) {
    const int n = static_cast<int>(dataset.size());
    const int spe = n / cfg_.batch_size; // steps per epoch, trailing partial batch dropped
    if (spe < 1) {
        throw DataError("dataset smaller than one batch (" + std::to_string(n) + " < " +
                        std::to_string(cfg_.batch_size) + ")");
    }
    const long long total_steps = static_cast<long long>(cfg_.epochs) * spe;

    long long cached_epoch = -1;
    std::vector<int> order;
    while (step_ < total_steps) {
        const long long epoch = step_ / spe;
        const long long pos = step_ % spe;
        if (epoch != cached_epoch) {
            order.resize(static_cast<size_t>(n));
            std::iota(order.begin(), order.end(), 0);
            std::mt19937_64 rng(derive_seed(cfg_.seed, "epoch-" + std::to_string(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
            cached_epoch = epoch;
        }
        std::vector<const PairExample*> batch;
        batch.reserve(static_cast<size_t>(cfg_.batch_size));
        for (int b = 0; b < cfg_.batch_size; ++b) {
            batch.push_back(&dataset[static_cast<size_t>(order[pos * cfg_.batch_size + b])]);
        }
        StepMetrics m;
        m.step = step_;
        m.loss = train_step(batch);
        m.tau = tau();
        if (sink) {
            sink(m);
        }
    }
}

} // namespace urbanln
