#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "urbanln/encoder.hpp"
#include "urbanln/nn/params.hpp"

namespace urbanln {

// FIFO buffer of the most recent teacher embeddings, used as extra negatives.
class FeatureQueue {
public:
    FeatureQueue(int capacity, int dim);

    // Appends rows in batch order, evicting the oldest beyond capacity.
    void push(const nn::Tensor& feats);
    nn::Tensor snapshot() const; // [size x dim]

    int size() const { return static_cast<int>(entries_.size()); }
    int capacity() const { return capacity_; }
    int dim() const { return dim_; }
    const std::deque<std::vector<double>>& entries() const { return entries_; }
    void restore(std::deque<std::vector<double>> entries);

private:
    int capacity_;
    int dim_;
    std::deque<std::vector<double>> entries_;
};

// Softmax over cosine similarities between each query row and the candidate
// set [teacher batch || queue], scaled by 1/tau. Row i's positive sits at
// column i.
nn::Tensor modality_distribution(const nn::Tensor& query_feats, const nn::Tensor& teacher_batch,
                                 const FeatureQueue& queue, double tau);

struct DistributionPair {
    nn::Tensor i2t; // N x (N + K')
    nn::Tensor t2i;
};

DistributionPair similarity_distributions(const nn::Tensor& stu_img, const nn::Tensor& stu_txt,
                                          const nn::Tensor& tea_img, const nn::Tensor& tea_txt,
                                          const FeatureQueue& img_queue,
                                          const FeatureQueue& txt_queue, double tau);

// -(1/2N) * sum_i [log p_i2t(i,i) + log p_t2i(i,i)], probabilities floored at
// 1e-12 (a warning is printed when the floor triggers).
double contrastive_loss(const DistributionPair& p);

// Same softmax form computed entirely from teacher features.
DistributionPair pseudo_targets(const nn::Tensor& tea_img, const nn::Tensor& tea_txt,
                                const FeatureQueue& img_queue, const FeatureQueue& txt_queue,
                                double tau);

// (1/2) * batch mean of KL(q_i2t || p_i2t) + KL(q_t2i || p_t2i).
double distillation_loss(const DistributionPair& q, const DistributionPair& p);

double total_loss(double l_c, double l_d, double mu);

struct LossBreakdown {
    double l_c = 0.0;
    double l_d = 0.0;
    double total = 0.0;
};

// theta_teacher <- m * theta_teacher + (1 - m) * theta_student, matched by
// parameter name. Teacher-side parameters missing from the student, or shape
// mismatches, raise StateError.
void ema_update(nn::ParamStore& teacher, const nn::ParamStore& student, double m);

struct TrainConfig {
    double mu = 0.5;
    double momentum = 0.995;
    int queue_capacity = 4096;
    int batch_size = 32;
    double learning_rate = 1e-3; // desk-scale default; large pretrained stacks want far smaller
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 30;
    std::uint64_t seed = 1;
    double tau_init = 0.07;
    double tau_min = 5e-3;
    double tau_max = 0.5;

    // mu endpoints (0 and 1 exactly) are permitted here; the config file
    // loader additionally enforces the open interval.
    void validate() const;
};

// One image-text pair: patch grid plus token sequence.
struct PairExample {
    nn::Tensor patches;
    std::vector<int> tokens;
};

struct StepMetrics {
    long long step = 0;
    LossBreakdown loss;
    double tau = 0.0;
};

using MetricsSink = std::function<void(const StepMetrics&)>;
using WarnSink = std::function<void(const std::string&)>;

// Owns the dual-encoder state, teacher mirror, queues, and optimizer, and
// runs the per-iteration sequence: teacher forward, pseudo-targets, student
// forward, losses, optimizer step, EMA update, queue push.
class Trainer {
public:
    Trainer(EncoderConfig enc_cfg, ipsi::IpsiConfig ipsi_cfg, TrainConfig cfg);

    LossBreakdown train_step(const std::vector<const PairExample*>& batch);

    // Loss at the current parameters without any state change (no optimizer
    // step, EMA, queue push, or step counter). with_grads=true additionally
    // leaves d(total)/d(theta) in the student store's grad buffers.
    LossBreakdown eval_loss(const std::vector<const PairExample*>& batch,
                            bool with_grads = false);

    // Epoch loop over the dataset; batch order for epoch e is a shuffle seeded
    // from derive_seed(seed, "epoch-<e>"), so training resumes deterministically
    // from the step counter alone. The trailing partial batch is dropped.
    void run(const std::vector<PairExample>& dataset, const MetricsSink& sink = {});

    // Unit-norm embeddings, one row per sample; never mutates parameters.
    nn::Tensor encode_images(const std::vector<const nn::Tensor*>& patch_grids,
                             bool use_teacher = false) const;
    nn::Tensor encode_texts(const std::vector<const std::vector<int>*>& token_seqs,
                            bool use_teacher = false) const;

    double tau() const;
    long long step_count() const { return step_; }
    int max_text_tokens() const { return enc_cfg_.max_text_tokens(ipsi_cfg_); }

    nn::ParamStore& student() { return student_; }
    const nn::ParamStore& student() const { return student_; }
    nn::ParamStore& teacher() { return teacher_; }
    const nn::ParamStore& teacher() const { return teacher_; }
    FeatureQueue& image_queue() { return img_queue_; }
    FeatureQueue& text_queue() { return txt_queue_; }
    const FeatureQueue& image_queue() const { return img_queue_; }
    const FeatureQueue& text_queue() const { return txt_queue_; }
    nn::AdamW& optimizer() { return opt_; }
    const nn::AdamW& optimizer() const { return opt_; }
    const EncoderConfig& encoder_config() const { return enc_cfg_; }
    const ipsi::IpsiConfig& ipsi_config() const { return ipsi_cfg_; }
    const TrainConfig& train_config() const { return cfg_; }

    void set_warn_sink(WarnSink w) { warn_ = std::move(w); }
    void restore_step(long long step) { step_ = step; }
    void set_epochs(int epochs) { cfg_.epochs = epochs; }

private:
    struct ForwardResult {
        LossBreakdown loss;
        nn::Tensor tea_img;
        nn::Tensor tea_txt;
    };
    ForwardResult forward_losses(const std::vector<const PairExample*>& batch, bool with_grads);
    std::vector<int> truncated(const std::vector<int>& tokens) const;
    void warn(const std::string& msg) const;

    EncoderConfig enc_cfg_;
    ipsi::IpsiConfig ipsi_cfg_;
    TrainConfig cfg_;
    nn::ParamStore student_;
    nn::ParamStore teacher_;
    nn::AdamW opt_;
    FeatureQueue img_queue_;
    FeatureQueue txt_queue_;
    long long step_ = 0;
    WarnSink warn_;
};

} // namespace urbanln
