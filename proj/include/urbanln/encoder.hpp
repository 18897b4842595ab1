#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "urbanln/ipsi.hpp"
#include "urbanln/nn/graph.hpp"
#include "urbanln/nn/params.hpp"

namespace urbanln {

// Shape of the desk-scale dual encoders: two small pre-norm transformers with
// mean pooling and a linear projection into a shared unit-sphere space.
struct EncoderConfig {
    int depth = 2;
    int d_model = 64;
    int heads = 4;
    int mlp_ratio = 4;
    int embed_dim = 32;

    // text side
    int vocab_size = 256;
    int pos_base_len = 77; // base positional table length, stretched via ipsi

    // image side: an image is patch_count patches of patch_dim floats
    int patch_count = 8;
    int patch_dim = 16;

    void validate() const;
    int head_dim() const { return d_model / heads; }
    // usable text length after stretching
    int max_text_tokens(const ipsi::IpsiConfig& cfg) const {
        return cfg.target_length(pos_base_len);
    }
};

// Registers one encoder's parameters under `prefix` ("img." / "txt.").
void init_encoder_params(nn::ParamStore& ps, const EncoderConfig& cfg, const std::string& prefix,
                         bool text_side, std::mt19937_64& rng);

// Builds forward passes for a batch on one graph, caching parameter nodes and
// the stretched positional table. with_grad=false adds parameters as constants
// (teacher / frozen extraction path).
class EncoderForward {
public:
    EncoderForward(nn::Graph& g, nn::ParamStore& ps, const EncoderConfig& cfg, std::string prefix,
                   bool text_side, bool with_grad, const ipsi::IpsiConfig& ipsi_cfg);

    // [1 x embed_dim] unit-norm node for one sample.
    int text_sample(const std::vector<int>& tokens);
    int image_sample(const nn::Tensor& patches);

private:
    int pnode(const std::string& name);
    int positions(int count); // first `count` rows of the (stretched) table
    int block(int x, int layer, int seq_len);

    nn::Graph& g_;
    nn::ParamStore& ps_;
    EncoderConfig cfg_;
    std::string prefix_;
    bool text_side_;
    bool with_grad_;
    ipsi::IpsiConfig ipsi_cfg_;
    std::unordered_map<std::string, int> cache_;
    int pos_table_node_ = -1;
};

} // namespace urbanln
