#include "urbanln/encoder.hpp"

#include <cmath>
#include <numeric>

namespace urbanln {

void EncoderConfig::validate() const {
    if (depth < 1) {
        throw ConfigError("encoder.depth must be >= 1");
    }
    if (d_model < 1 || heads < 1 || d_model % heads != 0) {
        throw ConfigError("encoder.d_model must be a positive multiple of encoder.heads");
    }
    if (mlp_ratio < 1) {
        throw ConfigError("encoder.mlp_ratio must be >= 1");
    }
    if (embed_dim < 1) {
        throw ConfigError("encoder.embed_dim must be >= 1");
    }
    if (vocab_size < 2) {
        throw ConfigError("encoder.vocab_size must be >= 2");
    }
    if (pos_base_len < ipsi::IpsiConfig::preserve + 1) {
        throw ConfigError("encoder.pos_base_len must be >= 21");
    }
    if (patch_count < 1 || patch_dim < 1) {
        throw ConfigError("encoder.patch_count and encoder.patch_dim must be >= 1");
    }
}

void init_encoder_params(nn::ParamStore& ps, const EncoderConfig& cfg, const std::string& prefix,
                         bool text_side, std::mt19937_64& rng) {
    cfg.validate();
    const int d = cfg.d_model;
    const int dh = cfg.head_dim();
    const int hidden = cfg.mlp_ratio * d;
    auto normal = [&](const std::string& name, int r, int c, double sd) {
        nn::Param& p = ps.add(prefix + name, r, c);
        nn::fill_normal(p.value, rng, sd);
    };
    auto ones = [&](const std::string& name, int c) {
        nn::Param& p = ps.add(prefix + name, 1, c);
        std::fill(p.value.v.begin(), p.value.v.end(), 1.0);
    };
    auto zeros = [&](const std::string& name, int r, int c) { ps.add(prefix + name, r, c); };

    if (text_side) {
        normal("tok_embed", cfg.vocab_size, d, 0.02);
        normal("pos", cfg.pos_base_len, d, 0.01);
    } else {
        normal("patch_proj", cfg.patch_dim, d, 0.02);
        normal("pos", cfg.patch_count, d, 0.01);
    }
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string L = "L" + std::to_string(l) + ".";
        ones(L + "ln1.g", d);
        zeros(L + "ln1.b", 1, d);
        for (int h = 0; h < cfg.heads; ++h) {
            const std::string H = L + "h" + std::to_string(h) + ".";
            normal(H + "wq", d, dh, 0.02);
            normal(H + "wk", d, dh, 0.02);
            normal(H + "wv", d, dh, 0.02);
        }
        normal(L + "wo", d, d, 0.02);
        zeros(L + "bo", 1, d);
        ones(L + "ln2.g", d);
        zeros(L + "ln2.b", 1, d);
        normal(L + "mlp.w1", d, hidden, 0.02);
        zeros(L + "mlp.b1", 1, hidden);
        normal(L + "mlp.w2", hidden, d, 0.02);
        zeros(L + "mlp.b2", 1, d);
    }
    ones("lnf.g", d);
    zeros("lnf.b", 1, d);
    normal("proj", d, cfg.embed_dim, 0.02);
}

EncoderForward::EncoderForward(nn::Graph& g, nn::ParamStore& ps, const EncoderConfig& cfg,
                               std::string prefix, bool text_side, bool with_grad,
                               const ipsi::IpsiConfig& ipsi_cfg)
    : g_(g), ps_(ps), cfg_(cfg), prefix_(std::move(prefix)), text_side_(text_side),
      with_grad_(with_grad), ipsi_cfg_(ipsi_cfg) {}

int EncoderForward::pnode(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) {
        return it->second;
    }
    nn::Param& p = ps_.at(prefix_ + name);
    int id = g_.param(&p.value, with_grad_ ? &p.grad : nullptr);
    cache_[name] = id;
    return id;
}

int EncoderForward::positions(int count) {
    if (pos_table_node_ < 0) {
        int base = pnode("pos");
        pos_table_node_ = text_side_ ? g_.ipsi_stretch(base, ipsi_cfg_) : base;
    }
    std::vector<int> ids(static_cast<size_t>(count));
    std::iota(ids.begin(), ids.end(), 0);
    return g_.gather_rows(pos_table_node_, std::move(ids));
}

int EncoderForward::block(int x, int layer, int seq_len) {
    const std::string L = "L" + std::to_string(layer) + ".";
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));

    int h = g_.layer_norm(x, pnode(L + "ln1.g"), pnode(L + "ln1.b"));
    std::vector<int> head_outs;
    for (int hd = 0; hd < cfg_.heads; ++hd) {
        const std::string H = L + "h" + std::to_string(hd) + ".";
        int q = g_.matmul(h, pnode(H + "wq"));
        int k = g_.matmul(h, pnode(H + "wk"));
        int v = g_.matmul(h, pnode(H + "wv"));
        int scores = g_.scale(g_.matmul_nt(q, k), inv_sqrt_dh);
        int attn = g_.softmax_rows(scores);
        head_outs.push_back(g_.matmul(attn, v));
    }
    int cat = cfg_.heads == 1 ? head_outs[0] : g_.concat_cols(head_outs);
    int o = g_.add_rowvec(g_.matmul(cat, pnode(L + "wo")), pnode(L + "bo"));
    x = g_.add(x, o);

    int h2 = g_.layer_norm(x, pnode(L + "ln2.g"), pnode(L + "ln2.b"));
    int m1 = g_.gelu(g_.add_rowvec(g_.matmul(h2, pnode(L + "mlp.w1")), pnode(L + "mlp.b1")));
    int m2 = g_.add_rowvec(g_.matmul(m1, pnode(L + "mlp.w2")), pnode(L + "mlp.b2"));
    x = g_.add(x, m2);
    (void)seq_len;
    return x;
}

int EncoderForward::text_sample(const std::vector<int>& tokens) {
    if (!text_side_) {
        throw StateError("text_sample on an image encoder");
    }
    if (tokens.empty()) {
        throw DataError("empty token sequence");
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg_.vocab_size) {
            throw DataError("token id " + std::to_string(t) + " outside vocab of size " +
                            std::to_string(cfg_.vocab_size));
        }
    }
    const int T = static_cast<int>(tokens.size());
    int x = g_.add(g_.gather_rows(pnode("tok_embed"), tokens), positions(T));
    for (int l = 0; l < cfg_.depth; ++l) {
        x = block(x, l, T);
    }
    x = g_.layer_norm(x, pnode("lnf.g"), pnode("lnf.b"));
    x = g_.mean_rows(x);
    x = g_.matmul(x, pnode("proj"));
    return g_.l2_normalize_rows(x);
}

int EncoderForward::image_sample(const nn::Tensor& patches) {
    if (text_side_) {
        throw StateError("image_sample on a text encoder");
    }
    if (patches.rows != cfg_.patch_count || patches.cols != cfg_.patch_dim) {
        throw DataError("image patches must be " + std::to_string(cfg_.patch_count) + "x" +
                        std::to_string(cfg_.patch_dim));
    }
    int x = g_.add(g_.matmul(g_.constant(patches), pnode("patch_proj")),
                   positions(cfg_.patch_count));
    for (int l = 0; l < cfg_.depth; ++l) {
        x = block(x, l, cfg_.patch_count);
    }
    x = g_.layer_norm(x, pnode("lnf.g"), pnode("lnf.b"));
    x = g_.mean_rows(x);
    x = g_.matmul(x, pnode("proj"));
    return g_.l2_normalize_rows(x);
}

} // namespace urbanln
