#include "urbanln/nn/params.hpp"

#include <cmath>

namespace urbanln::nn {

Param& ParamStore::add(const std::string& name, int rows, int cols) {
    if (find(name) != nullptr) {
        throw StateError("duplicate parameter '" + name + "'");
    }
    Param p;
    p.name = name;
    p.value = Tensor(rows, cols);
    p.grad = Tensor(rows, cols);
    params_.push_back(std::move(p));
    return params_.back();
}

Param& ParamStore::at(const std::string& name) {
    Param* p = find(name);
    if (p == nullptr) {
        throw StateError("unknown parameter '" + name + "'");
    }
    return *p;
}

const Param& ParamStore::at(const std::string& name) const {
    const Param* p = find(name);
    if (p == nullptr) {
        throw StateError("unknown parameter '" + name + "'");
    }
    return *p;
}

const Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) {
        std::fill(p.grad.v.begin(), p.grad.v.end(), 0.0);
    }
}

bool ParamStore::grads_finite() const {
    for (const auto& p : params_) {
        if (!all_finite(p.grad)) {
            return false;
        }
    }
    return true;
}

std::uint64_t ParamStore::value_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
        h = splitmix64(h ^ fnv1a64(p.name));
        h = splitmix64(h ^ tensor_hash(p.value));
    }
    return h;
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.v) {
        x = dist(rng);
    }
}

void AdamW::step(ParamStore& store, const AdamWConfig& cfg) {
    auto& params = store.all();
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.value.rows, p.value.cols);
            v_.emplace_back(p.value.rows, p.value.cols);
        }
    }
    if (m_.size() != params.size()) {
        throw StateError("optimizer state does not match parameter store");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = params[pi];
        Tensor& m = m_[pi];
        Tensor& v = v_[pi];
        for (size_t i = 0; i < p.value.v.size(); ++i) {
            const double g = p.grad.v[i];
            m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g;
            v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p.value.v[i] -=
                cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value.v[i]);
        }
    }
}

void AdamW::restore(std::vector<Tensor> m, std::vector<Tensor> v, long long t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

} // namespace urbanln::nn
