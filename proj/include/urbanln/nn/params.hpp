#pragma once

#include <random>
#include <string>
#include <vector>

#include "urbanln/nn/tensor.hpp"

namespace urbanln::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

// Ordered, name-addressable parameter set. Insertion order is the iteration
// order everywhere (optimizer, EMA, checkpoints), which keeps runs bit-stable.
class ParamStore {
public:
    Param& add(const std::string& name, int rows, int cols);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    const Param* find(const std::string& name) const;
    Param* find(const std::string& name);

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    size_t count() const { return params_.size(); }

    void zero_grads();
    bool grads_finite() const;
    std::uint64_t value_hash() const;

private:
    std::vector<Param> params_;
};

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    void step(ParamStore& store, const AdamWConfig& cfg);
    long long steps() const { return t_; }

    // Checkpoint access: first/second moment buffers in store order.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::vector<Tensor> m, std::vector<Tensor> v, long long t);

private:
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long long t_ = 0;
};

} // namespace urbanln::nn
