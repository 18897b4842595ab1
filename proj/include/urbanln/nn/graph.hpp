#pragma once

#include <functional>
#include <vector>

#include "urbanln/ipsi.hpp"
#include "urbanln/nn/tensor.hpp"

namespace urbanln::nn {

// Small reverse-mode tape. Nodes are created in topological order by the
// forward pass; backward() sweeps them in reverse. Gradients are allocated
// lazily, so constant subtrees (e.g. the teacher forward) cost no grad memory.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    int constant(Tensor t);
    // Leaf whose gradient accumulates into *sink (shape must match *value).
    int param(const Tensor* value, Tensor* sink);

    int matmul(int a, int b);
    int matmul_nt(int a, int b); // A * B^T
    int add(int a, int b);
    int add_rowvec(int a, int rowvec);
    int add_scaled(int a, double ca, int b, double cb);
    int scale(int a, double s);
    int mul_scalar(int a, int scalar_node); // scalar_node is [1 x 1]
    int reciprocal(int a);
    int gelu(int a);
    int layer_norm(int x, int gain, int bias, double eps = 1e-5);
    int softmax_rows(int a);
    int gather_rows(int a, std::vector<int> row_ids);
    int concat_rows(const std::vector<int>& parts);
    int concat_cols(const std::vector<int>& parts);
    int mean_rows(int a);
    int l2_normalize_rows(int a);
    int pick(int a, std::vector<int> col_ids); // [m x 1] of a[i, col_ids[i]]
    int log_floor(int a, double floor);
    // (1/m) * sum_ij q_ij * (log q_ij - log max(p_ij, floor)); q is constant.
    int kl_from(Tensor q, int p, double floor = 1e-12);
    int mean_all(int a);
    // [1 x 1] mean of (pred - target)^2 over all entries; target is constant.
    int mse(int pred, Tensor target);
    int ipsi_stretch(int table, ipsi::IpsiConfig cfg);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    double scalar(int id) const;

    // Seeds d(root) = 1 and accumulates into every param sink.
    void backward(int root);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;
    };

    int push(Tensor val, bool needs_grad, std::function<void()> back);
    Tensor& grad_of(int id);
    bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    std::vector<Node> nodes_;
};

} // namespace urbanln::nn
