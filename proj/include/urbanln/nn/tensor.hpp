#pragma once

#include <cstddef>
#include <vector>

#include "urbanln/common.hpp"

namespace urbanln::nn {

// Dense row-major matrix of doubles. Vectors are [1 x n] or [n x 1].
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Tensor&) const = default;
};

// C = A * B
Tensor matmul(const Tensor& a, const Tensor& b);
// C += A * B
void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b);
// C += A * B^T   (A: m x k, B: n x k -> C: m x n)
void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b);
// C += A^T * B   (A: k x m, B: k x n -> C: m x n)
void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

void l2_normalize_rows_inplace(Tensor& t);

double row_dot(const Tensor& a, int ra, const Tensor& b, int rb);

bool all_finite(const Tensor& t);

// FNV over the raw bytes of every entry; order-sensitive.
std::uint64_t tensor_hash(const Tensor& t);

} // namespace urbanln::nn
