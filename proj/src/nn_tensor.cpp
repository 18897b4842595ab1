#include "urbanln/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace urbanln::nn {

namespace {

void check_mul(int ak, int bk, const char* what) {
    if (ak != bk) {
        throw StateError(std::string("matmul shape mismatch in ") + what);
    }
}

} // namespace

void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    check_mul(a.cols, b.rows, "matmul");
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows, b.cols);
    matmul_acc(c, a, b);
    return c;
}

void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    check_mul(a.cols, b.cols, "matmul_nt");
    const int m = a.rows, k = a.cols, n = b.rows;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            crow[j] += s;
        }
    }
}

void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    check_mul(a.rows, b.rows, "matmul_tn");
    const int m = a.cols, k = a.rows, n = b.cols;
    for (int p = 0; p < k; ++p) {
        const double* arow = a.row(p);
        const double* brow = b.row(p);
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) {
                continue;
            }
            double* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

Tensor transpose(const Tensor& a) {
    Tensor t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            t.at(j, i) = a.at(i, j);
        }
    }
    return t;
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor p(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        const double* x = logits.row(i);
        double* y = p.row(i);
        double mx = x[0];
        for (int j = 1; j < logits.cols; ++j) {
            mx = std::max(mx, x[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < logits.cols; ++j) {
            y[j] /= sum;
        }
    }
    return p;
}

void l2_normalize_rows_inplace(Tensor& t) {
    for (int i = 0; i < t.rows; ++i) {
        double* x = t.row(i);
        double n = 0.0;
        for (int j = 0; j < t.cols; ++j) {
            n += x[j] * x[j];
        }
        n = std::sqrt(n);
        if (n > 0) {
            for (int j = 0; j < t.cols; ++j) {
                x[j] /= n;
            }
        }
    }
}

double row_dot(const Tensor& a, int ra, const Tensor& b, int rb) {
    const double* x = a.row(ra);
    const double* y = b.row(rb);
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) {
        s += x[j] * y[j];
    }
    return s;
}

bool all_finite(const Tensor& t) {
    for (double x : t.v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

std::uint64_t tensor_hash(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    for (double x : t.v) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &x, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

} // namespace urbanln::nn
