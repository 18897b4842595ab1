#include "urbanln/nn/graph.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace urbanln::nn {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
} // namespace

int Graph::push(Tensor val, bool needs_grad, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.v.empty()) {
        n.grad = Tensor(n.val.rows, n.val.cols);
    }
    return n.grad;
}

double Graph::scalar(int id) const {
    const Tensor& t = value(id);
    if (t.rows != 1 || t.cols != 1) {
        throw StateError("scalar() on a non 1x1 node");
    }
    return t.v[0];
}

int Graph::constant(Tensor t) {
    return push(std::move(t), false, {});
}

int Graph::param(const Tensor* value, Tensor* sink) {
    Tensor copy = *value;
    if (sink == nullptr) {
        return push(std::move(copy), false, {});
    }
    if (!sink->same_shape(*value)) {
        throw StateError("param grad sink shape mismatch");
    }
    int id = push(std::move(copy), true, {});
    nodes_[static_cast<size_t>(id)].back = [this, id, sink] {
        const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
        for (size_t i = 0; i < g.v.size(); ++i) {
            sink->v[i] += g.v[i];
        }
    };
    return id;
}

int Graph::matmul(int a, int b) {
    Tensor val = nn::matmul(value(a), value(b));
    bool ng = needs(a) || needs(b);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, b] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            if (needs(a)) {
                matmul_nt_acc(grad_of(a), g, value(b)); // dA = G * B^T
            }
            if (needs(b)) {
                matmul_tn_acc(grad_of(b), value(a), g); // dB = A^T * G
            }
        };
    }
    return id;
}

int Graph::matmul_nt(int a, int b) {
    Tensor val(value(a).rows, value(b).rows);
    matmul_nt_acc(val, value(a), value(b));
    bool ng = needs(a) || needs(b);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, b] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            if (needs(a)) {
                matmul_acc(grad_of(a), g, value(b)); // dA = G * B
            }
            if (needs(b)) {
                matmul_tn_acc(grad_of(b), g, value(a)); // dB = G^T * A
            }
        };
    }
    return id;
}

int Graph::add(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
        throw StateError("add shape mismatch");
    }
    Tensor val = A;
    for (size_t i = 0; i < val.v.size(); ++i) {
        val.v[i] += B.v[i];
    }
    bool ng = needs(a) || needs(b);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, b] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            for (int n : {a, b}) {
                if (needs(n)) {
                    Tensor& gn = grad_of(n);
                    for (size_t i = 0; i < g.v.size(); ++i) {
                        gn.v[i] += g.v[i];
                    }
                }
            }
        };
    }
    return id;
}

int Graph::add_rowvec(int a, int rowvec) {
    const Tensor& A = value(a);
    const Tensor& r = value(rowvec);
    if (r.rows != 1 || r.cols != A.cols) {
        throw StateError("add_rowvec shape mismatch");
    }
    Tensor val = A;
    for (int i = 0; i < val.rows; ++i) {
        double* row = val.row(i);
        for (int j = 0; j < val.cols; ++j) {
            row[j] += r.v[static_cast<size_t>(j)];
        }
    }
    bool ng = needs(a) || needs(rowvec);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, rowvec] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            if (needs(a)) {
                Tensor& ga = grad_of(a);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += g.v[i];
                }
            }
            if (needs(rowvec)) {
                Tensor& gr = grad_of(rowvec);
                for (int i = 0; i < g.rows; ++i) {
                    const double* row = g.row(i);
                    for (int j = 0; j < g.cols; ++j) {
                        gr.v[static_cast<size_t>(j)] += row[j];
                    }
                }
            }
        };
    }
    return id;
}

int Graph::add_scaled(int a, double ca, int b, double cb) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
        throw StateError("add_scaled shape mismatch");
    }
    Tensor val(A.rows, A.cols);
    for (size_t i = 0; i < val.v.size(); ++i) {
        val.v[i] = ca * A.v[i] + cb * B.v[i];
    }
    bool ng = needs(a) || needs(b);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, ca, b, cb] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            if (needs(a)) {
                Tensor& ga = grad_of(a);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += ca * g.v[i];
                }
            }
            if (needs(b)) {
                Tensor& gb = grad_of(b);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    gb.v[i] += cb * g.v[i];
                }
            }
        };
    }
    return id;
}

int Graph::scale(int a, double s) {
    Tensor val = value(a);
    for (double& x : val.v) {
        x *= s;
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, s] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            Tensor& ga = grad_of(a);
            for (size_t i = 0; i < g.v.size(); ++i) {
                ga.v[i] += s * g.v[i];
            }
        };
    }
    return id;
}

int Graph::mul_scalar(int a, int scalar_node) {
    const Tensor& s = value(scalar_node);
    if (s.rows != 1 || s.cols != 1) {
        throw StateError("mul_scalar expects a 1x1 scalar node");
    }
    const double sv = s.v[0];
    Tensor val = value(a);
    for (double& x : val.v) {
        x *= sv;
    }
    bool ng = needs(a) || needs(scalar_node);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, scalar_node, sv] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            if (needs(a)) {
                Tensor& ga = grad_of(a);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    ga.v[i] += sv * g.v[i];
                }
            }
            if (needs(scalar_node)) {
                const Tensor& A = value(a);
                double acc = 0.0;
                for (size_t i = 0; i < g.v.size(); ++i) {
                    acc += g.v[i] * A.v[i];
                }
                grad_of(scalar_node).v[0] += acc;
            }
        };
    }
    return id;
}

int Graph::reciprocal(int a) {
    Tensor val = value(a);
    for (double& x : val.v) {
        x = 1.0 / x;
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& y = nodes_[static_cast<size_t>(id)].val;
            Tensor& ga = grad_of(a);
            for (size_t i = 0; i < g.v.size(); ++i) {
                ga.v[i] += -g.v[i] * y.v[i] * y.v[i];
            }
        };
    }
    return id;
}

int Graph::gelu(int a) {
    const Tensor& A = value(a);
    Tensor val(A.rows, A.cols);
    for (size_t i = 0; i < A.v.size(); ++i) {
        const double x = A.v[i];
        val.v[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& A2 = value(a);
            Tensor& ga = grad_of(a);
            for (size_t i = 0; i < g.v.size(); ++i) {
                const double x = A2.v[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga.v[i] += g.v[i] * (cdf + x * pdf);
            }
        };
    }
    return id;
}

int Graph::layer_norm(int x, int gain, int bias, double eps) {
    const Tensor& X = value(x);
    const Tensor& G = value(gain);
    const Tensor& B = value(bias);
    if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols) {
        throw StateError("layer_norm gain/bias shape mismatch");
    }
    const int m = X.rows, n = X.cols;
    Tensor val(m, n);
    // Saved for the backward pass.
    auto xhat = std::make_shared<Tensor>(m, n);
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* xr = X.row(i);
        double mu = 0.0;
        for (int j = 0; j < n; ++j) {
            mu += xr[j];
        }
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<size_t>(i)] = is;
        double* hr = xhat->row(i);
        double* vr = val.row(i);
        for (int j = 0; j < n; ++j) {
            hr[j] = (xr[j] - mu) * is;
            vr[j] = G.v[static_cast<size_t>(j)] * hr[j] + B.v[static_cast<size_t>(j)];
        }
    }
    bool ng = needs(x) || needs(gain) || needs(bias);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, x, gain, bias, xhat, inv_sigma] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& Gn = value(gain);
            const int m = g.rows, n = g.cols;
            if (needs(gain)) {
                Tensor& gg = grad_of(gain);
                for (int i = 0; i < m; ++i) {
                    const double* gr = g.row(i);
                    const double* hr = xhat->row(i);
                    for (int j = 0; j < n; ++j) {
                        gg.v[static_cast<size_t>(j)] += gr[j] * hr[j];
                    }
                }
            }
            if (needs(bias)) {
                Tensor& gb = grad_of(bias);
                for (int i = 0; i < m; ++i) {
                    const double* gr = g.row(i);
                    for (int j = 0; j < n; ++j) {
                        gb.v[static_cast<size_t>(j)] += gr[j];
                    }
                }
            }
            if (needs(x)) {
                Tensor& gx = grad_of(x);
                for (int i = 0; i < m; ++i) {
                    const double* gr = g.row(i);
                    const double* hr = xhat->row(i);
                    const double is = (*inv_sigma)[static_cast<size_t>(i)];
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dh = gr[j] * Gn.v[static_cast<size_t>(j)];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= n;
                    mean_dh_h /= n;
                    double* gxr = gx.row(i);
                    for (int j = 0; j < n; ++j) {
                        const double dh = gr[j] * Gn.v[static_cast<size_t>(j)];
                        gxr[j] += (dh - mean_dh - hr[j] * mean_dh_h) * is;
                    }
                }
            }
        };
    }
    return id;
}

int Graph::softmax_rows(int a) {
    Tensor val = nn::softmax_rows(value(a));
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& y = nodes_[static_cast<size_t>(id)].val;
            Tensor& ga = grad_of(a);
            for (int i = 0; i < g.rows; ++i) {
                const double* gr = g.row(i);
                const double* yr = y.row(i);
                double dot = 0.0;
                for (int j = 0; j < g.cols; ++j) {
                    dot += gr[j] * yr[j];
                }
                double* gar = ga.row(i);
                for (int j = 0; j < g.cols; ++j) {
                    gar[j] += yr[j] * (gr[j] - dot);
                }
            }
        };
    }
    return id;
}

int Graph::gather_rows(int a, std::vector<int> row_ids) {
    const Tensor& A = value(a);
    Tensor val(static_cast<int>(row_ids.size()), A.cols);
    for (size_t i = 0; i < row_ids.size(); ++i) {
        const int r = row_ids[i];
        if (r < 0 || r >= A.rows) {
            throw StateError("gather_rows index out of range");
        }
        for (int j = 0; j < A.cols; ++j) {
            val.at(static_cast<int>(i), j) = A.at(r, j);
        }
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, ids = std::move(row_ids)] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            Tensor& ga = grad_of(a);
            for (size_t i = 0; i < ids.size(); ++i) {
                const double* gr = g.row(static_cast<int>(i));
                double* gar = ga.row(ids[i]);
                for (int j = 0; j < g.cols; ++j) {
                    gar[j] += gr[j];
                }
            }
        };
    }
    return id;
}

int Graph::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) {
        throw StateError("concat_rows of nothing");
    }
    const int cols = value(parts[0]).cols;
    int rows = 0;
    bool ng = false;
    for (int p : parts) {
        if (value(p).cols != cols) {
            throw StateError("concat_rows column mismatch");
        }
        rows += value(p).rows;
        ng = ng || needs(p);
    }
    Tensor val(rows, cols);
    int r = 0;
    for (int p : parts) {
        const Tensor& P = value(p);
        for (int i = 0; i < P.rows; ++i, ++r) {
            for (int j = 0; j < cols; ++j) {
                val.at(r, j) = P.at(i, j);
            }
        }
    }
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, ps = parts] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            int r = 0;
            for (int p : ps) {
                const int pr = value(p).rows;
                if (needs(p)) {
                    Tensor& gp = grad_of(p);
                    for (int i = 0; i < pr; ++i) {
                        const double* gr = g.row(r + i);
                        double* gpr = gp.row(i);
                        for (int j = 0; j < g.cols; ++j) {
                            gpr[j] += gr[j];
                        }
                    }
                }
                r += pr;
            }
        };
    }
    return id;
}

int Graph::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) {
        throw StateError("concat_cols of nothing");
    }
    const int rows = value(parts[0]).rows;
    int cols = 0;
    bool ng = false;
    for (int p : parts) {
        if (value(p).rows != rows) {
            throw StateError("concat_cols row mismatch");
        }
        cols += value(p).cols;
        ng = ng || needs(p);
    }
    Tensor val(rows, cols);
    int c = 0;
    for (int p : parts) {
        const Tensor& P = value(p);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < P.cols; ++j) {
                val.at(i, c + j) = P.at(i, j);
            }
        }
        c += P.cols;
    }
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, ps = parts] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            int c = 0;
            for (int p : ps) {
                const int pc = value(p).cols;
                if (needs(p)) {
                    Tensor& gp = grad_of(p);
                    for (int i = 0; i < g.rows; ++i) {
                        const double* gr = g.row(i);
                        double* gpr = gp.row(i);
                        for (int j = 0; j < pc; ++j) {
                            gpr[j] += gr[c + j];
                        }
                    }
                }
                c += pc;
            }
        };
    }
    return id;
}

int Graph::mean_rows(int a) {
    const Tensor& A = value(a);
    Tensor val(1, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* r = A.row(i);
        for (int j = 0; j < A.cols; ++j) {
            val.v[static_cast<size_t>(j)] += r[j];
        }
    }
    for (double& x : val.v) {
        x /= A.rows;
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            Tensor& ga = grad_of(a);
            const double inv = 1.0 / ga.rows;
            for (int i = 0; i < ga.rows; ++i) {
                double* gar = ga.row(i);
                for (int j = 0; j < ga.cols; ++j) {
                    gar[j] += g.v[static_cast<size_t>(j)] * inv;
                }
            }
        };
    }
    return id;
}

int Graph::l2_normalize_rows(int a) {
    const Tensor& A = value(a);
    Tensor val = A;
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(A.rows));
    for (int i = 0; i < A.rows; ++i) {
        double* r = val.row(i);
        double n2 = 0.0;
        for (int j = 0; j < A.cols; ++j) {
            n2 += r[j] * r[j];
        }
        const double n = std::sqrt(n2);
        (*norms)[static_cast<size_t>(i)] = n;
        if (n > 0) {
            for (int j = 0; j < A.cols; ++j) {
                r[j] /= n;
            }
        }
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, norms] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& y = nodes_[static_cast<size_t>(id)].val;
            Tensor& ga = grad_of(a);
            for (int i = 0; i < g.rows; ++i) {
                const double n = (*norms)[static_cast<size_t>(i)];
                if (n <= 0) {
                    continue;
                }
                const double* gr = g.row(i);
                const double* yr = y.row(i);
                double dot = 0.0;
                for (int j = 0; j < g.cols; ++j) {
                    dot += gr[j] * yr[j];
                }
                double* gar = ga.row(i);
                for (int j = 0; j < g.cols; ++j) {
                    gar[j] += (gr[j] - yr[j] * dot) / n;
                }
            }
        };
    }
    return id;
}

int Graph::pick(int a, std::vector<int> col_ids) {
    const Tensor& A = value(a);
    if (static_cast<int>(col_ids.size()) != A.rows) {
        throw StateError("pick needs one column index per row");
    }
    Tensor val(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
        const int c = col_ids[static_cast<size_t>(i)];
        if (c < 0 || c >= A.cols) {
            throw StateError("pick index out of range");
        }
        val.v[static_cast<size_t>(i)] = A.at(i, c);
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, ids = std::move(col_ids)] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            Tensor& ga = grad_of(a);
            for (int i = 0; i < g.rows; ++i) {
                ga.at(i, ids[static_cast<size_t>(i)]) += g.v[static_cast<size_t>(i)];
            }
        };
    }
    return id;
}

int Graph::log_floor(int a, double floor) {
    const Tensor& A = value(a);
    Tensor val(A.rows, A.cols);
    for (size_t i = 0; i < A.v.size(); ++i) {
        val.v[i] = std::log(std::max(A.v[i], floor));
    }
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a, floor] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            const Tensor& A2 = value(a);
            Tensor& ga = grad_of(a);
            for (size_t i = 0; i < g.v.size(); ++i) {
                if (A2.v[i] > floor) {
                    ga.v[i] += g.v[i] / A2.v[i];
                }
            }
        };
    }
    return id;
}

int Graph::kl_from(Tensor q, int p, double floor) {
    const Tensor& P = value(p);
    if (!q.same_shape(P)) {
        throw StateError("kl_from shape mismatch");
    }
    const int m = P.rows;
    double total = 0.0;
    for (size_t i = 0; i < q.v.size(); ++i) {
        const double qi = q.v[i];
        if (qi > 0) {
            total += qi * (std::log(qi) - std::log(std::max(P.v[i], floor)));
        }
    }
    Tensor val(1, 1);
    val.v[0] = total / m;
    bool ng = needs(p);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, p, floor, m, qq = std::move(q)] {
            const double g = nodes_[static_cast<size_t>(id)].grad.v[0];
            const Tensor& P2 = value(p);
            Tensor& gp = grad_of(p);
            for (size_t i = 0; i < qq.v.size(); ++i) {
                const double pi = std::max(P2.v[i], floor);
                if (P2.v[i] > floor || qq.v[i] > 0) {
                    gp.v[i] += g * (-qq.v[i] / pi) / m;
                }
            }
        };
    }
    return id;
}

int Graph::mean_all(int a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double x : A.v) {
        s += x;
    }
    Tensor val(1, 1);
    val.v[0] = s / static_cast<double>(A.v.size());
    bool ng = needs(a);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, a] {
            const double g = nodes_[static_cast<size_t>(id)].grad.v[0];
            Tensor& ga = grad_of(a);
            const double inv = 1.0 / static_cast<double>(ga.v.size());
            for (double& x : ga.v) {
                x += g * inv;
            }
        };
    }
    return id;
}

int Graph::mse(int pred, Tensor target) {
    const Tensor& P = value(pred);
    if (!target.same_shape(P)) {
        throw StateError("mse shape mismatch");
    }
    double s = 0.0;
    for (size_t i = 0; i < P.v.size(); ++i) {
        const double d = P.v[i] - target.v[i];
        s += d * d;
    }
    Tensor val(1, 1);
    val.v[0] = s / static_cast<double>(P.v.size());
    bool ng = needs(pred);
    int id = push(std::move(val), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, pred, t = std::move(target)] {
            const double g = nodes_[static_cast<size_t>(id)].grad.v[0];
            const Tensor& P2 = value(pred);
            Tensor& gp = grad_of(pred);
            const double c = 2.0 * g / static_cast<double>(P2.v.size());
            for (size_t i = 0; i < P2.v.size(); ++i) {
                gp.v[i] += c * (P2.v[i] - t.v[i]);
            }
        };
    }
    return id;
}

int Graph::ipsi_stretch(int table, ipsi::IpsiConfig cfg) {
    ipsi::PositionalTable in;
    in.rows = value(table);
    ipsi::PositionalTable out = ipsi::stretch_positions(in, cfg);
    const int T = out.rows.rows;
    bool ng = needs(table);
    int id = push(std::move(out.rows), ng, {});
    if (ng) {
        nodes_[static_cast<size_t>(id)].back = [this, id, table, cfg, T] {
            const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
            Tensor& gt = grad_of(table);
            for (int e = 1; e <= T; ++e) {
                const ipsi::StretchSource src = ipsi::stretch_source(e, cfg);
                const double* gr = g.row(e - 1);
                double* lo = gt.row(src.lo_row);
                if (src.w == 0.0) {
                    for (int j = 0; j < g.cols; ++j) {
                        lo[j] += gr[j];
                    }
                } else {
                    double* hi = gt.row(src.hi_row);
                    for (int j = 0; j < g.cols; ++j) {
                        lo[j] += (1.0 - src.w) * gr[j];
                        hi[j] += src.w * gr[j];
                    }
                }
            }
        };
    }
    return id;
}

void Graph::backward(int root) {
    Node& r = nodes_[static_cast<size_t>(root)];
    if (r.val.rows != 1 || r.val.cols != 1) {
        throw StateError("backward root must be a scalar node");
    }
    if (!r.needs_grad) {
        return; // nothing trainable feeds the root
    }
    grad_of(root).v[0] = 1.0;
    for (int i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad && !n.grad.v.empty() && n.back) {
            n.back();
        }
    }
}

} // namespace urbanln::nn
