#include "glioplan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

namespace glioplan::ad {

namespace {

std::uint64_t g_next_id = 1; // graph construction is single-threaded

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 1) throw AutogradError("non-positive shape dim");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<double> value,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (n->value.size() != shape_numel(n->shape))
        throw AutogradError("value size does not match shape");
    n->id = g_next_id++;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw AutogradError(std::string(op) + ": shape mismatch");
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMap = Eigen::Map<RowMat>;
using CRowMap = Eigen::Map<const RowMat>;
using ColMap = Eigen::Map<ColMat>;
using CColMap = Eigen::Map<const ColMat>;

} // namespace

Var constant(std::vector<int> shape, std::vector<double> data) {
    return Var(make_node(std::move(shape), std::move(data), {}, nullptr));
}

Var constant_scalar(double v) { return constant({1}, {v}); }

Var parameter(std::vector<int> shape, std::vector<double> data) {
    auto n = make_node(std::move(shape), std::move(data), {}, nullptr);
    n->requires_grad = true;
    return Var(n);
}

void backward(const Var& loss) {
    if (loss.numel() != 1) throw AutogradError("backward: loss must be scalar");
    Node* root = loss.node().get();
    if (!root->requires_grad)
        throw AutogradError("backward: loss does not depend on any parameter");

    // Iterative DFS to collect reachable grad-requiring nodes.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad) stack.push_back(p.get());
    }
    for (Node* n : order) {
        n->grad.assign(n->value.size(), 0.0);
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    root->grad[0] = 1.0;
    for (Node* n : order)
        if (n->backprop) n->backprop(*n);
}

// ---- elementwise helpers ----

namespace {

Var binary_ew(const Var& a, const Var& b, const char* name,
              const std::function<double(double, double)>& f,
              const std::function<void(double, double, double, double&, double&)>& df) {
    check_same_shape(a, b, name);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i], b.value()[i]);
    auto pa = a.node(), pb = b.node();
    return Var(make_node(a.shape(), std::move(out), {pa, pb}, [pa, pb, df](Node& n) {
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            double da = 0.0, db = 0.0;
            df(pa->value[i], pb->value[i], n.grad[i], da, db);
            if (pa->requires_grad) pa->grad[i] += da;
            if (pb->requires_grad) pb->grad[i] += db;
        }
    }));
}

Var unary_ew(const Var& a, const char* /*name*/, const std::function<double(double)>& f,
             const std::function<double(double, double)>& dfdx /* (x, y) -> dy/dx */) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
    auto pa = a.node();
    auto pn = make_node(a.shape(), std::move(out), {pa}, nullptr);
    if (pn->requires_grad) {
        Node* self = pn.get();
        pn->backprop = [pa, dfdx, self](Node& n) {
            (void)self;
            for (std::size_t i = 0; i < n.value.size(); ++i)
                pa->grad[i] += n.grad[i] * dfdx(pa->value[i], n.value[i]);
        };
    }
    return Var(pn);
}

} // namespace

Var add(const Var& a, const Var& b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double g, double& da, double& db) {
                         da = g;
                         db = g;
                     });
}

Var sub(const Var& a, const Var& b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double g, double& da, double& db) {
                         da = g;
                         db = -g;
                     });
}

Var mul(const Var& a, const Var& b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double g, double& da, double& db) {
                         da = g * y;
                         db = g * x;
                     });
}

Var divide(const Var& a, const Var& b) {
    return binary_ew(a, b, "divide", [](double x, double y) { return x / y; },
                     [](double x, double y, double g, double& da, double& db) {
                         da = g / y;
                         db = -g * x / (y * y);
                     });
}

Var minimum(const Var& a, const Var& b) {
    return binary_ew(a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
                     [](double x, double y, double g, double& da, double& db) {
                         if (x <= y) da = g;
                         else db = g;
                     });
}

Var add_scalar(const Var& a, double s) {
    return unary_ew(a, "add_scalar", [s](double x) { return x + s; },
                    [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
    return unary_ew(a, "mul_scalar", [s](double x) { return x * s; },
                    [s](double, double) { return s; });
}

Var relu(const Var& a) {
    return unary_ew(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh_act(const Var& a) {
    return unary_ew(a, "tanh", [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary_ew(a, "sigmoid",
                    [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                   : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
    return unary_ew(a, "softplus",
                    [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                    [](double x, double) {
                        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                    });
}

Var exp_v(const Var& a) {
    return unary_ew(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var log_v(const Var& a) {
    return unary_ew(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
    return unary_ew(a, "square", [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary_ew(a, "clamp",
                    [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- reductions ----

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.value()) s += v;
    auto pa = a.node();
    return Var(make_node({1}, {s}, {pa}, [pa](Node& n) {
        for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += n.grad[0];
    }));
}

Var mean_all(const Var& a) {
    double inv = 1.0 / static_cast<double>(a.numel());
    return mul_scalar(sum_all(a), inv);
}

// ---- matrices ----

namespace {
void check_matrix(const Var& a, const char* op) {
    if (a.shape().size() != 2) throw AutogradError(std::string(op) + ": expected 2-D input");
}
} // namespace

Var matmul(const Var& a, const Var& b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw AutogradError("matmul: inner dim mismatch");
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    {
        CRowMap A(a.value().data(), m, k);
        CRowMap B(b.value().data(), k, n);
        RowMap O(out.data(), m, n);
        O.noalias() = A * B;
    }
    auto pa = a.node(), pb = b.node();
    return Var(make_node({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& nn) {
        CRowMap G(nn.grad.data(), m, n);
        if (pa->requires_grad) {
            CRowMap B(pb->value.data(), k, n);
            RowMap GA(pa->grad.data(), m, k);
            GA.noalias() += G * B.transpose();
        }
        if (pb->requires_grad) {
            CRowMap A(pa->value.data(), m, k);
            RowMap GB(pb->grad.data(), k, n);
            GB.noalias() += A.transpose() * G;
        }
    }));
}

Var transpose(const Var& a) {
    check_matrix(a, "transpose");
    int m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
    auto pa = a.node();
    return Var(make_node({n, m}, std::move(out), {pa}, [pa, m, n](Node& nn) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                pa->grad[static_cast<std::size_t>(i) * n + j] +=
                    nn.grad[static_cast<std::size_t>(j) * m + i];
    }));
}

Var add_rowvec(const Var& x, const Var& v) {
    check_matrix(x, "add_rowvec");
    if (v.shape().size() != 2 || v.shape()[0] != 1 || v.shape()[1] != x.shape()[1])
        throw AutogradError("add_rowvec: v must be [1, cols]");
    int rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.numel());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i) * cols + j] =
                x.value()[static_cast<std::size_t>(i) * cols + j] + v.value()[j];
    auto px = x.node(), pv = v.node();
    return Var(make_node(x.shape(), std::move(out), {px, pv}, [px, pv, rows, cols](Node& nn) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double g = nn.grad[static_cast<std::size_t>(i) * cols + j];
                if (px->requires_grad) px->grad[static_cast<std::size_t>(i) * cols + j] += g;
                if (pv->requires_grad) pv->grad[j] += g;
            }
    }));
}

Var broadcast_rows(const Var& v, int n) {
    if (v.shape().size() != 2 || v.shape()[0] != 1)
        throw AutogradError("broadcast_rows: expected [1, k]");
    int k = v.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i)
        std::copy(v.value().begin(), v.value().end(), out.begin() + static_cast<std::size_t>(i) * k);
    auto pv = v.node();
    return Var(make_node({n, k}, std::move(out), {pv}, [pv, n, k](Node& nn) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                pv->grad[j] += nn.grad[static_cast<std::size_t>(i) * k + j];
    }));
}

Var slice_cols(const Var& x, int c0, int c1) {
    check_matrix(x, "slice_cols");
    int rows = x.shape()[0], cols = x.shape()[1];
    if (c0 < 0 || c1 > cols || c0 >= c1) throw AutogradError("slice_cols: bad range");
    int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(rows) * w);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i) * w + j] =
                x.value()[static_cast<std::size_t>(i) * cols + c0 + j];
    auto px = x.node();
    return Var(make_node({rows, w}, std::move(out), {px}, [px, rows, cols, c0, w](Node& nn) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
                px->grad[static_cast<std::size_t>(i) * cols + c0 + j] +=
                    nn.grad[static_cast<std::size_t>(i) * w + j];
    }));
}

Var slice_rows(const Var& x, int r0, int r1) {
    check_matrix(x, "slice_rows");
    int rows = x.shape()[0], cols = x.shape()[1];
    if (r0 < 0 || r1 > rows || r0 >= r1) throw AutogradError("slice_rows: bad range");
    int h = r1 - r0;
    std::vector<double> out(x.value().begin() + static_cast<std::size_t>(r0) * cols,
                            x.value().begin() + static_cast<std::size_t>(r1) * cols);
    auto px = x.node();
    return Var(make_node({h, cols}, std::move(out), {px}, [px, r0, cols, h](Node& nn) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * cols; ++i)
            px->grad[static_cast<std::size_t>(r0) * cols + i] += nn.grad[i];
    }));
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw AutogradError("concat_cols: empty");
    int rows = xs[0].shape()[0];
    int total = 0;
    for (const Var& x : xs) {
        check_matrix(x, "concat_cols");
        if (x.shape()[0] != rows) throw AutogradError("concat_cols: row mismatch");
        total += x.shape()[1];
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * total);
    int off = 0;
    for (const Var& x : xs) {
        int w = x.shape()[1];
        for (int i = 0; i < rows; ++i)
            std::copy(x.value().begin() + static_cast<std::size_t>(i) * w,
                      x.value().begin() + static_cast<std::size_t>(i + 1) * w,
                      out.begin() + static_cast<std::size_t>(i) * total + off);
        off += w;
    }
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<int> widths;
    for (const Var& x : xs) {
        parents.push_back(x.node());
        widths.push_back(x.shape()[1]);
    }
    return Var(make_node({rows, total}, std::move(out), parents,
                         [parents, widths, rows, total](Node& nn) {
                             int off2 = 0;
                             for (std::size_t p = 0; p < parents.size(); ++p) {
                                 int w = widths[p];
                                 if (parents[p]->requires_grad)
                                     for (int i = 0; i < rows; ++i)
                                         for (int j = 0; j < w; ++j)
                                             parents[p]->grad[static_cast<std::size_t>(i) * w + j] +=
                                                 nn.grad[static_cast<std::size_t>(i) * total + off2 + j];
                                 off2 += w;
                             }
                         }));
}

Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw AutogradError("concat_rows: empty");
    int cols = xs[0].shape()[1];
    int total = 0;
    for (const Var& x : xs) {
        check_matrix(x, "concat_rows");
        if (x.shape()[1] != cols) throw AutogradError("concat_rows: col mismatch");
        total += x.shape()[0];
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total) * cols);
    for (const Var& x : xs) out.insert(out.end(), x.value().begin(), x.value().end());
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<int> heights;
    for (const Var& x : xs) {
        parents.push_back(x.node());
        heights.push_back(x.shape()[0]);
    }
    return Var(make_node({total, cols}, std::move(out), parents,
                         [parents, heights, cols](Node& nn) {
                             std::size_t off = 0;
                             for (std::size_t p = 0; p < parents.size(); ++p) {
                                 std::size_t n = static_cast<std::size_t>(heights[p]) * cols;
                                 if (parents[p]->requires_grad)
                                     for (std::size_t i = 0; i < n; ++i)
                                         parents[p]->grad[i] += nn.grad[off + i];
                                 off += n;
                             }
                         }));
}

Var row_softmax(const Var& x) {
    check_matrix(x, "row_softmax");
    int rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.numel());
    for (int i = 0; i < rows; ++i) {
        const double* r = x.value().data() + static_cast<std::size_t>(i) * cols;
        double* o = out.data() + static_cast<std::size_t>(i) * cols;
        double m = r[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, r[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            o[j] = std::exp(r[j] - m);
            s += o[j];
        }
        for (int j = 0; j < cols; ++j) o[j] /= s;
    }
    auto px = x.node();
    return Var(make_node(x.shape(), std::move(out), {px}, [px, rows, cols](Node& nn) {
        for (int i = 0; i < rows; ++i) {
            const double* y = nn.value.data() + static_cast<std::size_t>(i) * cols;
            const double* g = nn.grad.data() + static_cast<std::size_t>(i) * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += y[j] * g[j];
            double* gx = px->grad.data() + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    }));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    check_matrix(x, "layer_norm");
    int rows = x.shape()[0], cols = x.shape()[1];
    if (gain.shape() != std::vector<int>{1, cols} || bias.shape() != std::vector<int>{1, cols})
        throw AutogradError("layer_norm: gain/bias must be [1, cols]");
    std::vector<double> out(x.numel());
    std::vector<double> inv_std(rows), means(rows);
    for (int i = 0; i < rows; ++i) {
        const double* r = x.value().data() + static_cast<std::size_t>(i) * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += r[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= cols;
        double is = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_std[i] = is;
        double* o = out.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j)
            o[j] = (r[j] - mu) * is * gain.value()[j] + bias.value()[j];
    }
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    return Var(make_node(x.shape(), std::move(out), {px, pg, pb},
                         [px, pg, pb, rows, cols, means, inv_std](Node& nn) {
        for (int i = 0; i < rows; ++i) {
            const double* r = px->value.data() + static_cast<std::size_t>(i) * cols;
            const double* g = nn.grad.data() + static_cast<std::size_t>(i) * cols;
            double mu = means[i], is = inv_std[i];
            // dyhat = g * gain; xhat = (x - mu) * is
            double mean_dy = 0.0, mean_dyx = 0.0;
            for (int j = 0; j < cols; ++j) {
                double xhat = (r[j] - mu) * is;
                double dy = g[j] * pg->value[j];
                mean_dy += dy;
                mean_dyx += dy * xhat;
            }
            mean_dy /= cols;
            mean_dyx /= cols;
            for (int j = 0; j < cols; ++j) {
                double xhat = (r[j] - mu) * is;
                double dy = g[j] * pg->value[j];
                if (px->requires_grad)
                    px->grad[static_cast<std::size_t>(i) * cols + j] +=
                        is * (dy - mean_dy - xhat * mean_dyx);
                if (pg->requires_grad) pg->grad[j] += g[j] * xhat;
                if (pb->requires_grad) pb->grad[j] += g[j];
            }
        }
    }));
}

// ---- losses ----

Var softmax_cross_entropy(const Var& logits, const Var& one_hot) {
    check_matrix(logits, "softmax_cross_entropy");
    check_same_shape(logits, one_hot, "softmax_cross_entropy");
    int rows = logits.shape()[0], cols = logits.shape()[1];
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double* r = logits.value().data() + static_cast<std::size_t>(i) * cols;
        double* p = probs.data() + static_cast<std::size_t>(i) * cols;
        double m = r[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, r[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            p[j] = std::exp(r[j] - m);
            s += p[j];
        }
        double lse = m + std::log(s);
        for (int j = 0; j < cols; ++j) {
            p[j] /= s;
            loss += one_hot.value()[static_cast<std::size_t>(i) * cols + j] * (lse - r[j]);
        }
    }
    loss /= rows;
    auto pl = logits.node(), py = one_hot.node();
    return Var(make_node({1}, {loss}, {pl, py},
                         [pl, py, rows, cols, probs = std::move(probs)](Node& nn) {
        if (!pl->requires_grad) return;
        double scale = nn.grad[0] / rows;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                std::size_t k = static_cast<std::size_t>(i) * cols + j;
                pl->grad[k] += scale * (probs[k] - py->value[k]);
            }
    }));
}

Var bce_with_logits(const Var& logits, const Var& targets) {
    check_same_shape(logits, targets, "bce_with_logits");
    std::size_t n = logits.numel();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = logits.value()[i], t = targets.value()[i];
        loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(n);
    auto pl = logits.node(), pt = targets.node();
    return Var(make_node({1}, {loss}, {pl, pt}, [pl, pt, n](Node& nn) {
        if (!pl->requires_grad) return;
        double scale = nn.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = pl->value[i];
            double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            pl->grad[i] += scale * (s - pt->value[i]);
        }
    }));
}

Var mse_loss(const Var& pred, const Var& target) {
    check_same_shape(pred, target, "mse_loss");
    std::size_t n = pred.numel();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = pred.value()[i] - target.value()[i];
        loss += d * d;
    }
    loss /= static_cast<double>(n);
    auto pp = pred.node(), pt = target.node();
    return Var(make_node({1}, {loss}, {pp, pt}, [pp, pt, n](Node& nn) {
        double scale = 2.0 * nn.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d = pp->value[i] - pt->value[i];
            if (pp->requires_grad) pp->grad[i] += scale * d;
            if (pt->requires_grad) pt->grad[i] -= scale * d;
        }
    }));
}

// ---- convolution ----

namespace {

struct ConvGeom {
    int C, Z, Y, X;          // input
    int O, KZ, KY, KX;       // kernel
    int SZ, SY, SX;          // stride
    int PZ, PY, PX;          // pad
    int OZ, OY, OX;          // output
    int K() const { return C * KZ * KY * KX; }
    int N() const { return OZ * OY * OX; }
};

ConvGeom conv_geom(const std::vector<int>& xs, const std::vector<int>& ws, int sz, int sy, int sx,
                   int pz, int py, int px) {
    ConvGeom g;
    g.C = xs[0];
    g.Z = xs[1];
    g.Y = xs[2];
    g.X = xs[3];
    g.O = ws[0];
    if (ws[1] != g.C) throw AutogradError("conv: channel mismatch");
    g.KZ = ws[2];
    g.KY = ws[3];
    g.KX = ws[4];
    g.SZ = sz;
    g.SY = sy;
    g.SX = sx;
    g.PZ = pz;
    g.PY = py;
    g.PX = px;
    g.OZ = (g.Z + 2 * pz - g.KZ) / sz + 1;
    g.OY = (g.Y + 2 * py - g.KY) / sy + 1;
    g.OX = (g.X + 2 * px - g.KX) / sx + 1;
    if (g.OZ < 1 || g.OY < 1 || g.OX < 1) throw AutogradError("conv: empty output");
    return g;
}

// Fill columns [n0, n0+nblk) of the im2col matrix (K x nblk, col-major).
void fill_cols(const double* x, const ConvGeom& g, int n0, int nblk, double* cols) {
    for (int n = 0; n < nblk; ++n) {
        int idx = n0 + n;
        int ox = idx % g.OX;
        int oy = (idx / g.OX) % g.OY;
        int oz = idx / (g.OX * g.OY);
        double* col = cols + static_cast<std::size_t>(n) * g.K();
        int k = 0;
        for (int c = 0; c < g.C; ++c)
            for (int dz = 0; dz < g.KZ; ++dz) {
                int z = oz * g.SZ - g.PZ + dz;
                for (int dy = 0; dy < g.KY; ++dy) {
                    int y = oy * g.SY - g.PY + dy;
                    bool row_ok = z >= 0 && z < g.Z && y >= 0 && y < g.Y;
                    for (int dx = 0; dx < g.KX; ++dx, ++k) {
                        int xx = ox * g.SX - g.PX + dx;
                        col[k] = (row_ok && xx >= 0 && xx < g.X)
                                     ? x[((static_cast<std::size_t>(c) * g.Z + z) * g.Y + y) * g.X + xx]
                                     : 0.0;
                    }
                }
            }
    }
}

// Scatter-add columns back into the input gradient (adjoint of fill_cols).
void scatter_cols(double* gx, const ConvGeom& g, int n0, int nblk, const double* cols) {
    for (int n = 0; n < nblk; ++n) {
        int idx = n0 + n;
        int ox = idx % g.OX;
        int oy = (idx / g.OX) % g.OY;
        int oz = idx / (g.OX * g.OY);
        const double* col = cols + static_cast<std::size_t>(n) * g.K();
        int k = 0;
        for (int c = 0; c < g.C; ++c)
            for (int dz = 0; dz < g.KZ; ++dz) {
                int z = oz * g.SZ - g.PZ + dz;
                for (int dy = 0; dy < g.KY; ++dy) {
                    int y = oy * g.SY - g.PY + dy;
                    bool row_ok = z >= 0 && z < g.Z && y >= 0 && y < g.Y;
                    for (int dx = 0; dx < g.KX; ++dx, ++k) {
                        int xx = ox * g.SX - g.PX + dx;
                        if (row_ok && xx >= 0 && xx < g.X)
                            gx[((static_cast<std::size_t>(c) * g.Z + z) * g.Y + y) * g.X + xx] += col[k];
                    }
                }
            }
    }
}

constexpr std::size_t kConvBlockDoubles = 1u << 21; // ~16 MB of cols per block

Var conv_core(const Var& x, const Var& w, const Var& b, const ConvGeom& g,
              std::vector<int> out_shape) {
    if (b.numel() != static_cast<std::size_t>(g.O)) throw AutogradError("conv: bias size");
    const int K = g.K(), N = g.N();
    int block = std::max<int>(1, static_cast<int>(kConvBlockDoubles / K));
    std::vector<double> out(static_cast<std::size_t>(g.O) * N);
    {
        CRowMap W(w.value().data(), g.O, K);
        RowMap OutM(out.data(), g.O, N);
        std::vector<double> cols;
        for (int n0 = 0; n0 < N; n0 += block) {
            int nblk = std::min(block, N - n0);
            cols.resize(static_cast<std::size_t>(K) * nblk);
            fill_cols(x.value().data(), g, n0, nblk, cols.data());
            CColMap C(cols.data(), K, nblk);
            OutM.middleCols(n0, nblk).noalias() = W * C;
        }
        for (int o = 0; o < g.O; ++o)
            OutM.row(o).array() += b.value()[o];
    }
    auto px = x.node(), pw = w.node(), pb = b.node();
    return Var(make_node(std::move(out_shape), std::move(out), {px, pw, pb},
                         [px, pw, pb, g, K, N, block](Node& nn) {
        CRowMap G(nn.grad.data(), g.O, N);
        std::vector<double> cols(static_cast<std::size_t>(K) * std::min(block, N));
        if (pb->requires_grad)
            for (int o = 0; o < g.O; ++o) pb->grad[o] += G.row(o).sum();
        for (int n0 = 0; n0 < N; n0 += block) {
            int nblk = std::min(block, N - n0);
            if (pw->requires_grad) {
                fill_cols(px->value.data(), g, n0, nblk, cols.data());
                CColMap C(cols.data(), K, nblk);
                RowMap GW(pw->grad.data(), g.O, K);
                GW.noalias() += G.middleCols(n0, nblk) * C.transpose();
            }
            if (px->requires_grad) {
                CRowMap W(pw->value.data(), g.O, K);
                ColMap C(cols.data(), K, nblk);
                C.noalias() = W.transpose() * G.middleCols(n0, nblk);
                scatter_cols(px->grad.data(), g, n0, nblk, cols.data());
            }
        }
    }));
}

} // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.shape().size() != 4) throw AutogradError("conv3d: x must be [C,Z,Y,X]");
    if (w.shape().size() != 5) throw AutogradError("conv3d: w must be [O,C,kz,ky,kx]");
    ConvGeom g = conv_geom(x.shape(), w.shape(), stride, stride, stride, pad, pad, pad);
    return conv_core(x, w, b, g, {g.O, g.OZ, g.OY, g.OX});
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.shape().size() != 3) throw AutogradError("conv2d: x must be [C,H,W]");
    if (w.shape().size() != 4) throw AutogradError("conv2d: w must be [O,C,kh,kw]");
    std::vector<int> xs{x.shape()[0], 1, x.shape()[1], x.shape()[2]};
    std::vector<int> ws{w.shape()[0], w.shape()[1], 1, w.shape()[2], w.shape()[3]};
    ConvGeom g = conv_geom(xs, ws, 1, stride, stride, 0, pad, pad);
    return conv_core(x, w, b, g, {g.O, g.OY, g.OX});
}

Var upsample2x_3d(const Var& x) {
    if (x.shape().size() != 4) throw AutogradError("upsample2x_3d: x must be [C,Z,Y,X]");
    int C = x.shape()[0], Z = x.shape()[1], Y = x.shape()[2], X = x.shape()[3];
    std::vector<double> out(static_cast<std::size_t>(C) * Z * Y * X * 8);
    auto in_idx = [&](int c, int z, int y, int xx) {
        return ((static_cast<std::size_t>(c) * Z + z) * Y + y) * X + xx;
    };
    auto out_idx = [&](int c, int z, int y, int xx) {
        return ((static_cast<std::size_t>(c) * 2 * Z + z) * 2 * Y + y) * 2 * X + xx;
    };
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < Z; ++z)
            for (int y = 0; y < Y; ++y)
                for (int xx = 0; xx < X; ++xx) {
                    double v = x.value()[in_idx(c, z, y, xx)];
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                out[out_idx(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx)] = v;
                }
    auto px = x.node();
    return Var(make_node({C, 2 * Z, 2 * Y, 2 * X}, std::move(out), {px},
                         [px, C, Z, Y, X, in_idx, out_idx](Node& nn) {
        for (int c = 0; c < C; ++c)
            for (int z = 0; z < Z; ++z)
                for (int y = 0; y < Y; ++y)
                    for (int xx = 0; xx < X; ++xx) {
                        double acc = 0.0;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    acc += nn.grad[out_idx(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx)];
                        px->grad[in_idx(c, z, y, xx)] += acc;
                    }
    }));
}

Var concat_ch(const std::vector<Var>& xs) {
    if (xs.empty()) throw AutogradError("concat_ch: empty");
    const auto& s0 = xs[0].shape();
    int total = 0;
    for (const Var& x : xs) {
        if (x.shape().size() != s0.size()) throw AutogradError("concat_ch: rank mismatch");
        for (std::size_t d = 1; d < s0.size(); ++d)
            if (x.shape()[d] != s0[d]) throw AutogradError("concat_ch: spatial mismatch");
        total += x.shape()[0];
    }
    std::vector<double> out;
    std::size_t per_ch = 1;
    for (std::size_t d = 1; d < s0.size(); ++d) per_ch *= s0[d];
    out.reserve(static_cast<std::size_t>(total) * per_ch);
    for (const Var& x : xs) out.insert(out.end(), x.value().begin(), x.value().end());
    std::vector<int> shape = s0;
    shape[0] = total;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Var& x : xs) parents.push_back(x.node());
    return Var(make_node(std::move(shape), std::move(out), parents, [parents](Node& nn) {
        std::size_t off = 0;
        for (const auto& p : parents) {
            if (p->requires_grad)
                for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += nn.grad[off + i];
            off += p->value.size();
        }
    }));
}

Var slice_ch(const Var& x, int c0, int c1) {
    if (x.shape().empty()) throw AutogradError("slice_ch: scalar input");
    int C = x.shape()[0];
    if (c0 < 0 || c1 > C || c0 >= c1) throw AutogradError("slice_ch: bad range");
    std::size_t per_ch = x.numel() / C;
    std::vector<double> out(x.value().begin() + c0 * per_ch, x.value().begin() + c1 * per_ch);
    std::vector<int> shape = x.shape();
    shape[0] = c1 - c0;
    auto px = x.node();
    return Var(make_node(std::move(shape), std::move(out), {px}, [px, c0, per_ch](Node& nn) {
        std::size_t base = c0 * per_ch;
        for (std::size_t i = 0; i < nn.grad.size(); ++i) px->grad[base + i] += nn.grad[i];
    }));
}

Var global_avg_pool(const Var& x) {
    if (x.shape().size() < 2) throw AutogradError("global_avg_pool: need [C, ...]");
    int C = x.shape()[0];
    std::size_t per_ch = x.numel() / C;
    std::vector<double> out(C);
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < per_ch; ++i) s += x.value()[c * per_ch + i];
        out[c] = s / static_cast<double>(per_ch);
    }
    auto px = x.node();
    return Var(make_node({1, C}, std::move(out), {px}, [px, C, per_ch](Node& nn) {
        for (int c = 0; c < C; ++c) {
            double g = nn.grad[c] / static_cast<double>(per_ch);
            for (std::size_t i = 0; i < per_ch; ++i) px->grad[c * per_ch + i] += g;
        }
    }));
}

Var reshape(const Var& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel()) throw AutogradError("reshape: numel mismatch");
    auto px = x.node();
    return Var(make_node(std::move(shape), x.value(), {px}, [px](Node& nn) {
        for (std::size_t i = 0; i < nn.grad.size(); ++i) px->grad[i] += nn.grad[i];
    }));
}

namespace {

// token row t, feature f  <->  volume (c, z, y, x)
std::vector<std::size_t> patch_permutation(int C, int Z, int Y, int X, int pz, int py, int px) {
    int GZ = Z / pz, GY = Y / py, GX = X / px;
    std::size_t n = static_cast<std::size_t>(C) * Z * Y * X;
    std::vector<std::size_t> perm(n); // perm[token_flat] = volume_flat
    int D = C * pz * py * px;
    for (int gz = 0; gz < GZ; ++gz)
        for (int gy = 0; gy < GY; ++gy)
            for (int gx = 0; gx < GX; ++gx) {
                int t = (gz * GY + gy) * GX + gx;
                int f = 0;
                for (int c = 0; c < C; ++c)
                    for (int lz = 0; lz < pz; ++lz)
                        for (int ly = 0; ly < py; ++ly)
                            for (int lx = 0; lx < px; ++lx, ++f) {
                                int z = gz * pz + lz, y = gy * py + ly, xx = gx * px + lx;
                                perm[static_cast<std::size_t>(t) * D + f] =
                                    ((static_cast<std::size_t>(c) * Z + z) * Y + y) * X + xx;
                            }
            }
    return perm;
}

} // namespace

Var patchify3d(const Var& x, int pz, int py, int px) {
    if (x.shape().size() != 4) throw AutogradError("patchify3d: x must be [C,Z,Y,X]");
    int C = x.shape()[0], Z = x.shape()[1], Y = x.shape()[2], X = x.shape()[3];
    if (Z % pz || Y % py || X % px) throw AutogradError("patchify3d: patch dims must divide volume");
    auto perm = patch_permutation(C, Z, Y, X, pz, py, px);
    int Np = (Z / pz) * (Y / py) * (X / px);
    int D = C * pz * py * px;
    std::vector<double> out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = x.value()[perm[i]];
    auto pxn = x.node();
    return Var(make_node({Np, D}, std::move(out), {pxn}, [pxn, perm](Node& nn) {
        for (std::size_t i = 0; i < perm.size(); ++i) pxn->grad[perm[i]] += nn.grad[i];
    }));
}

Var unpatchify3d(const Var& tokens, int c, int z, int y, int x, int pz, int py, int px) {
    if (tokens.shape().size() != 2) throw AutogradError("unpatchify3d: tokens must be 2-D");
    auto perm = patch_permutation(c, z, y, x, pz, py, px);
    if (perm.size() != tokens.numel()) throw AutogradError("unpatchify3d: size mismatch");
    std::vector<double> out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[perm[i]] = tokens.value()[i];
    auto pt = tokens.node();
    return Var(make_node({c, z, y, x}, std::move(out), {pt}, [pt, perm](Node& nn) {
        for (std::size_t i = 0; i < perm.size(); ++i) pt->grad[i] += nn.grad[perm[i]];
    }));
}

} // namespace glioplan::ad
