#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace glioplan::ad {

struct AutogradError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One value in the computation graph. Graphs are built per step and dropped
// after backward(); parameter nodes are long-lived leaves.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad; // sized on demand during backward
    bool requires_grad = false;
    std::uint64_t id = 0; // creation order; backward runs in decreasing id
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& value() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool defined() const { return node_ != nullptr; }
    std::shared_ptr<Node> node() const { return node_; }

    double scalar() const {
        if (numel() != 1) throw AutogradError("scalar() on non-scalar");
        return node_->value[0];
    }

private:
    std::shared_ptr<Node> node_;
};

Var constant(std::vector<int> shape, std::vector<double> data);
Var constant_scalar(double v);
// Leaf with requires_grad set; the caller keeps the node alive across steps.
Var parameter(std::vector<int> shape, std::vector<double> data);

// Runs reverse-mode accumulation from a scalar loss. Zeroes reachable grads
// first, seeds d(loss)/d(loss) = 1.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var tanh_act(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var square(const Var& a);
Var minimum(const Var& a, const Var& b);
// Pass-through gradient inside [lo, hi], zero outside.
Var clamp(const Var& a, double lo, double hi);

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// ---- matrices ([rows, cols]) ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& x, const Var& v); // x:[n,k] + v:[1,k]
Var broadcast_rows(const Var& v, int n);    // v:[1,k] -> [n,k]
Var slice_cols(const Var& x, int c0, int c1);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);
Var slice_rows(const Var& x, int r0, int r1);
Var row_softmax(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// ---- losses ----
// Mean over rows of -log softmax(logits)[target]; targets as one-hot const.
Var softmax_cross_entropy(const Var& logits, const Var& one_hot);
// Mean over elements of BCE on logits (numerically stable form).
Var bce_with_logits(const Var& logits, const Var& targets);
Var mse_loss(const Var& pred, const Var& target);

// ---- convolution (single sample, channel-major tensors) ----
// x: [C, H, W]; w: [O, C, kh, kw]; b: [O]. Same dilation 1.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x: [C, Z, Y, X]; w: [O, C, kz, ky, kx]; b: [O].
Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// Nearest-neighbour 2x upsample of [C, Z, Y, X].
Var upsample2x_3d(const Var& x);
// Channel concat / slice of conv tensors ([C, ...spatial]).
Var concat_ch(const std::vector<Var>& xs);
Var slice_ch(const Var& x, int c0, int c1);
// Mean over spatial dims: [C, ...] -> [1, C].
Var global_avg_pool(const Var& x);
// Reinterpret the buffer with a new shape (same numel).
Var reshape(const Var& x, std::vector<int> shape);

// ---- patch tokenization ----
// [C, Z, Y, X] -> [Np, C*pz*py*px] with patches enumerated z-major, and the
// exact inverse. Pure index permutations.
Var patchify3d(const Var& x, int pz, int py, int px);
Var unpatchify3d(const Var& tokens, int c, int z, int y, int x, int pz, int py, int px);

} // namespace glioplan::ad
