#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations executed while
// gradient recording is enabled, and with at least one operand that requires a
// gradient, link their output to their inputs together with a backward rule.
// backward() replays those rules in reverse creation order.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msca/errors.hpp"

namespace msca {

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(Node&)> backward;

    // Gradient storage, zero-filled on first access.
    std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    // Negative indices count from the back.
    std::int64_t dim(int axis) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double item() const;
    double at(std::int64_t flat) const { return node_->data.at(static_cast<std::size_t>(flat)); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    // Only valid on leaves.
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return !node_->backward; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();
    std::string_view op_name() const { return node_->op; }

    // New leaf with copied data and no history.
    Tensor detach() const;

    // Accumulates d(this)/d(leaf) into every reachable leaf that requires a gradient.
    void backward() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations reachable from a root, in creation order.
/// Every operation's inputs precede it.
class Graph {
public:
    static Graph trace(const Tensor& root);

    const std::vector<detail::Node*>& ops() const { return ops_; }
    bool is_topological() const;

private:
    std::vector<detail::Node*> ops_;
};

void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// While alive, forward passes on this thread hash which side of every kink they
/// take (ReLU sign, max-pool argmax). Two evaluations with equal signatures lie on
/// the same smooth piece.
class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    void reset() { hash_ = 0; }
    std::uint64_t signature() const { return hash_; }
    void record(std::uint64_t v) { hash_ = (hash_ ^ v) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL; }

private:
    std::uint64_t hash_ = 0;
    BranchRecorder* previous_;
};

using BackwardRule = std::function<void(detail::Node&)>;

/// Creates an operation output. Used by every primitive and available for
/// custom operations (tests use it to build deliberately broken rules).
Tensor make_op(Shape shape, std::vector<double> values, std::string_view op,
               std::vector<Tensor> inputs, BackwardRule rule);

// ---------------------------------------------------------------------------
// Primitive operations

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              int stride = 1, int padding = 0);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Elementwise with numpy-style broadcasting (right-aligned, size-1 dims stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);

Tensor concat(const std::vector<Tensor>& parts, int axis);
inline Tensor concat_channels(const std::vector<Tensor>& parts) { return concat(parts, 1); }

// a[..., M, K] x b[K, N], or batched a[B..., M, K] x b[B..., K, N].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax_lastdim(const Tensor& x);
Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_lastdim(const Tensor& x);

// 2x2 window, stride 2. Gradient goes to the first maximum in row-major order.
Tensor max_pool2d(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C,1,1]
Tensor global_max_pool(const Tensor& x);
Tensor channel_mean(const Tensor& x);  // [N,C,H,W] -> [N,1,H,W]
Tensor channel_max(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);
Tensor pad2d(const Tensor& x, int pad);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor transpose_last2(const Tensor& x);

/// Mean over elements of max(z,0) - z*y + log(1 + exp(-|z|)). `target` is not differentiated.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(mul_scalar(a, -1.0), s); }

}  // namespace msca
