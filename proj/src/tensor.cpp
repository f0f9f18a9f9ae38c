#include "msca/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace msca {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_seq{0};
thread_local bool t_grad_enabled = true;
thread_local BranchRecorder* t_branches = nullptr;

void record_args(const std::vector<std::int64_t>& args) {
    if (t_branches) {
        for (auto a : args) t_branches->record(static_cast<std::uint64_t>(a));
    }
}

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

#ifndef NDEBUG
void check_finite(std::string_view op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericalError("non-finite value produced by " + std::string(op));
    }
}
#endif

std::span<double> grad_of(detail::Node& n, std::size_t i) {
    return n.inputs[i]->grad_buffer();
}

bool wants_grad(const detail::Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

std::int64_t axis_index(int axis, int ndim) {
    const int a = axis < 0 ? axis + ndim : axis;
    if (a < 0 || a >= ndim) throw DimensionError("axis " + std::to_string(axis) + " out of range");
    return a;
}

// Right-aligned broadcast of two shapes. Strides are zero along stretched dims.
struct Broadcast {
    Shape out;
    std::vector<std::int64_t> sa, sb;
};

Broadcast broadcast(const Shape& a, const Shape& b, std::string_view op) {
    const std::size_t nd = std::max(a.size(), b.size());
    Broadcast bc;
    bc.out.assign(nd, 1);
    Shape pa(nd, 1), pb(nd, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(nd - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(nd - b.size()));
    for (std::size_t i = 0; i < nd; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                                 shape_str(b));
        }
        bc.out[i] = std::max(pa[i], pb[i]);
    }
    bc.sa.assign(nd, 0);
    bc.sb.assign(nd, 0);
    std::int64_t ra = 1, rb = 1;
    for (std::size_t k = nd; k-- > 0;) {
        bc.sa[k] = pa[k] == 1 ? 0 : ra;
        bc.sb[k] = pb[k] == 1 ? 0 : rb;
        ra *= pa[k];
        rb *= pb[k];
    }
    return bc;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
    const std::size_t nd = bc.out.size();
    if (nd == 0) {
        fn(0, 0, 0);
        return;
    }
    const std::int64_t inner = bc.out[nd - 1];
    const std::int64_t ia = bc.sa[nd - 1], ib = bc.sb[nd - 1];
    const std::int64_t outer = shape_numel(bc.out) / inner;
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t oa = 0, ob = 0, o = 0;
    for (std::int64_t r = 0; r < outer; ++r) {
        for (std::int64_t j = 0; j < inner; ++j) fn(o + j, oa + j * ia, ob + j * ib);
        o += inner;
        for (std::size_t k = nd - 1; k-- > 0;) {
            ++idx[k];
            oa += bc.sa[k];
            ob += bc.sb[k];
            if (idx[k] < bc.out[k]) break;
            oa -= bc.sa[k] * idx[k];
            ob -= bc.sb[k] * idx[k];
            idx[k] = 0;
        }
    }
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct ConvGeom {
    std::int64_t n, c, h, w, o, kh, kw, ho, wo;
    int stride, pad;
    std::int64_t k() const { return c * kh * kw; }
    std::int64_t p() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
    const std::int64_t P = g.p();
    for (std::int64_t ch = 0; ch < g.c; ++ch) {
        const double* plane = img + ch * g.h * g.w;
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((ch * g.kh + i) * g.kw + j) * P;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + i;
                    double* dst = row + oy * g.wo;
                    if (y < 0 || y >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + y * g.w;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t x = ox * g.stride - g.pad + j;
                        dst[ox] = (x < 0 || x >= g.w) ? 0.0 : src[x];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
    const std::int64_t P = g.p();
    for (std::int64_t ch = 0; ch < g.c; ++ch) {
        double* plane = img + ch * g.h * g.w;
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((ch * g.kh + i) * g.kw + j) * P;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + i;
                    if (y < 0 || y >= g.h) continue;
                    double* dst = plane + y * g.w;
                    const double* src = row + oy * g.wo;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t x = ox * g.stride - g.pad + j;
                        if (x >= 0 && x < g.w) dst[x] += src[ox];
                    }
                }
            }
        }
    }
}

void require_rank(const Tensor& x, int rank, std::string_view op) {
    if (x.ndim() != rank) {
        throw DimensionError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                             " tensor, got " + shape_str(x.shape()));
    }
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::span<double> detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, double fill) {
    check_shape(shape);
    node_ = std::make_shared<detail::Node>();
    node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    node_->shape = std::move(shape);
    node_->seq = g_seq.fetch_add(1);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->data = std::move(values);
    node_->shape = std::move(shape);
    node_->seq = g_seq.fetch_add(1);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, value); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    return shape()[static_cast<std::size_t>(axis_index(axis, ndim()))];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = on;
    return *this;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

void Tensor::backward() const { msca::backward(*this); }

Graph Graph::trace(const Tensor& root) {
    Graph g;
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        g.ops_.push_back(n);
        for (auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(g.ops_.begin(), g.ops_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
    return g;
}

bool Graph::is_topological() const {
    std::unordered_set<const detail::Node*> before;
    for (const auto* n : ops_) {
        for (const auto& in : n->inputs) {
            if (in->requires_grad && !before.count(in.get())) return false;
        }
        before.insert(n);
    }
    return true;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
    const Graph graph = Graph::trace(loss);
    loss.node()->grad_buffer()[0] += 1.0;
    const auto& ops = graph.ops();
    for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->backward) continue;
        if (!n->grad.empty()) n->backward(*n);
        // Intermediate gradients are released once propagated.
        std::vector<double>().swap(n->grad);
    }
}

bool grad_enabled() { return t_grad_enabled; }

BranchRecorder::BranchRecorder() : previous_(t_branches) { t_branches = this; }
BranchRecorder::~BranchRecorder() { t_branches = previous_; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_op(Shape shape, std::vector<double> values, std::string_view op,
               std::vector<Tensor> inputs, BackwardRule rule) {
#ifndef NDEBUG
    bool finite_inputs = true;
    for (const auto& in : inputs) {
        for (double v : in.data()) finite_inputs = finite_inputs && std::isfinite(v);
    }
    if (finite_inputs) check_finite(op, values);
#endif
    Tensor out(std::move(shape), std::move(values));
    auto& node = *out.node();
    node.op = op;
    if (!t_grad_enabled) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    node.requires_grad = true;
    node.backward = std::move(rule);
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node());
    return out;
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeom g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.o = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (weight.dim(1) != g.c) {
        throw DimensionError("conv2d: input has " + std::to_string(g.c) + " channels but weight expects " +
                             std::to_string(weight.dim(1)));
    }
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
        // Even kernels are only used for non-overlapping patch embedding.
        if (!(stride == g.kh && stride == g.kw && padding == 0)) {
            throw ConfigError("conv2d: even kernel sizes require stride == kernel and no padding");
        }
    }
    const std::int64_t hnum = g.h + 2 * padding - g.kh, wnum = g.w + 2 * padding - g.kw;
    if (hnum < 0 || wnum < 0) throw DimensionError("conv2d: kernel larger than padded input");
    g.ho = hnum / stride + 1;
    g.wo = wnum / stride + 1;
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.o)) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(g.o) + " output channels");
    }

    const std::int64_t K = g.k(), P = g.p();
    std::vector<double> out(static_cast<std::size_t>(g.n * g.o * P));
    std::vector<double> cols(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
    ConstMapMat W(weight.data().data(), g.o, K);
    const double* x = input.data().data();
    for (std::int64_t n = 0; n < g.n; ++n) {
        const double* img = x + n * g.c * g.h * g.w;
        const double* colp = img;
        if (!g.pointwise()) {
            im2col(img, g, cols.data());
            colp = cols.data();
        }
        MapMat O(out.data() + n * g.o * P, g.o, P);
        O.noalias() = W * ConstMapMat(colp, K, P);
        if (bias.defined()) {
            for (std::int64_t o = 0; o < g.o; ++o) O.row(o).array() += bias.data()[o];
        }
    }

    std::vector<Tensor> ins{input, weight};
    if (bias.defined()) ins.push_back(bias);
    return make_op({g.n, g.o, g.ho, g.wo}, std::move(out), "conv2d", std::move(ins), [g](detail::Node& self) {
        const std::int64_t K = g.k(), P = g.p();
        const auto& xin = self.inputs[0]->data;
        const auto& wt = self.inputs[1]->data;
        const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1);
        const bool gb = self.inputs.size() > 2 && wants_grad(self, 2);
        std::vector<double> cols(static_cast<std::size_t>(K * P));
        ConstMapMat W(wt.data(), g.o, K);
        for (std::int64_t n = 0; n < g.n; ++n) {
            ConstMapMat dO(self.grad.data() + n * g.o * P, g.o, P);
            if (gw) {
                const double* colp = xin.data() + n * g.c * g.h * g.w;
                if (!g.pointwise()) {
                    im2col(colp, g, cols.data());
                    colp = cols.data();
                }
                MapMat dW(grad_of(self, 1).data(), g.o, K);
                dW.noalias() += dO * ConstMapMat(colp, K, P).transpose();
            }
            if (gb) {
                auto db = grad_of(self, 2);
                // Plain loop: a vectorized reduction's rounding would depend on buffer alignment.
                for (std::int64_t o = 0; o < g.o; ++o) {
                    const double* row = self.grad.data() + (n * g.o + o) * P;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < P; ++j) acc += row[j];
                    db[o] += acc;
                }
            }
            if (gx) {
                double* dimg = grad_of(self, 0).data() + n * g.c * g.h * g.w;
                if (g.pointwise()) {
                    MapMat(dimg, K, P).noalias() += W.transpose() * dO;
                } else {
                    MapMat(cols.data(), K, P).noalias() = W.transpose() * dO;
                    col2im_add(cols.data(), g, dimg);
                }
            }
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v > 0 ? v : 0.0;
    if (t_branches) {
        for (double v : out) t_branches->record(v > 0);
    }
    return make_op(x.shape(), std::move(out), "relu", {x}, [](detail::Node& self) {
        auto gx = grad_of(self, 0);
        const auto& in = self.inputs[0]->data;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] > 0) gx[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = stable_sigmoid(v);
    return make_op(x.shape(), std::move(out), "sigmoid", {x}, [](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double s = self.data[i];
            gx[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

namespace {

enum class BinOp { Add, Sub, Mul, Div };

template <BinOp Op>
Tensor binary(const Tensor& a, const Tensor& b, std::string_view name) {
    const auto bc = std::make_shared<Broadcast>(broadcast(a.shape(), b.shape(), name));
    std::vector<double> out(static_cast<std::size_t>(shape_numel(bc->out)));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for_each_broadcast(*bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        if constexpr (Op == BinOp::Add) out[o] = pa[ia] + pb[ib];
        if constexpr (Op == BinOp::Sub) out[o] = pa[ia] - pb[ib];
        if constexpr (Op == BinOp::Mul) out[o] = pa[ia] * pb[ib];
        if constexpr (Op == BinOp::Div) out[o] = pa[ia] / pb[ib];
    });
    return make_op(bc->out, std::move(out), name, {a, b}, [bc](detail::Node& self) {
        const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
        const double* g = self.grad.data();
        const double* pa = self.inputs[0]->data.data();
        const double* pb = self.inputs[1]->data.data();
        double* da = ga ? grad_of(self, 0).data() : nullptr;
        double* db = gb ? grad_of(self, 1).data() : nullptr;
        for_each_broadcast(*bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            if constexpr (Op == BinOp::Add) {
                if (da) da[ia] += g[o];
                if (db) db[ib] += g[o];
            }
            if constexpr (Op == BinOp::Sub) {
                if (da) da[ia] += g[o];
                if (db) db[ib] -= g[o];
            }
            if constexpr (Op == BinOp::Mul) {
                if (da) da[ia] += g[o] * pb[ib];
                if (db) db[ib] += g[o] * pa[ia];
            }
            if constexpr (Op == BinOp::Div) {
                if (da) da[ia] += g[o] / pb[ib];
                if (db) db[ib] -= g[o] * pa[ia] / (pb[ib] * pb[ib]);
            }
        });
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<BinOp::Add>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<BinOp::Sub>(a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<BinOp::Mul>(a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<BinOp::Div>(a, b, "div"); }

Tensor add_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += s;
    return make_op(x.shape(), std::move(out), "add_scalar", {x}, [](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor mul_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= s;
    return make_op(x.shape(), std::move(out), "mul_scalar", {x}, [s](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const int nd = parts[0].ndim();
    const auto ax = static_cast<std::size_t>(axis_index(axis, nd));
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < static_cast<std::size_t>(nd); ++d) {
            if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
                throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                     shape_str(parts[0].shape()));
            }
        }
        out_shape[ax] += p.shape()[ax];
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
    for (std::size_t d = ax + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
    const std::int64_t row = out_shape[ax] * inner;
    std::vector<double> out(static_cast<std::size_t>(outer * row));
    std::int64_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].data().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + off);
        }
        off += widths[k];
    }
    return make_op(out_shape, std::move(out), "concat", parts, [widths, outer, row](detail::Node& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            if (wants_grad(self, k)) {
                auto gk = grad_of(self, k);
                for (std::int64_t o = 0; o < outer; ++o) {
                    for (std::int64_t j = 0; j < widths[k]; ++j) {
                        gk[o * widths[k] + j] += self.grad[o * row + off + j];
                    }
                }
            }
            off += widths[k];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw DimensionError("matmul operands must have rank >= 2");
    const std::int64_t M = a.dim(-2), K = a.dim(-1);
    if (b.dim(-2) != K) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::int64_t N = b.dim(-1);
    Shape out_shape = a.shape();
    out_shape.back() = N;

    if (b.ndim() == 2) {
        const std::int64_t rows = a.numel() / K;
        std::vector<double> out(static_cast<std::size_t>(rows * N));
        MapMat(out.data(), rows, N).noalias() =
            ConstMapMat(a.data().data(), rows, K) * ConstMapMat(b.data().data(), K, N);
        return make_op(out_shape, std::move(out), "matmul", {a, b}, [rows, K, N](detail::Node& self) {
            ConstMapMat G(self.grad.data(), rows, N);
            if (wants_grad(self, 0)) {
                MapMat(grad_of(self, 0).data(), rows, K).noalias() +=
                    G * ConstMapMat(self.inputs[1]->data.data(), K, N).transpose();
            }
            if (wants_grad(self, 1)) {
                MapMat(grad_of(self, 1).data(), K, N).noalias() +=
                    ConstMapMat(self.inputs[0]->data.data(), rows, K).transpose() * G;
            }
        });
    }

    if (a.ndim() != b.ndim() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
        throw DimensionError("matmul: batch dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::int64_t batch = a.numel() / (M * K);
    std::vector<double> out(static_cast<std::size_t>(batch * M * N));
    for (std::int64_t i = 0; i < batch; ++i) {
        MapMat(out.data() + i * M * N, M, N).noalias() =
            ConstMapMat(a.data().data() + i * M * K, M, K) * ConstMapMat(b.data().data() + i * K * N, K, N);
    }
    return make_op(out_shape, std::move(out), "bmm", {a, b}, [batch, M, K, N](detail::Node& self) {
        const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
        for (std::int64_t i = 0; i < batch; ++i) {
            ConstMapMat G(self.grad.data() + i * M * N, M, N);
            if (ga) {
                MapMat(grad_of(self, 0).data() + i * M * K, M, K).noalias() +=
                    G * ConstMapMat(self.inputs[1]->data.data() + i * K * N, K, N).transpose();
            }
            if (gb) {
                MapMat(grad_of(self, 1).data() + i * K * N, K, N).noalias() +=
                    ConstMapMat(self.inputs[0]->data.data() + i * M * K, M, K).transpose() * G;
            }
        }
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() == 0) throw DimensionError("softmax_lastdim on a tensor without axes");
    const std::int64_t D = x.dim(-1), rows = x.numel() / D;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::int64_t r = 0; r < rows; ++r) {
        double* v = out.data() + r * D;
        const double mx = *std::max_element(v, v + D);
        double s = 0;
        for (std::int64_t j = 0; j < D; ++j) s += (v[j] = std::exp(v[j] - mx));
        for (std::int64_t j = 0; j < D; ++j) v[j] /= s;
    }
    return make_op(x.shape(), std::move(out), "softmax", {x}, [D, rows](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * D;
            const double* g = self.grad.data() + r * D;
            double dot = 0;
            for (std::int64_t j = 0; j < D; ++j) dot += g[j] * y[j];
            for (std::int64_t j = 0; j < D; ++j) gx[r * D + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() == 0) throw DimensionError("layernorm_lastdim on a tensor without axes");
    const std::int64_t D = x.dim(-1), rows = x.numel() / D;
    if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
        throw DimensionError("layernorm: scale/shift must have shape [" + std::to_string(D) + "]");
    }
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* in = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* v = in + r * D;
        double mu = 0, var = 0;
        for (std::int64_t j = 0; j < D; ++j) mu += v[j];
        mu /= static_cast<double>(D);
        for (std::int64_t j = 0; j < D; ++j) var += (v[j] - mu) * (v[j] - mu);
        var /= static_cast<double>(D);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < D; ++j) {
            out[r * D + j] = (v[j] - mu) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    return make_op(x.shape(), std::move(out), "layernorm", {x, gamma, beta}, [D, rows, eps](detail::Node& self) {
        const double* in = self.inputs[0]->data.data();
        const double* gam = self.inputs[1]->data.data();
        const bool gx = wants_grad(self, 0), gg = wants_grad(self, 1), gb = wants_grad(self, 2);
        std::vector<double> xhat(static_cast<std::size_t>(D)), dxhat(static_cast<std::size_t>(D));
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* v = in + r * D;
            const double* g = self.grad.data() + r * D;
            double mu = 0, var = 0;
            for (std::int64_t j = 0; j < D; ++j) mu += v[j];
            mu /= static_cast<double>(D);
            for (std::int64_t j = 0; j < D; ++j) var += (v[j] - mu) * (v[j] - mu);
            var /= static_cast<double>(D);
            const double inv = 1.0 / std::sqrt(var + eps);
            double m1 = 0, m2 = 0;
            for (std::int64_t j = 0; j < D; ++j) {
                xhat[j] = (v[j] - mu) * inv;
                dxhat[j] = g[j] * gam[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat[j];
            }
            m1 /= static_cast<double>(D);
            m2 /= static_cast<double>(D);
            if (gx) {
                auto dx = grad_of(self, 0);
                for (std::int64_t j = 0; j < D; ++j) dx[r * D + j] += inv * (dxhat[j] - m1 - xhat[j] * m2);
            }
            if (gg) {
                auto dg = grad_of(self, 1);
                for (std::int64_t j = 0; j < D; ++j) dg[j] += g[j] * xhat[j];
            }
            if (gb) {
                auto db = grad_of(self, 2);
                for (std::int64_t j = 0; j < D; ++j) db[j] += g[j];
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    return make_op({}, {s}, "sum", {x}, [](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (auto& v : gx) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
    return make_op({}, {s}, "mean", {x}, [n](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (auto& v : gx) v += self.grad[0] / n;
    });
}

Tensor sum_lastdim(const Tensor& x) {
    if (x.ndim() == 0) throw DimensionError("sum_lastdim on a tensor without axes");
    const std::int64_t D = x.dim(-1), rows = x.numel() / D;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < D; ++j) out[r] += x.data()[r * D + j];
    }
    return make_op(out_shape, std::move(out), "sum_lastdim", {x}, [D, rows](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < D; ++j) gx[r * D + j] += self.grad[r];
        }
    });
}

Tensor max_pool2d(const Tensor& x) {
    require_rank(x, 4, "max_pool2d");
    const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) throw DimensionError("max_pool2d needs spatial size >= 2");
    const std::int64_t Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<std::size_t>(N * C * Ho * Wo));
    auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
    const double* in = x.data().data();
    for (std::int64_t p = 0; p < N * C; ++p) {
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                std::int64_t best = p * H * W + 2 * oy * W + 2 * ox;
                for (std::int64_t dy = 0; dy < 2; ++dy) {
                    for (std::int64_t dx = 0; dx < 2; ++dx) {
                        const std::int64_t i = p * H * W + (2 * oy + dy) * W + 2 * ox + dx;
                        if (in[i] > in[best]) best = i;
                    }
                }
                const std::int64_t o = (p * Ho + oy) * Wo + ox;
                out[o] = in[best];
                (*arg)[o] = best;
            }
        }
    }
    record_args(*arg);
    return make_op({N, C, Ho, Wo}, std::move(out), "max_pool2d", {x}, [arg](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += self.grad[o];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::int64_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(NC), 0.0);
    for (std::int64_t p = 0; p < NC; ++p) {
        for (std::int64_t i = 0; i < HW; ++i) out[p] += x.data()[p * HW + i];
        out[p] /= static_cast<double>(HW);
    }
    return make_op({x.dim(0), x.dim(1), 1, 1}, std::move(out), "global_avg_pool", {x},
                   [NC, HW](detail::Node& self) {
                       auto gx = grad_of(self, 0);
                       for (std::int64_t p = 0; p < NC; ++p) {
                           const double g = self.grad[p] / static_cast<double>(HW);
                           for (std::int64_t i = 0; i < HW; ++i) gx[p * HW + i] += g;
                       }
                   });
}

Tensor global_max_pool(const Tensor& x) {
    require_rank(x, 4, "global_max_pool");
    const std::int64_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(NC));
    auto arg = std::make_shared<std::vector<std::int64_t>>(NC);
    for (std::int64_t p = 0; p < NC; ++p) {
        std::int64_t best = p * HW;
        for (std::int64_t i = 1; i < HW; ++i) {
            if (x.data()[p * HW + i] > x.data()[best]) best = p * HW + i;
        }
        out[p] = x.data()[best];
        (*arg)[p] = best;
    }
    record_args(*arg);
    return make_op({x.dim(0), x.dim(1), 1, 1}, std::move(out), "global_max_pool", {x},
                   [arg](detail::Node& self) {
                       auto gx = grad_of(self, 0);
                       for (std::size_t p = 0; p < arg->size(); ++p) gx[(*arg)[p]] += self.grad[p];
                   });
}

Tensor channel_mean(const Tensor& x) {
    require_rank(x, 4, "channel_mean");
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(N * HW), 0.0);
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t i = 0; i < HW; ++i) out[n * HW + i] += x.data()[(n * C + c) * HW + i];
        }
        for (std::int64_t i = 0; i < HW; ++i) out[n * HW + i] /= static_cast<double>(C);
    }
    return make_op({N, 1, x.dim(2), x.dim(3)}, std::move(out), "channel_mean", {x},
                   [N, C, HW](detail::Node& self) {
                       auto gx = grad_of(self, 0);
                       for (std::int64_t n = 0; n < N; ++n) {
                           for (std::int64_t c = 0; c < C; ++c) {
                               for (std::int64_t i = 0; i < HW; ++i) {
                                   gx[(n * C + c) * HW + i] += self.grad[n * HW + i] / static_cast<double>(C);
                               }
                           }
                       }
                   });
}

Tensor channel_max(const Tensor& x) {
    require_rank(x, 4, "channel_max");
    const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(N * HW));
    auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < HW; ++i) {
            std::int64_t best = n * C * HW + i;
            for (std::int64_t c = 1; c < C; ++c) {
                const std::int64_t j = (n * C + c) * HW + i;
                if (x.data()[j] > x.data()[best]) best = j;
            }
            out[n * HW + i] = x.data()[best];
            (*arg)[n * HW + i] = best;
        }
    }
    record_args(*arg);
    return make_op({N, 1, x.dim(2), x.dim(3)}, std::move(out), "channel_max", {x}, [arg](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += self.grad[o];
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const std::int64_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(NC * 4 * H * W));
    for (std::int64_t p = 0; p < NC; ++p) {
        for (std::int64_t y = 0; y < 2 * H; ++y) {
            for (std::int64_t xx = 0; xx < 2 * W; ++xx) {
                out[(p * 2 * H + y) * 2 * W + xx] = x.data()[(p * H + y / 2) * W + xx / 2];
            }
        }
    }
    return make_op({x.dim(0), x.dim(1), 2 * H, 2 * W}, std::move(out), "upsample_nearest2x", {x},
                   [NC, H, W](detail::Node& self) {
                       auto gx = grad_of(self, 0);
                       for (std::int64_t p = 0; p < NC; ++p) {
                           for (std::int64_t y = 0; y < 2 * H; ++y) {
                               for (std::int64_t xx = 0; xx < 2 * W; ++xx) {
                                   gx[(p * H + y / 2) * W + xx / 2] += self.grad[(p * 2 * H + y) * 2 * W + xx];
                               }
                           }
                       }
                   });
}

Tensor pad2d(const Tensor& x, int pad) {
    require_rank(x, 4, "pad2d");
    if (pad < 0) throw ConfigError("pad2d: negative padding");
    const std::int64_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<double> out(static_cast<std::size_t>(NC * Hp * Wp), 0.0);
    for (std::int64_t p = 0; p < NC; ++p) {
        for (std::int64_t y = 0; y < H; ++y) {
            std::copy_n(x.data().data() + (p * H + y) * W, W, out.data() + (p * Hp + y + pad) * Wp + pad);
        }
    }
    return make_op({x.dim(0), x.dim(1), Hp, Wp}, std::move(out), "pad2d", {x},
                   [NC, H, W, Hp, Wp, pad](detail::Node& self) {
                       auto gx = grad_of(self, 0);
                       for (std::int64_t p = 0; p < NC; ++p) {
                           for (std::int64_t y = 0; y < H; ++y) {
                               for (std::int64_t xx = 0; xx < W; ++xx) {
                                   gx[(p * H + y) * W + xx] += self.grad[(p * Hp + y + pad) * Wp + pad + xx];
                               }
                           }
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op(std::move(shape), std::move(out), "reshape", {x}, [](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
    const int nd = x.ndim();
    if (static_cast<int>(order.size()) != nd) throw DimensionError("permute: order length mismatch");
    std::vector<bool> used(static_cast<std::size_t>(nd), false);
    for (int o : order) {
        if (o < 0 || o >= nd || used[o]) throw DimensionError("permute: invalid axis order");
        used[o] = true;
    }
    std::vector<std::int64_t> in_stride(static_cast<std::size_t>(nd));
    std::int64_t s = 1;
    for (int k = nd; k-- > 0;) {
        in_stride[k] = s;
        s *= x.shape()[k];
    }
    Shape out_shape(static_cast<std::size_t>(nd));
    Broadcast map;  // reuse the odometer: "a" walks the source with permuted strides
    map.sa.resize(static_cast<std::size_t>(nd));
    map.sb.assign(static_cast<std::size_t>(nd), 0);
    for (int k = 0; k < nd; ++k) {
        out_shape[k] = x.shape()[order[k]];
        map.sa[k] = in_stride[order[k]];
    }
    map.out = out_shape;
    auto src_index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    for_each_broadcast(map, [&](std::int64_t o, std::int64_t ia, std::int64_t) {
        out[o] = x.data()[ia];
        (*src_index)[o] = ia;
    });
    return make_op(out_shape, std::move(out), "permute", {x}, [src_index](detail::Node& self) {
        auto gx = grad_of(self, 0);
        for (std::size_t o = 0; o < src_index->size(); ++o) gx[(*src_index)[o]] += self.grad[o];
    });
}

Tensor transpose_last2(const Tensor& x) {
    const int nd = x.ndim();
    if (nd < 2) throw DimensionError("transpose_last2 needs rank >= 2");
    std::vector<int> order(static_cast<std::size_t>(nd));
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[nd - 1], order[nd - 2]);
    return permute(x, order);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape()) {
        throw DimensionError("bce: logits " + shape_str(logits.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const double n = static_cast<double>(logits.numel());
    double acc = 0;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const double z = logits.data()[i], y = target.data()[i];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return make_op({}, {acc / n}, "bce_with_logits", {logits, target}, [n](detail::Node& self) {
        if (!wants_grad(self, 0)) return;
        auto gz = grad_of(self, 0);
        const auto& z = self.inputs[0]->data;
        const auto& y = self.inputs[1]->data;
        for (std::size_t i = 0; i < z.size(); ++i) gz[i] += self.grad[0] * (stable_sigmoid(z[i]) - y[i]) / n;
    });
}

}  // namespace msca
