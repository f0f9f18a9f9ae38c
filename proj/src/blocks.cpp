#include "msca/blocks.hpp"

#include <cmath>

namespace msca {

ResidualBlock::ResidualBlock(std::int64_t in, std::int64_t out, int stride, Rng& rng) : stride_(stride) {
    if (stride != 1 && stride != 2) throw ConfigError("residual block stride must be 1 or 2");
    if (stride == 2 && out != 2 * in) {
        throw ConfigError("a stride-2 residual block doubles its channels (" + std::to_string(in) + " -> " +
                          std::to_string(2 * in) + ")");
    }
    conv1 = Conv2d(in, out, 3, stride, 1, rng);
    conv2 = Conv2d(out, out, 3, 1, 1, rng);
    if (in != out || stride != 1) shortcut.emplace(in, out, 1, stride, 0, rng);
}

Tensor ResidualBlock::forward(const Tensor& x) const {
    if (x.ndim() != 4) throw DimensionError("residual block expects [N,C,H,W]");
    if (x.dim(2) % stride_ != 0 || x.dim(3) % stride_ != 0) {
        throw DimensionError("residual block: spatial size " + shape_str(x.shape()) +
                             " not divisible by stride " + std::to_string(stride_));
    }
    Tensor main = conv2.forward(relu(conv1.forward(x)));
    return add(main, shortcut ? shortcut->forward(x) : x);
}

void ResidualBlock::collect(const std::string& prefix, ParamList& out) const {
    conv1.collect(join_name(prefix, "conv1"), out);
    conv2.collect(join_name(prefix, "conv2"), out);
    if (shortcut) shortcut->collect(join_name(prefix, "shortcut"), out);
}

int default_cbam_reduction(std::int64_t channels) {
    if (channels >= 8) return 8;
    if (channels >= 4) return 4;
    return static_cast<int>(channels);
}

Cbam::Cbam(std::int64_t channels, Rng& rng, int reduction)
    : reduction_(reduction > 0 ? reduction : default_cbam_reduction(channels)) {
    if (channels % reduction_ != 0) {
        throw ConfigError("CBAM: " + std::to_string(channels) + " channels not divisible by reduction " +
                          std::to_string(reduction_));
    }
    const std::int64_t hidden = channels / reduction_;
    fc1 = Linear(channels, hidden, rng);
    fc2 = Linear(hidden, channels, rng);
    spatial = Conv2d(2, 1, 7, 1, 3, rng);
}

Tensor Cbam::mlp(const Tensor& pooled) const {
    const std::int64_t n = pooled.dim(0), c = pooled.dim(1);
    return fc2.forward(relu(fc1.forward(reshape(pooled, {n, c}))));
}

Tensor Cbam::channel_gate(const Tensor& x) const {
    Tensor logits = add(mlp(global_avg_pool(x)), mlp(global_max_pool(x)));
    return reshape(sigmoid(logits), {x.dim(0), x.dim(1), 1, 1});
}

Tensor Cbam::spatial_gate(const Tensor& x) const {
    return sigmoid(spatial.forward(concat_channels({channel_mean(x), channel_max(x)})));
}

Tensor Cbam::forward(const Tensor& x) const {
    Tensor refined = mul(x, channel_gate(x));
    return mul(refined, spatial_gate(refined));
}

void Cbam::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(join_name(prefix, "fc1"), out);
    fc2.collect(join_name(prefix, "fc2"), out);
    spatial.collect(join_name(prefix, "spatial"), out);
}

Adapter::Adapter(std::int64_t dim, Rng& rng) {
    const std::int64_t hidden = (dim + 3) / 4;
    down = Linear(dim, hidden, rng);
    up = Linear(hidden, dim, rng);
    for (auto& v : up.weight.data()) v = 0.0;
}

void Adapter::collect(const std::string& prefix, ParamList& out) const {
    down.collect(join_name(prefix, "down"), out);
    up.collect(join_name(prefix, "up"), out);
}

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, int heads, Rng& rng) : heads_(heads) {
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    q = Linear(dim, dim, rng);
    k = Linear(dim, dim, rng);
    v = Linear(dim, dim, rng);
    proj = Linear(dim, dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
    if (x.ndim() != 3) throw DimensionError("attention expects tokens [N,T,d], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2), dh = d / heads_;
    if (d != q.weight.dim(0)) {
        throw DimensionError("attention: token dim " + std::to_string(d) + " != " +
                             std::to_string(q.weight.dim(0)));
    }
    auto split = [&](const Tensor& y) {
        return reshape(permute(reshape(y, {n, t, heads_, dh}), {0, 2, 1, 3}), {n * heads_, t, dh});
    };
    Tensor qh = split(q.forward(x));
    Tensor kh = split(k.forward(x));
    Tensor vh = split(v.forward(x));
    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor ctx = matmul(softmax_lastdim(scores), vh);
    Tensor merged = reshape(permute(reshape(ctx, {n, heads_, t, dh}), {0, 2, 1, 3}), {n, t, d});
    return proj.forward(merged);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
    q.collect(join_name(prefix, "q"), out);
    k.collect(join_name(prefix, "k"), out);
    v.collect(join_name(prefix, "v"), out);
    proj.collect(join_name(prefix, "proj"), out);
}

TransformerBlock::TransformerBlock(std::int64_t dim, int heads, Rng& rng)
    : norm1(dim), attn(dim, heads, rng), adapter(dim, rng), norm2(dim) {
    fc1 = Linear(dim, 4 * dim, rng);
    fc2 = Linear(4 * dim, dim, rng);
}

Tensor TransformerBlock::forward(const Tensor& x, bool adapter_enabled) const {
    Tensor y = add(x, attn.forward(norm1.forward(x)));
    Tensor z = adapter_enabled ? adapter.forward(y) : y;
    return add(z, fc2.forward(relu(fc1.forward(norm2.forward(z)))));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out, bool include_adapter) const {
    norm1.collect(join_name(prefix, "norm1"), out);
    attn.collect(join_name(prefix, "attn"), out);
    if (include_adapter) adapter.collect(join_name(prefix, "adapter"), out);
    norm2.collect(join_name(prefix, "norm2"), out);
    fc1.collect(join_name(prefix, "mlp.fc1"), out);
    fc2.collect(join_name(prefix, "mlp.fc2"), out);
}

}  // namespace msca
