#pragma once

#include <optional>

#include "msca/layers.hpp"

namespace msca {

/// conv3x3(stride s) -> ReLU -> conv3x3, plus a 1x1 projection shortcut when the
/// channel count or resolution changes. No activation after the residual add.
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(std::int64_t in, std::int64_t out, int stride, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
    bool has_shortcut() const { return shortcut.has_value(); }
    int stride() const { return stride_; }

    Conv2d conv1;
    Conv2d conv2;
    std::optional<Conv2d> shortcut;

private:
    int stride_ = 1;
};

/// Convolutional block attention: channel gate from a shared MLP over avg- and
/// max-pooled descriptors, then a spatial gate from a 7x7 conv over [mean_c, max_c].
class Cbam {
public:
    Cbam() = default;
    // reduction <= 0 selects the default: 8, or 4 for fewer than 8 channels,
    // or the channel count itself for fewer than 4.
    Cbam(std::int64_t channels, Rng& rng, int reduction = 0);

    Tensor forward(const Tensor& x) const;
    Tensor channel_gate(const Tensor& x) const;  // [N,C,1,1]
    Tensor spatial_gate(const Tensor& x) const;  // [N,1,H,W]
    void collect(const std::string& prefix, ParamList& out) const;
    int reduction() const { return reduction_; }

    Linear fc1;
    Linear fc2;
    Conv2d spatial;

private:
    Tensor mlp(const Tensor& pooled) const;
    int reduction_ = 8;
};

int default_cbam_reduction(std::int64_t channels);

/// Bottleneck d -> ceil(d/4) -> ReLU -> d with a residual connection. The
/// up-projection starts at zero so a fresh adapter is the identity.
class Adapter {
public:
    Adapter() = default;
    Adapter(std::int64_t dim, Rng& rng);

    Tensor forward(const Tensor& x) const { return add(x, up.forward(relu(down.forward(x)))); }
    void collect(const std::string& prefix, ParamList& out) const;

    Linear down;
    Linear up;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::int64_t dim, int heads, Rng& rng);

    // Self-attention over tokens [N,T,d].
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
    int heads() const { return heads_; }

    Linear q, k, v, proj;

private:
    int heads_ = 1;
};

/// Pre-norm transformer block with an adapter slot between attention and MLP:
///   y = x + MHSA(LN(x)); z = adapter(y) if enabled else y; out = z + MLP(LN(z)).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(std::int64_t dim, int heads, Rng& rng);

    Tensor forward(const Tensor& x, bool adapter_enabled) const;
    void collect(const std::string& prefix, ParamList& out, bool include_adapter) const;

    LayerNorm norm1;
    MultiHeadAttention attn;
    Adapter adapter;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;
};

}  // namespace msca
