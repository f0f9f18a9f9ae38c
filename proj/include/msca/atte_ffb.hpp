#pragma once

#include <array>

#include "msca/layers.hpp"

namespace msca {

/// W_adj = W_attn * (1 - b) + b. `b` is a scalar tensor (rank 0) in (0, 1).
Tensor adjust_weight(const Tensor& w_attn, const Tensor& b);

/// F_fused = W_adj * F_SAM + (1 - W_adj) * F_CBR, W_adj broadcast over channels.
Tensor fuse(const Tensor& f_sam, const Tensor& f_cbr, const Tensor& w_adj);

/// Attention-enhanced fusion of a convolutional-branch feature (C1 channels)
/// into a decoder feature (C2 channels) at matching resolution.
class AtteFfb {
public:
    static constexpr int kHeads = 4;

    AtteFfb() = default;
    AtteFfb(std::int64_t cbr_channels, std::int64_t sam_channels, Rng& rng);

    /// 1x1 conv C1 -> C2.
    Tensor align(const Tensor& f_cbr_ori) const;
    /// Mean over four sigmoid(conv3x3) heads of concat(F_CBR, F_SAM); [N,1,H,W].
    Tensor attention_weight(const Tensor& f_cbr, const Tensor& f_sam) const;
    /// sigmoid(beta), rank 0.
    Tensor bias() const { return sigmoid(beta); }
    double bias_value() const;

    Tensor forward(const Tensor& f_cbr_ori, const Tensor& f_sam) const;

    void collect(const std::string& prefix, ParamList& out) const;
    /// Parameters that exist only for attention fusion (heads and beta, not the alignment conv).
    void collect_fusion_only(const std::string& prefix, ParamList& out) const;

    Conv2d align_conv;
    std::array<Conv2d, kHeads> heads;
    Tensor beta;
};

}  // namespace msca
