#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msca/atte_ffb.hpp"
#include "msca/blocks.hpp"
#include "msca/box.hpp"
#include "msca/cbrnet.hpp"
#include "msca/config.hpp"

namespace msca {

/// Patch-embedding vision transformer: 16x16 patches -> d-dim tokens, learned
/// positional embedding, L pre-norm blocks with adapter slots, 1x1 neck d -> c.
class ViTMini {
public:
    static constexpr int kPatch = 16;

    ViTMini() = default;
    ViTMini(int image_size, std::int64_t width, std::int64_t embed_dim, int depth, int heads, Rng& rng);

    /// [N,3,H,W] -> global feature [N,c,H/16,W/16].
    Tensor encode(const Tensor& image, bool adapters_enabled) const;
    void collect(const std::string& prefix, ParamList& out, bool include_adapters) const;
    void collect_adapters(const std::string& prefix, ParamList& out) const;
    std::int64_t tokens() const { return pos_embed.dim(0); }

    Conv2d patch_embed;
    Tensor pos_embed;  // [T,d], zero-initialized
    std::vector<TransformerBlock> blocks;
    Conv2d neck;
};

/// Box corners -> two d-dim tokens: fixed random Fourier features of the
/// normalized corner plus a learned per-corner embedding.
class PromptEncoder {
public:
    PromptEncoder() = default;
    PromptEncoder(std::int64_t embed_dim, Rng& fourier_rng, Rng& rng);

    /// [2,d] for one box in an image of size width x height.
    Tensor encode_one(const BoxPrompt& box, int image_w, int image_h) const;
    /// [N,2,d].
    Tensor encode(std::span<const BoxPrompt> boxes, int image_w, int image_h) const;
    /// Fourier features only (no learned part) of one normalized point, length d.
    std::vector<double> fourier_features(double u, double v) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor frequencies;   // [2, d/2] buffer
    Tensor corner_embed;  // [2, d]
};

/// One decoder fusion point: Atte-FFB, element-wise addition after channel
/// alignment, or a pass-through.
class FusionSite {
public:
    FusionSite() = default;
    FusionSite(FusionMode mode, std::int64_t cbr_channels, std::int64_t sam_channels, Rng& rng);

    Tensor forward(const Tensor& f_cbr_ori, const Tensor& f_sam) const;
    void collect(const std::string& prefix, ParamList& out) const;
    FusionMode mode() const { return mode_; }
    const AtteFfb* atte_ffb() const { return ffb_ ? &*ffb_ : nullptr; }

private:
    FusionMode mode_ = FusionMode::None;
    std::optional<AtteFfb> ffb_;
    std::optional<Conv2d> align_;
};

/// Cross-attention of image tokens (queries) onto the two prompt tokens, then
/// four nearest-x2 + conv3x3 + ReLU up-stages (c -> c -> c/2 -> c/4 -> c/8),
/// with skip fusion of Features 3, 2, 1 after the stages reaching H/4, H/2, H.
class MaskDecoder {
public:
    MaskDecoder() = default;
    MaskDecoder(std::int64_t width, std::int64_t embed_dim, FusionMode mode, Rng& rng, Rng& fusion_rng);

    /// Returns logits [N,1,H,W]. `f4_aligned` and `pyramid` are ignored for FusionMode::None.
    Tensor decode(const Tensor& global_feat, const Tensor& f4_aligned, const FeaturePyramid* pyramid,
                  const Tensor& prompt) const;
    void collect(const std::string& prefix, ParamList& out) const;
    void collect_backbone(const std::string& prefix, ParamList& out) const;
    void collect_fusion(const std::string& prefix, ParamList& out) const;
    FusionMode mode() const { return mode_; }

    FusionSite deep;
    LayerNorm cross_norm;
    Linear cross_q, cross_k, cross_v, cross_proj;
    std::array<Conv2d, 4> up;
    std::array<FusionSite, 3> skips;  // index 0 fuses Feature 3, 1 -> Feature 2, 2 -> Feature 1
    Conv2d head;

private:
    FusionMode mode_ = FusionMode::None;
};

}  // namespace msca
