#include "msca/backbone.hpp"

#include <cmath>
#include <numbers>

namespace msca {

namespace {

// [N,C,h,w] <-> [N,h*w,C]
Tensor to_tokens(const Tensor& x) {
    const std::int64_t n = x.dim(0), c = x.dim(1), t = x.dim(2) * x.dim(3);
    return permute(reshape(x, {n, c, t}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w) {
    const std::int64_t n = tokens.dim(0), c = tokens.dim(2);
    return reshape(permute(tokens, {0, 2, 1}), {n, c, h, w});
}

}  // namespace

ViTMini::ViTMini(int image_size, std::int64_t width, std::int64_t embed_dim, int depth, int heads, Rng& rng) {
    if (image_size % kPatch != 0) throw ConfigError("ViT image size must be divisible by 16");
    const std::int64_t grid = image_size / kPatch;
    patch_embed = Conv2d(3, embed_dim, kPatch, kPatch, 0, rng);
    pos_embed = Tensor::zeros({grid * grid, embed_dim});
    pos_embed.set_requires_grad(true);
    blocks.reserve(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) blocks.emplace_back(embed_dim, heads, rng);
    neck = Conv2d(embed_dim, width, 1, 1, 0, rng);
}

Tensor ViTMini::encode(const Tensor& image, bool adapters_enabled) const {
    if (image.ndim() != 4 || image.dim(1) != 3) {
        throw DimensionError("ViT expects [N,3,H,W], got " + shape_str(image.shape()));
    }
    if (image.dim(2) % kPatch != 0 || image.dim(3) % kPatch != 0) {
        throw DimensionError("ViT input H and W must be divisible by 16, got " + shape_str(image.shape()));
    }
    const std::int64_t gh = image.dim(2) / kPatch, gw = image.dim(3) / kPatch;
    if (gh * gw != tokens()) {
        throw DimensionError("ViT built for " + std::to_string(tokens()) + " tokens, input gives " +
                             std::to_string(gh * gw));
    }
    Tensor x = add(to_tokens(patch_embed.forward(image)), pos_embed);
    for (const auto& blk : blocks) x = blk.forward(x, adapters_enabled);
    return neck.forward(from_tokens(x, gh, gw));
}

void ViTMini::collect(const std::string& prefix, ParamList& out, bool include_adapters) const {
    patch_embed.collect(join_name(prefix, "patch_embed"), out);
    out.push_back({join_name(prefix, "pos_embed"), pos_embed});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect(join_name(prefix, "blocks." + std::to_string(i)), out, include_adapters);
    }
    neck.collect(join_name(prefix, "neck"), out);
}

void ViTMini::collect_adapters(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].adapter.collect(join_name(prefix, "blocks." + std::to_string(i) + ".adapter"), out);
    }
}

PromptEncoder::PromptEncoder(std::int64_t embed_dim, Rng& fourier_rng, Rng& rng) {
    if (embed_dim % 2 != 0) throw ConfigError("prompt embedding dim must be even");
    frequencies = Tensor::randn({2, embed_dim / 2}, fourier_rng);
    corner_embed = Tensor::randn({2, embed_dim}, rng);
    corner_embed.set_requires_grad(true);
}

std::vector<double> PromptEncoder::fourier_features(double u, double v) const {
    const std::int64_t half = frequencies.dim(1);
    const double qx = 2.0 * u - 1.0, qy = 2.0 * v - 1.0;
    std::vector<double> out(static_cast<std::size_t>(2 * half));
    for (std::int64_t j = 0; j < half; ++j) {
        const double z = 2.0 * std::numbers::pi * (qx * frequencies.data()[j] + qy * frequencies.data()[half + j]);
        out[j] = std::sin(z);
        out[half + j] = std::cos(z);
    }
    return out;
}

Tensor PromptEncoder::encode_one(const BoxPrompt& box, int image_w, int image_h) const {
    return reshape(encode(std::span<const BoxPrompt>(&box, 1), image_w, image_h), {2, corner_embed.dim(1)});
}

Tensor PromptEncoder::encode(std::span<const BoxPrompt> boxes, int image_w, int image_h) const {
    const std::int64_t d = corner_embed.dim(1);
    const auto n = static_cast<std::int64_t>(boxes.size());
    if (n == 0) throw ValidationError("no box prompts supplied");
    std::vector<double> feats;
    feats.reserve(static_cast<std::size_t>(n * 2 * d));
    for (const auto& box : boxes) {
        box.validate(image_w, image_h);
        for (auto [x, y] : {std::pair{box.x0, box.y0}, std::pair{box.x1, box.y1}}) {
            auto f = fourier_features(static_cast<double>(x) / image_w, static_cast<double>(y) / image_h);
            feats.insert(feats.end(), f.begin(), f.end());
        }
    }
    return add(Tensor({n, 2, d}, std::move(feats)), corner_embed);
}

void PromptEncoder::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({join_name(prefix, "frequencies"), frequencies, true});
    out.push_back({join_name(prefix, "corner_embed"), corner_embed});
}

FusionSite::FusionSite(FusionMode mode, std::int64_t cbr_channels, std::int64_t sam_channels, Rng& rng)
    : mode_(mode) {
    if (mode == FusionMode::AtteFFB) ffb_.emplace(cbr_channels, sam_channels, rng);
    if (mode == FusionMode::Add) align_.emplace(cbr_channels, sam_channels, 1, 1, 0, rng);
}

Tensor FusionSite::forward(const Tensor& f_cbr_ori, const Tensor& f_sam) const {
    switch (mode_) {
        case FusionMode::AtteFFB: return ffb_->forward(f_cbr_ori, f_sam);
        case FusionMode::Add: {
            Tensor aligned = align_->forward(f_cbr_ori);
            if (aligned.shape() != f_sam.shape()) {
                throw DimensionError("additive fusion: " + shape_str(aligned.shape()) + " vs " +
                                     shape_str(f_sam.shape()));
            }
            return add(f_sam, aligned);
        }
        case FusionMode::None: return f_sam;
    }
    return f_sam;
}

void FusionSite::collect(const std::string& prefix, ParamList& out) const {
    if (ffb_) ffb_->collect(prefix, out);
    if (align_) align_->collect(join_name(prefix, "align"), out);
}

MaskDecoder::MaskDecoder(std::int64_t width, std::int64_t embed_dim, FusionMode mode, Rng& rng, Rng& fusion_rng)
    : cross_norm(width), mode_(mode) {
    const std::int64_t c = width;
    cross_q = Linear(c, c, rng);
    cross_k = Linear(embed_dim, c, rng);
    cross_v = Linear(embed_dim, c, rng);
    cross_proj = Linear(c, c, rng);
    const std::array<std::int64_t, 5> plan{c, c, c / 2, c / 4, c / 8};
    for (std::size_t i = 0; i < up.size(); ++i) up[i] = Conv2d(plan[i], plan[i + 1], 3, 1, 1, rng);
    head = Conv2d(c / 8, 1, 1, 1, 0, rng);

    deep = FusionSite(mode, c, c, fusion_rng);
    // Feature 3 [c], Feature 2 [c/2], Feature 1 [c/4] meet decoder widths c/2, c/4, c/8.
    skips[0] = FusionSite(mode, c, c / 2, fusion_rng);
    skips[1] = FusionSite(mode, c / 2, c / 4, fusion_rng);
    skips[2] = FusionSite(mode, c / 4, c / 8, fusion_rng);
}

Tensor MaskDecoder::decode(const Tensor& global_feat, const Tensor& f4_aligned, const FeaturePyramid* pyramid,
                           const Tensor& prompt) const {
    if (global_feat.ndim() != 4 || global_feat.dim(1) != cross_q.weight.dim(0)) {
        throw DimensionError("decoder global feature must be [N," + std::to_string(cross_q.weight.dim(0)) +
                             ",h,w], got " + shape_str(global_feat.shape()));
    }
    const std::int64_t n = global_feat.dim(0), h = global_feat.dim(2), w = global_feat.dim(3);
    if (prompt.ndim() != 3 || prompt.dim(0) != n || prompt.dim(1) != 2) {
        throw DimensionError("decoder prompt must be [N,2,d], got " + shape_str(prompt.shape()));
    }
    const bool fused = mode_ != FusionMode::None;
    if (fused && (!pyramid || !f4_aligned.defined())) {
        throw DimensionError("decoder in fusion mode " + to_string(mode_) + " needs the feature pyramid");
    }

    Tensor x = fused ? deep.forward(f4_aligned, global_feat) : global_feat;

    Tensor tokens = to_tokens(x);
    Tensor q = cross_q.forward(cross_norm.forward(tokens));
    Tensor k = cross_k.forward(prompt);
    Tensor v = cross_v.forward(prompt);
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
    Tensor attn = softmax_lastdim(mul_scalar(matmul(q, transpose_last2(k)), scale));
    tokens = add(tokens, cross_proj.forward(matmul(attn, v)));
    x = from_tokens(tokens, h, w);

    for (std::size_t i = 0; i < up.size(); ++i) {
        x = relu(up[i].forward(upsample_nearest2x(x)));
        if (fused && i >= 1) {
            const int stage = 4 - static_cast<int>(i);  // i=1 -> Feature 3 ... i=3 -> Feature 1
            x = skips[i - 1].forward((*pyramid)[stage], x);
        }
    }
    return head.forward(x);
}

void MaskDecoder::collect_backbone(const std::string& prefix, ParamList& out) const {
    cross_norm.collect(join_name(prefix, "cross_attn.norm"), out);
    cross_q.collect(join_name(prefix, "cross_attn.q"), out);
    cross_k.collect(join_name(prefix, "cross_attn.k"), out);
    cross_v.collect(join_name(prefix, "cross_attn.v"), out);
    cross_proj.collect(join_name(prefix, "cross_attn.proj"), out);
    for (std::size_t i = 0; i < up.size(); ++i) up[i].collect(join_name(prefix, "up" + std::to_string(i + 1)), out);
    head.collect(join_name(prefix, "head"), out);
}

void MaskDecoder::collect_fusion(const std::string& prefix, ParamList& out) const {
    deep.collect(join_name(prefix, "deep_fuse"), out);
    skips[0].collect(join_name(prefix, "skip3"), out);
    skips[1].collect(join_name(prefix, "skip2"), out);
    skips[2].collect(join_name(prefix, "skip1"), out);
}

void MaskDecoder::collect(const std::string& prefix, ParamList& out) const {
    collect_backbone(prefix, out);
    collect_fusion(prefix, out);
}

}  // namespace msca
