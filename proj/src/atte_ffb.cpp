#include "msca/atte_ffb.hpp"

namespace msca {

namespace {

void require_same_spatial(const Tensor& a, const Tensor& b, const char* what) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw DimensionError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor adjust_weight(const Tensor& w_attn, const Tensor& b) {
    return add(mul(w_attn, 1.0 - b), b);
}

Tensor fuse(const Tensor& f_sam, const Tensor& f_cbr, const Tensor& w_adj) {
    if (f_sam.shape() != f_cbr.shape()) {
        throw DimensionError("fuse: " + shape_str(f_sam.shape()) + " vs " + shape_str(f_cbr.shape()));
    }
    require_same_spatial(f_sam, w_adj, "fuse weight");
    if (w_adj.dim(1) != 1) throw DimensionError("fuse: weight map must have one channel");
    return add(mul(w_adj, f_sam), mul(1.0 - w_adj, f_cbr));
}

AtteFfb::AtteFfb(std::int64_t cbr_channels, std::int64_t sam_channels, Rng& rng)
    : align_conv(cbr_channels, sam_channels, 1, 1, 0, rng), beta(Tensor::scalar(0.0)) {
    for (auto& h : heads) h = Conv2d(2 * sam_channels, 1, 3, 1, 1, rng);
    beta.set_requires_grad(true);
}

Tensor AtteFfb::align(const Tensor& f_cbr_ori) const { return align_conv.forward(f_cbr_ori); }

Tensor AtteFfb::attention_weight(const Tensor& f_cbr, const Tensor& f_sam) const {
    if (f_cbr.shape() != f_sam.shape()) {
        throw DimensionError("attention_weight: " + shape_str(f_cbr.shape()) + " vs " +
                             shape_str(f_sam.shape()));
    }
    Tensor joint = concat_channels({f_cbr, f_sam});
    Tensor acc = sigmoid(heads[0].forward(joint));
    for (int k = 1; k < kHeads; ++k) acc = add(acc, sigmoid(heads[k].forward(joint)));
    return mul_scalar(acc, 1.0 / kHeads);
}

double AtteFfb::bias_value() const {
    NoGradGuard guard;
    return bias().item();
}

Tensor AtteFfb::forward(const Tensor& f_cbr_ori, const Tensor& f_sam) const {
    require_same_spatial(f_cbr_ori, f_sam, "Atte-FFB streams");
    Tensor f_cbr = align(f_cbr_ori);
    Tensor w_adj = adjust_weight(attention_weight(f_cbr, f_sam), bias());
    return fuse(f_sam, f_cbr, w_adj);
}

void AtteFfb::collect(const std::string& prefix, ParamList& out) const {
    align_conv.collect(join_name(prefix, "align"), out);
    collect_fusion_only(prefix, out);
}

void AtteFfb::collect_fusion_only(const std::string& prefix, ParamList& out) const {
    for (int k = 0; k < kHeads; ++k) heads[k].collect(join_name(prefix, "heads." + std::to_string(k)), out);
    out.push_back({join_name(prefix, "beta"), beta});
}

}  // namespace msca
