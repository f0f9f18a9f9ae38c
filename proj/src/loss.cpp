#include "msca/loss.hpp"

#include <algorithm>

namespace msca {

namespace {

void require_pair(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape()) {
        throw DimensionError("loss operands differ: " + shape_str(logits.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    if (logits.ndim() < 1) throw DimensionError("loss needs a batch axis");
    for (double v : target.data()) {
        if (v != 0.0 && v != 1.0) throw ValidationError("targets must be 0 or 1");
    }
}

}  // namespace

Tensor masks_to_tensor(std::span<const BinaryMask> masks) {
    if (masks.empty()) throw ValidationError("no masks to stack");
    const int h = masks[0].height(), w = masks[0].width();
    Tensor out({static_cast<std::int64_t>(masks.size()), 1, h, w});
    auto dst = out.data().begin();
    for (const auto& m : masks) {
        if (m.height() != h || m.width() != w) throw DimensionError("masks in a batch must share a size");
        dst = std::transform(m.values().begin(), m.values().end(), dst, [](std::uint8_t v) { return double(v); });
    }
    return out;
}

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
    require_pair(logits, target);
    return bce_with_logits(logits, target);
}

Tensor soft_dice_loss(const Tensor& logits, const Tensor& target, double eps) {
    require_pair(logits, target);
    const auto n = logits.dim(0);
    const auto per = logits.numel() / n;
    const Tensor p = reshape(sigmoid(logits), {n, per});
    const Tensor y = reshape(target, {n, per});
    const Tensor inter = sum_lastdim(p * y);
    const Tensor denom = add_scalar(sum_lastdim(p) + sum_lastdim(y), eps);
    return 1.0 - mean(add_scalar(inter * 2.0, eps) / denom);
}

Tensor total_loss(const Tensor& logits, const Tensor& target, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
    if (alpha == 1.0) return bce_loss(logits, target);
    if (alpha == 0.0) return soft_dice_loss(logits, target);
    return bce_loss(logits, target) * alpha + soft_dice_loss(logits, target) * (1.0 - alpha);
}

}  // namespace msca
