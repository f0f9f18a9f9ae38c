#pragma once

#include <span>

#include "msca/metrics.hpp"
#include "msca/tensor.hpp"

namespace msca {

/// Stack masks into an [N,1,H,W] tensor of 0/1 values.
Tensor masks_to_tensor(std::span<const BinaryMask> masks);

/// Mean over pixels of max(z,0) - z*y + log(1 + exp(-|z|)).
Tensor bce_loss(const Tensor& logits, const Tensor& target);

/// Per image 1 - (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps) with p = sigmoid(z),
/// averaged over the batch.
Tensor soft_dice_loss(const Tensor& logits, const Tensor& target, double eps = 1.0);

/// alpha * BCE + (1 - alpha) * soft Dice.
Tensor total_loss(const Tensor& logits, const Tensor& target, double alpha);

}  // namespace msca
