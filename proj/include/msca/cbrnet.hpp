#pragma once

#include <array>

#include "msca/blocks.hpp"

namespace msca {

/// Stage outputs of the convolutional branch for backbone width c:
/// f1 [N,c/4,H,W], f2 [N,c/2,H/2,W/2], f3 [N,c,H/4,W/4], f4 [N,2c,H/8,W/8].
struct FeaturePyramid {
    Tensor f1, f2, f3, f4;

    const Tensor& operator[](int stage) const;  // 1-based
};

struct CbrStage {
    ResidualBlock residual;
    Cbam cbam;

    Tensor forward(const Tensor& x) const { return cbam.forward(residual.forward(x)); }
};

/// Four residual+CBAM stages. Stage 1 keeps full resolution (3 -> c/4 channels);
/// stages 2-4 halve the resolution and double the channels.
class CbrNet {
public:
    CbrNet() = default;
    CbrNet(std::int64_t width, Rng& rng);

    FeaturePyramid forward(const Tensor& image) const;
    /// Stride-2 3x3 conv 2c -> c bringing Feature 4 to the 1/16 grid of the global feature.
    Tensor align_feature4(const Tensor& f4) const;
    void collect(const std::string& prefix, ParamList& out) const;
    std::int64_t width() const { return width_; }

    std::array<CbrStage, 4> stages;
    Conv2d align4;

private:
    std::int64_t width_ = 0;
};

}  // namespace msca
