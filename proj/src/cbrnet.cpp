#include "msca/cbrnet.hpp"

namespace msca {

const Tensor& FeaturePyramid::operator[](int stage) const {
    switch (stage) {
        case 1: return f1;
        case 2: return f2;
        case 3: return f3;
        case 4: return f4;
        default: throw DimensionError("feature pyramid has stages 1-4");
    }
}

CbrNet::CbrNet(std::int64_t width, Rng& rng) : width_(width) {
    if (width < 4 || width % 4 != 0) throw ConfigError("CBR-Net width must be a positive multiple of 4");
    std::int64_t channels = width / 4;
    stages[0] = {ResidualBlock(3, channels, 1, rng), Cbam(channels, rng)};
    for (std::size_t i = 1; i < stages.size(); ++i) {
        stages[i] = {ResidualBlock(channels, 2 * channels, 2, rng), Cbam(2 * channels, rng)};
        channels *= 2;
    }
    align4 = Conv2d(2 * width, width, 3, 2, 1, rng);
}

FeaturePyramid CbrNet::forward(const Tensor& image) const {
    if (image.ndim() != 4 || image.dim(1) != 3) {
        throw DimensionError("CBR-Net expects [N,3,H,W], got " + shape_str(image.shape()));
    }
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0 || image.dim(2) < 16 || image.dim(3) < 16) {
        throw DimensionError("CBR-Net input H and W must be >= 16 and divisible by 8, got " +
                             shape_str(image.shape()));
    }
    FeaturePyramid p;
    p.f1 = stages[0].forward(image);
    p.f2 = stages[1].forward(p.f1);
    p.f3 = stages[2].forward(p.f2);
    p.f4 = stages[3].forward(p.f3);
    return p;
}

Tensor CbrNet::align_feature4(const Tensor& f4) const {
    if (f4.ndim() != 4 || f4.dim(2) % 2 != 0 || f4.dim(3) % 2 != 0) {
        throw DimensionError("align_feature4 needs even spatial size, got " + shape_str(f4.shape()));
    }
    return align4.forward(f4);
}

void CbrNet::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const std::string stage = join_name(prefix, "stage" + std::to_string(i + 1));
        stages[i].residual.collect(stage, out);
        stages[i].cbam.collect(join_name(stage, "cbam"), out);
    }
    align4.collect(join_name(prefix, "align4"), out);
}

}  // namespace msca
