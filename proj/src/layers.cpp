#include "msca/layers.hpp"

#include <cmath>

namespace msca {

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng)
    : stride_(stride), padding_(padding) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    weight = Tensor::randn({out, in, kernel, kernel}, rng, std::sqrt(2.0 / fan_in));
    bias = Tensor::zeros({out});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({join_name(prefix, "weight"), weight});
    out.push_back({join_name(prefix, "bias"), bias});
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng) {
    weight = Tensor::randn({in, out}, rng, std::sqrt(1.0 / static_cast<double>(in)));
    bias = Tensor::zeros({out});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({join_name(prefix, "weight"), weight});
    out.push_back({join_name(prefix, "bias"), bias});
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma(Tensor::ones({dim})), beta(Tensor::zeros({dim})) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({join_name(prefix, "weight"), gamma});
    out.push_back({join_name(prefix, "bias"), beta});
}

void set_trainable(const ParamList& params, bool on) {
    for (const auto& p : params) {
        if (!p.buffer) {
            Tensor t = p.tensor;
            t.set_requires_grad(on);
        }
    }
}

}  // namespace msca
