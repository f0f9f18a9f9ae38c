#include "msca/adamw.hpp"

#include <cmath>

namespace msca {

AdamW::AdamW(const ParamList& params, AdamWOptions options) : options_(options) {
    if (!(options.lr >= 0) || !(options.weight_decay >= 0)) throw ConfigError("lr and weight decay must be >= 0");
    for (const auto& p : params) {
        if (p.buffer || !p.tensor.requires_grad()) continue;
        const auto n = static_cast<std::size_t>(p.tensor.numel());
        slots_.push_back({p.name, p.tensor, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    }
}

void AdamW::step() {
    for (const auto& s : slots_) {
        if (!s.param.has_grad()) continue;
        const auto g = s.param.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericalError("non-finite gradient in " + s.name + " at index " + std::to_string(i));
            }
        }
    }
    ++t_;
    const auto& o = options_;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
    const double shrink = 1.0 - o.lr * o.weight_decay;
    for (auto& s : slots_) {
        auto theta = s.param.data();
        const bool has = s.param.has_grad();
        const auto g = s.param.grad();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            s.m[i] = o.beta1 * s.m[i] + (1.0 - o.beta1) * gi;
            s.v[i] = o.beta2 * s.v[i] + (1.0 - o.beta2) * gi * gi;
            theta[i] *= shrink;
            theta[i] -= o.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + o.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace msca
