#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msca/layers.hpp"

namespace msca {

struct AdamWOptions {
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// AdamW with decoupled weight decay: theta <- theta - lr*wd*theta, then the
/// bias-corrected Adam step. Parameters without a gradient are treated as g = 0.
class AdamW {
public:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamW(const ParamList& params, AdamWOptions options);

    /// Throws NumericalError naming the first parameter with a non-finite gradient,
    /// before any parameter is modified.
    void step();
    void zero_grad();

    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    const AdamWOptions& options() const { return options_; }

private:
    std::vector<Slot> slots_;
    AdamWOptions options_;
    std::int64_t t_ = 0;
};

}  // namespace msca
