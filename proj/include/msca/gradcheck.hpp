#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msca/tensor.hpp"

namespace msca {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradcheckOptions {
    double h = 1e-3;
    double tol = 1e-4;
    // Total number of probed elements across all parameters; 0 probes every element.
    std::int64_t max_probes = 0;
    // When positive, overrides max_probes: this many random elements of every parameter.
    std::int64_t probes_per_param = 0;
    std::uint64_t seed = 0;
    // Relative error is |a - n| / max(|a|, |n|, denom_floor).
    double denom_floor = 1e-6;
    // Step reductions (by 10x) allowed when a step crosses a ReLU/max kink.
    int max_shrinks = 3;
};

struct ParamCheck {
    std::string name;
    std::int64_t probes = 0;
    std::int64_t shrunk = 0;     // probes whose step had to be reduced
    std::int64_t nonsmooth = 0;  // probes still crossing a kink at the smallest step
    double max_rel_error = 0.0;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = true;
};

struct GradcheckReport {
    std::vector<ParamCheck> params;
    double tol = 0.0;
    bool passed = true;

    double max_rel_error() const;
    std::string summary() const;
};

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h.
/// Non-scalar outputs are reduced with a fixed random projection before differencing.
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                          const GradcheckOptions& options = {});

}  // namespace msca
