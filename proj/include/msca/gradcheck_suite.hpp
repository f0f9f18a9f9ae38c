#pragma once

#include <optional>
#include <string>
#include <vector>

namespace msca {

/// Aggregate over seeds of one named gradient check.
struct SuiteCase {
    std::string module;
    std::string name;
    int seeds = 0;
    double tol = 0.0;
    double max_rel_error = 0.0;
    bool passed = true;
    std::int64_t probes = 0;
    std::int64_t shrunk = 0;     // probes evaluated with a reduced step near a kink
    std::int64_t nonsmooth = 0;  // probes that still straddled a kink
    std::string detail;  // first failing report, if any
};

/// Groups accepted by run_gradcheck_suite besides "all".
std::vector<std::string> gradcheck_modules();

/// Central-difference checks of every primitive op, every composite block and the
/// full model (total loss at S=32, c=16, d=32, L=2). Default tolerance is 1e-4
/// for ops and blocks and 1e-3 for the model.
std::vector<SuiteCase> run_gradcheck_suite(const std::string& module = "all", int seeds = 20,
                                           std::optional<double> tol = std::nullopt);

}  // namespace msca
