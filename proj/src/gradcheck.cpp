#include "msca/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msca {

namespace {

double reduce(const Tensor& out, const Tensor& projection) {
    if (out.numel() == 1) return out.item();
    double acc = 0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out.data()[i] * projection.data()[i];
    return acc;
}

}  // namespace

double GradcheckReport::max_rel_error() const {
    double worst = 0;
    for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
    return worst;
}

std::string GradcheckReport::summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error() << " tol=" << tol;
    std::int64_t shrunk = 0, nonsmooth = 0;
    for (const auto& p : params) {
        shrunk += p.shrunk;
        nonsmooth += p.nonsmooth;
    }
    if (shrunk || nonsmooth) os << " shrunk_steps=" << shrunk << " kink_probes=" << nonsmooth;
    for (const auto& p : params) {
        if (!p.passed) {
            os << "\n  " << p.name << "[" << p.worst_index << "] analytic=" << p.analytic
               << " numeric=" << p.numeric << " rel=" << p.max_rel_error;
        }
    }
    return os.str();
}

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                          const GradcheckOptions& options) {
    std::vector<bool> previous;
    for (auto& [name, t] : params) {
        previous.push_back(t.requires_grad());
        t.set_requires_grad(true);
        t.zero_grad();
    }

    Rng rng(options.seed);
    Tensor out = f();
    Tensor projection;
    Tensor loss = out;
    if (out.numel() != 1) {
        projection = Tensor::uniform(out.shape(), rng, -1.0, 1.0);
        loss = sum(mul(out, projection));
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    std::int64_t total = 0;
    for (auto& [name, t] : params) {
        if (t.has_grad()) {
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        } else {
            analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
        }
        total += t.numel();
    }

    // (param, element) probes in a deterministic order.
    std::vector<std::pair<std::size_t, std::int64_t>> probes;
    if (options.probes_per_param > 0) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto n = params[p].second.numel();
            if (n <= options.probes_per_param) {
                for (std::int64_t i = 0; i < n; ++i) probes.emplace_back(p, i);
                continue;
            }
            std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
            for (std::int64_t k = 0; k < options.probes_per_param; ++k) probes.emplace_back(p, pick(rng));
        }
    } else if (options.max_probes <= 0 || options.max_probes >= total) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::int64_t i = 0; i < params[p].second.numel(); ++i) probes.emplace_back(p, i);
        }
    } else {
        std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
        for (std::int64_t k = 0; k < options.max_probes; ++k) {
            std::int64_t flat = pick(rng);
            std::size_t p = 0;
            while (flat >= params[p].second.numel()) flat -= params[p++].second.numel();
            probes.emplace_back(p, flat);
        }
    }

    GradcheckReport report;
    report.tol = options.tol;
    for (auto& [name, t] : params) report.params.push_back({name});

    NoGradGuard no_grad;
    BranchRecorder branches;
    f();
    const std::uint64_t base_signature = branches.signature();
    auto evaluate = [&](double& slot, double value, double& result) {
        slot = value;
        branches.reset();
        result = reduce(f(), projection);
        return branches.signature() == base_signature;
    };
    for (auto [p, i] : probes) {
        auto data = params[p].second.data();
        const double orig = data[i];
        // A step that moves any ReLU or max across its kink is shrunk until both
        // evaluations stay on the smooth piece containing the unperturbed point.
        double h = options.h, up = 0, down = 0;
        bool smooth = false;
        for (int attempt = 0; attempt <= options.max_shrinks && !smooth; ++attempt) {
            if (attempt > 0) h /= 10.0;
            smooth = evaluate(data[i], orig + h, up) & evaluate(data[i], orig - h, down);
        }
        data[i] = orig;

        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[p][static_cast<std::size_t>(i)];
        const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
        const double rel = std::abs(a - numeric) / denom;
        auto& check = report.params[p];
        ++check.probes;
        if (!smooth) ++check.nonsmooth;
        if (h < options.h) ++check.shrunk;
        if (rel > check.max_rel_error || check.worst_index < 0) {
            check.max_rel_error = rel;
            check.worst_index = i;
            check.analytic = a;
            check.numeric = numeric;
        }
    }
    for (auto& check : report.params) {
        check.passed = check.max_rel_error <= options.tol;
        report.passed = report.passed && check.passed;
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p].second.zero_grad();
        params[p].second.set_requires_grad(previous[p]);
    }
    return report;
}

}  // namespace msca
