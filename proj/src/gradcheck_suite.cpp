#include "msca/gradcheck_suite.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <numeric>

#include "msca/atte_ffb.hpp"
#include "msca/blocks.hpp"
#include "msca/gradcheck.hpp"
#include "msca/loss.hpp"
#include "msca/model.hpp"
#include "msca/random.hpp"

namespace msca {

namespace {

struct Problem {
    std::function<Tensor()> f;
    std::vector<NamedTensor> params;
};

using Builder = std::function<Problem(Rng&)>;

struct CaseSpec {
    std::string module;
    std::string name;
    Builder build;
    bool model = false;
};

Tensor rnd(Shape s, Rng& rng) { return Tensor::uniform(std::move(s), rng, -1.0, 1.0); }

// Entries bounded away from zero so ReLU-type kinks stay out of reach of the step.
Tensor away(Shape s, Rng& rng, double margin = 0.05) {
    Tensor t = rnd(std::move(s), rng);
    for (auto& v : t.data()) v = v >= 0 ? v + margin : v - margin;
    return t;
}

// Pairwise distinct entries (spacing 0.02), so maxima are unique.
Tensor distinct(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    std::vector<double> v(static_cast<std::size_t>(t.numel()));
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng);
    for (std::size_t i = 0; i < v.size(); ++i) t.data()[i] = (v[i] - v.size() / 2.0) * 0.02;
    return t;
}

std::vector<NamedTensor> named(const ParamList& list) {
    std::vector<NamedTensor> out;
    for (const auto& p : list) {
        if (!p.buffer) out.emplace_back(p.name, p.tensor);
    }
    return out;
}

Problem unary(Tensor x, std::function<Tensor(const Tensor&)> op) {
    return {[x, op] { return op(x); }, {{"x", x}}};
}

Problem binary(Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    return {[a, b, op] { return op(a, b); }, {{"a", a}, {"b", b}}};
}

std::vector<CaseSpec> primitive_cases() {
    const std::string m = "primitives";
    std::vector<CaseSpec> c;
    auto conv = [&](std::string name, Shape xs, Shape ws, int stride, int pad) {
        c.push_back({m, name, [=](Rng& r) {
                         Tensor x = rnd(xs, r), w = rnd(ws, r), b = rnd({ws[0]}, r);
                         return Problem{[=] { return conv2d(x, w, b, stride, pad); }, {{"x", x}, {"w", w}, {"b", b}}};
                     }});
    };
    conv("conv2d_3x3", {2, 3, 5, 6}, {4, 3, 3, 3}, 1, 1);
    conv("conv2d_3x3_stride2", {2, 3, 6, 7}, {4, 3, 3, 3}, 2, 1);
    conv("conv2d_1x1", {2, 3, 4, 4}, {5, 3, 1, 1}, 1, 0);
    conv("conv2d_patch", {1, 2, 8, 8}, {3, 2, 4, 4}, 4, 0);
    conv("conv2d_7x7", {1, 2, 6, 6}, {1, 2, 7, 7}, 1, 3);
    c.push_back({m, "relu", [](Rng& r) { return unary(away({2, 3, 4}, r), relu); }});
    c.push_back({m, "sigmoid", [](Rng& r) { return unary(rnd({2, 3, 4}, r) * 4.0, sigmoid); }});
    c.push_back({m, "add_broadcast", [](Rng& r) { return binary(rnd({2, 3, 4}, r), rnd({3, 1}, r), add); }});
    c.push_back({m, "sub_broadcast", [](Rng& r) { return binary(rnd({2, 1, 4}, r), rnd({3, 4}, r), sub); }});
    c.push_back({m, "mul_broadcast", [](Rng& r) { return binary(rnd({2, 3, 4}, r), rnd({1, 3, 1}, r), mul); }});
    c.push_back({m, "div_broadcast", [](Rng& r) {
                     return binary(rnd({2, 3}, r), Tensor::uniform({3}, r, 0.5, 1.5), div);
                 }});
    c.push_back({m, "scalar_ops", [](Rng& r) {
                     return unary(rnd({3, 4}, r), [](const Tensor& x) { return 2.0 - (x * 3.0 + 0.5); });
                 }});
    c.push_back({m, "concat", [](Rng& r) {
                     Tensor a = rnd({2, 1, 3}, r), b = rnd({2, 2, 3}, r), d = rnd({2, 3, 1}, r);
                     return Problem{[=] { return concat({concat({a, b}, 1), d}, 2); }, {{"a", a}, {"b", b}, {"d", d}}};
                 }});
    c.push_back({m, "matmul", [](Rng& r) { return binary(rnd({2, 3, 4}, r), rnd({4, 5}, r), matmul); }});
    c.push_back({m, "matmul_batched", [](Rng& r) { return binary(rnd({2, 3, 4}, r), rnd({2, 4, 5}, r), matmul); }});
    c.push_back({m, "softmax", [](Rng& r) { return unary(rnd({2, 3, 5}, r) * 2.0, softmax_lastdim); }});
    c.push_back({m, "layernorm", [](Rng& r) {
                     Tensor x = rnd({2, 3, 6}, r), g = rnd({6}, r), b = rnd({6}, r);
                     return Problem{[=] { return layernorm_lastdim(x, g, b); }, {{"x", x}, {"gamma", g}, {"beta", b}}};
                 }});
    c.push_back({m, "sum", [](Rng& r) { return unary(rnd({2, 3}, r), [](const Tensor& x) { return sum(x * x); }); }});
    c.push_back({m, "mean", [](Rng& r) { return unary(rnd({2, 3}, r), [](const Tensor& x) { return mean(x * x); }); }});
    c.push_back({m, "sum_lastdim", [](Rng& r) { return unary(rnd({2, 3, 4}, r), sum_lastdim); }});
    c.push_back({m, "max_pool2d", [](Rng& r) { return unary(distinct({2, 2, 4, 6}, r), max_pool2d); }});
    c.push_back({m, "global_avg_pool", [](Rng& r) { return unary(rnd({2, 3, 4, 5}, r), global_avg_pool); }});
    c.push_back({m, "global_max_pool", [](Rng& r) { return unary(distinct({2, 3, 4, 5}, r), global_max_pool); }});
    c.push_back({m, "channel_mean", [](Rng& r) { return unary(rnd({2, 3, 4, 5}, r), channel_mean); }});
    c.push_back({m, "channel_max", [](Rng& r) { return unary(distinct({2, 3, 4, 5}, r), channel_max); }});
    c.push_back({m, "upsample_nearest2x", [](Rng& r) { return unary(rnd({2, 2, 3, 4}, r), upsample_nearest2x); }});
    c.push_back({m, "pad2d", [](Rng& r) {
                     return unary(rnd({1, 2, 3, 4}, r), [](const Tensor& x) { return pad2d(x, 2); });
                 }});
    c.push_back({m, "reshape", [](Rng& r) {
                     return unary(rnd({2, 3, 4}, r), [](const Tensor& x) { return reshape(x, {4, 6}) * reshape(x, {4, 6}); });
                 }});
    c.push_back({m, "permute", [](Rng& r) {
                     return unary(rnd({2, 3, 4, 5}, r), [](const Tensor& x) { return permute(x, {2, 0, 3, 1}); });
                 }});
    c.push_back({m, "transpose_last2", [](Rng& r) { return unary(rnd({2, 3, 4}, r), transpose_last2); }});
    c.push_back({m, "bce_with_logits", [](Rng& r) {
                     Tensor z = rnd({2, 1, 3, 3}, r) * 5.0;
                     Tensor y({2, 1, 3, 3});
                     std::bernoulli_distribution coin(0.5);
                     for (auto& v : y.data()) v = coin(r) ? 1.0 : 0.0;
                     return Problem{[=] { return bce_with_logits(z, y); }, {{"logits", z}}};
                 }});
    return c;
}

// Replaces zero-initialized weights so every path carries gradient.
void randomize(const ParamList& params, Rng& rng, const std::string& needle) {
    for (const auto& p : params) {
        if (p.name.find(needle) == std::string::npos) continue;
        Tensor t = p.tensor;
        for (auto& v : t.data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
}

std::vector<CaseSpec> block_cases() {
    std::vector<CaseSpec> c;
    auto residual = [&](std::string name, int in, int out, int stride) {
        c.push_back({"residual", name, [=](Rng& r) {
                         auto block = std::make_shared<ResidualBlock>(in, out, stride, r);
                         Tensor x = rnd({2, in, 6, 6}, r);
                         ParamList ps;
                         block->collect("block", ps);
                         auto params = named(ps);
                         params.emplace_back("input", x);
                         return Problem{[block, x] { return block->forward(x); }, params};
                     }});
    };
    residual("residual_block", 4, 4, 1);
    residual("residual_block_stride2", 4, 8, 2);
    c.push_back({"cbam", "cbam", [](Rng& r) {
                     auto block = std::make_shared<Cbam>(8, r);
                     Tensor x = rnd({2, 8, 5, 5}, r);
                     ParamList ps;
                     block->collect("cbam", ps);
                     auto params = named(ps);
                     params.emplace_back("input", x);
                     return Problem{[block, x] { return block->forward(x); }, params};
                 }});
    c.push_back({"adapter", "adapter", [](Rng& r) {
                     auto block = std::make_shared<Adapter>(8, r);
                     Tensor x = rnd({2, 3, 8}, r);
                     ParamList ps;
                     block->collect("adapter", ps);
                     randomize(ps, r, "up");
                     auto params = named(ps);
                     params.emplace_back("input", x);
                     return Problem{[block, x] { return block->forward(x); }, params};
                 }});
    for (bool with_adapter : {false, true}) {
        c.push_back({"transformer", with_adapter ? "transformer_block_adapter" : "transformer_block",
                     [with_adapter](Rng& r) {
                         auto block = std::make_shared<TransformerBlock>(8, 2, r);
                         Tensor x = rnd({2, 5, 8}, r);
                         ParamList ps;
                         block->collect("block", ps, with_adapter);
                         randomize(ps, r, "adapter.up");
                         auto params = named(ps);
                         params.emplace_back("input", x);
                         return Problem{[block, x, with_adapter] { return block->forward(x, with_adapter); }, params};
                     }});
    }
    c.push_back({"atteffb", "atte_ffb", [](Rng& r) {
                     auto block = std::make_shared<AtteFfb>(6, 4, r);
                     block->beta.data()[0] = std::uniform_real_distribution<double>(-2.0, 2.0)(r);
                     Tensor cbr = rnd({2, 6, 4, 4}, r), sam = rnd({2, 4, 4, 4}, r);
                     ParamList ps;
                     block->collect("atte_ffb", ps);
                     auto params = named(ps);
                     params.emplace_back("f_cbr", cbr);
                     params.emplace_back("f_sam", sam);
                     return Problem{[block, cbr, sam] { return block->forward(cbr, sam); }, params};
                 }});
    return c;
}

CaseSpec model_case() {
    return {"model", "full_model_total_loss",
            [](Rng& r) {
                ModelConfig cfg;
                cfg.image_size = 32;
                cfg.width = 16;
                cfg.embed_dim = 32;
                cfg.depth = 2;
                cfg.heads = 2;
                cfg.seed = r();
                auto model = std::make_shared<Model>(cfg);
                const ParamList ps = model->parameters();
                randomize(ps, r, "adapter.up");
                for (const auto& p : ps) {
                    if (p.name.size() > 5 && p.name.ends_with(".beta") && p.tensor.numel() == 1) {
                        Tensor t = p.tensor;
                        t.data()[0] = std::uniform_real_distribution<double>(-1.0, 1.0)(r);
                    }
                }
                Tensor images = Tensor::uniform({2, 3, 32, 32}, r, 0.0, 1.0);
                std::vector<BoxPrompt> boxes{{4, 6, 20, 25}, {10, 3, 30, 18}};
                Tensor target({2, 1, 32, 32});
                for (int n = 0; n < 2; ++n) {
                    const auto& b = boxes[static_cast<std::size_t>(n)];
                    for (int y = b.y0 + 2; y < b.y1 - 2; ++y) {
                        for (int x = b.x0 + 2; x < b.x1 - 2; ++x) target.data()[(n * 32 + y) * 32 + x] = 1.0;
                    }
                }
                auto params = named(ps);
                params.emplace_back("images", images);
                return Problem{[model, images, boxes, target] {
                                   return total_loss(model->forward(images, boxes), target, 0.5);
                               },
                               params};
            },
            true};
}

std::vector<CaseSpec> all_cases() {
    auto c = primitive_cases();
    for (auto& b : block_cases()) c.push_back(std::move(b));
    c.push_back(model_case());
    return c;
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
    return {"primitives", "residual", "cbam", "adapter", "transformer", "atteffb", "model"};
}

std::vector<SuiteCase> run_gradcheck_suite(const std::string& module, int seeds, std::optional<double> tol) {
    const auto modules = gradcheck_modules();
    if (module != "all" && std::find(modules.begin(), modules.end(), module) == modules.end()) {
        throw ConfigError("unknown gradcheck module '" + module + "'");
    }
    if (seeds < 1) throw ConfigError("gradcheck needs at least one seed");
    std::vector<SuiteCase> out;
    std::uint64_t case_index = 0;
    for (const auto& spec : all_cases()) {
        ++case_index;
        if (module != "all" && spec.module != module) continue;
        SuiteCase result{spec.module, spec.name, seeds, tol.value_or(spec.model ? 1e-3 : 1e-4), 0.0, true, 0, 0, 0, {}};
        for (int s = 0; s < seeds; ++s) {
            Rng rng(derive_seed(case_index, static_cast<std::uint64_t>(s)));
            Problem p = spec.build(rng);
            GradcheckOptions opts;
            opts.tol = result.tol;
            opts.seed = derive_seed(case_index, static_cast<std::uint64_t>(s), 1);
            opts.h = spec.model ? 1e-5 : 1e-4;
            if (spec.model) opts.probes_per_param = 2;
            const auto report = gradcheck(p.f, p.params, opts);
            result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error());
            for (const auto& pc : report.params) {
                result.probes += pc.probes;
                result.shrunk += pc.shrunk;
                result.nonsmooth += pc.nonsmooth;
            }
            if (!report.passed && (result.passed || std::getenv("MSCA_GRADCHECK_VERBOSE"))) {
                result.passed = false;
                result.detail += "seed " + std::to_string(s) + ": " + report.summary();
            }
        }
        out.push_back(std::move(result));
    }
    return out;
}

}  // namespace msca
