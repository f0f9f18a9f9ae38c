// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails.
#include <CLI11.hpp>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "msca/atte_ffb.hpp"
#include "msca/cbrnet.hpp"
#include "msca/dataset.hpp"
#include "msca/gradcheck_suite.hpp"
#include "msca/metrics.hpp"
#include "msca/model.hpp"
#include "msca/preprocess.hpp"
#include "msca/random.hpp"
#include "msca/trainer.hpp"

using namespace msca;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BinaryMask random_mask(Rng& rng, int w, int h, double density) {
    BinaryMask m(w, h);
    std::bernoulli_distribution on(density);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, on(rng));
    return m;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = run_gradcheck_suite("all", 20);
    const double secs = seconds_since(t0);
    std::map<std::string, double> worst;
    std::set<std::string> required{"residual_block", "cbam", "transformer_block", "transformer_block_adapter",
                                   "atte_ffb", "full_model_total_loss"};
    for (const auto& c : cases) {
        worst[c.module] = std::max(worst[c.module], c.max_rel_error);
        o.require(c.passed, c.name + " max rel error " + fmt("%.3g", c.max_rel_error));
        o.require(c.seeds >= 20, c.name + " ran fewer than 20 seeds");
        o.require(c.tol <= (c.module == "model" ? 1e-3 : 1e-4), c.name + " tolerance too loose");
        required.erase(c.name);
    }
    for (const auto& r : required) o.require(false, "missing case " + r);
    o.require(secs <= 600, "runtime " + fmt("%.0f s", secs));
    std::ostringstream os;
    os << cases.size() << " cases x 20 seeds in " << fmt("%.0f", secs) << " s; worst";
    for (const auto& [m, e] : worst) os << " " << m << "=" << fmt("%.2e", e);
    if (o.pass) o.detail = os.str();
    else o.detail = os.str() + "; " + o.detail;
    return o;
}

Outcome fusion_algebra() {
    Outcome o;
    Rng rng(derive_seed(2024, 2));
    double worst = 0;
    auto check = [&](bool ok, double err, const std::string& what) {
        worst = std::max(worst, err);
        o.require(ok, what);
    };
    for (int inst = 0; inst < 1000; ++inst) {
        const std::int64_t n = 1 + rng() % 2, c1 = 1 + rng() % 6, c2 = 1 + rng() % 6, h = 1 + rng() % 5,
                           w = 1 + rng() % 5;
        const Tensor w_attn = Tensor::uniform({n, 1, h, w}, rng, 0, 1);
        const Tensor sam = Tensor::uniform({n, c2, h, w}, rng, -3, 3), cbr = Tensor::uniform({n, c2, h, w}, rng, -3, 3);

        const Tensor adj0 = adjust_weight(w_attn, Tensor::scalar(0.0));
        for (std::int64_t i = 0; i < adj0.numel(); ++i) {
            const double e = std::abs(adj0.at(i) - w_attn.at(i));
            check(e <= 1e-12, e, "b=0 identity");
        }
        const Tensor f1 = fuse(sam, cbr, adjust_weight(w_attn, Tensor::scalar(1.0)));
        const Tensor f0 = fuse(sam, cbr, Tensor({n, 1, h, w}, 0.0));
        for (std::int64_t i = 0; i < sam.numel(); ++i) {
            const double e1 = std::abs(f1.at(i) - sam.at(i)), e0 = std::abs(f0.at(i) - cbr.at(i));
            check(e1 <= 1e-12, e1, "b=1 identity");
            check(e0 <= 1e-12, e0, "W_adj=0 identity");
        }

        // The module itself, with a random learned bias.
        AtteFfb ffb(c1, c2, rng);
        ffb.beta.data()[0] = std::normal_distribution<double>(0.0, 3.0)(rng);
        const Tensor cbr_ori = Tensor::uniform({n, c1, h, w}, rng, -3, 3);
        const Tensor aligned = ffb.align(cbr_ori);
        const Tensor adj = adjust_weight(ffb.attention_weight(aligned, sam), ffb.bias());
        const double b = ffb.bias_value();
        for (std::int64_t i = 0; i < adj.numel(); ++i) {
            check(adj.at(i) >= b - 1e-12, std::max(0.0, b - adj.at(i)), "floor W_adj >= b");
            check(adj.at(i) <= 1 + 1e-12, std::max(0.0, adj.at(i) - 1), "W_adj <= 1");
        }
        const Tensor out = ffb.forward(cbr_ori, sam);
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            const double lo = std::min(aligned.at(i), sam.at(i)), hi = std::max(aligned.at(i), sam.at(i));
            const double e = std::max({0.0, lo - out.at(i), out.at(i) - hi});
            check(e <= 1e-12, e, "convex betweenness");
        }
    }
    o.detail = (o.pass ? "1000 instances, worst deviation " + fmt("%.2e", worst) : o.detail);
    return o;
}

Outcome pyramid_shapes() {
    Outcome o;
    const std::int64_t sizes[] = {16, 32, 64, 128};
    int configs = 0;
    for (std::int64_t c : {8, 16, 64}) {
        Rng rng(c);
        CbrNet net(c, rng);
        Rng vrng(c + 1);
        ViTMini vit(16, c, 16, 1, 2, vrng);
        for (auto h : sizes) {
            for (auto w : sizes) {
                Rng irng(h * 1000 + w);
                const Tensor img = Tensor::uniform({1, 3, h, w}, irng, 0, 1);
                const auto p = net.forward(img);
                const std::string tag = "c=" + std::to_string(c) + " " + std::to_string(h) + "x" + std::to_string(w);
                o.require(p.f1.shape() == Shape{1, c / 4, h, w}, tag + " f1 " + shape_str(p.f1.shape()));
                o.require(p.f2.shape() == Shape{1, c / 2, h / 2, w / 2}, tag + " f2 " + shape_str(p.f2.shape()));
                o.require(p.f3.shape() == Shape{1, c, h / 4, w / 4}, tag + " f3 " + shape_str(p.f3.shape()));
                o.require(p.f4.shape() == Shape{1, 2 * c, h / 8, w / 8}, tag + " f4 " + shape_str(p.f4.shape()));
                // Positional table sized to this grid; only the shape matters here.
                vit.pos_embed = Tensor::zeros({(h / 16) * (w / 16), 16});
                const Tensor g = vit.encode(img, true);
                o.require(g.shape() == Shape{1, c, h / 16, w / 16}, tag + " global " + shape_str(g.shape()));
                ++configs;
            }
        }
    }
    if (o.pass) o.detail = std::to_string(configs) + " (H,W,c) combinations, all shapes exact";
    return o;
}

Outcome metric_correctness() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    // Hand fixture: A has 4 pixels, B has 6, 2 shared, on a 4x4 grid.
    BinaryMask a(4, 4), b(4, 4);
    for (auto [r, c] : {std::pair{0, 0}, {0, 1}, {1, 0}, {1, 1}}) a.set(r, c, true);
    for (auto [r, c] : {std::pair{1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 0}, {3, 1}}) b.set(r, c, true);
    o.require(dice(a, b) == 0.4, "fixture dice");
    o.require(iou(a, b) == 0.25, "fixture iou");
    o.require(acc(a, b) == 10.0 / 16.0, "fixture acc");
    o.require(dice(BinaryMask(3, 3), BinaryMask(3, 3)) == 1.0, "empty/empty dice");
    o.require(hd95(BinaryMask(3, 3), BinaryMask(3, 3)) == 0.0, "empty/empty hd95");
    o.require(!hd95_fast(a, BinaryMask(4, 4)).has_value(), "one-empty hd95 undefined");

    Rng rng(4004);
    double identity_err = 0;
    for (int t = 0; t < 1000; ++t) {
        const int w = 1 + rng() % 20, h = 1 + rng() % 20;
        const auto p = random_mask(rng, w, h, 0.5), q = random_mask(rng, w, h, 0.5);
        std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < p.values().size(); ++i) {
            const bool x = p.values()[i], y = q.values()[i];
            tp += x && y, fp += x && !y, fn += !x && y, tn += !x && !y;
        }
        const double d = tp + fp + fn ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
        const double j = tp + fp + fn ? static_cast<double>(tp) / (tp + fp + fn) : 1.0;
        o.require(dice(p, q) == d && iou(p, q) == j && acc(p, q) == static_cast<double>(tp + tn) / (w * h),
                  "random pair oracle mismatch");
        identity_err = std::max(identity_err, std::abs(dice(p, q) - 2 * iou(p, q) / (1 + iou(p, q))));
    }
    o.require(identity_err <= 1e-12, "Dice-IoU identity " + fmt("%.2e", identity_err));

    std::int64_t sweep = 0;
    for (int x = 0; x < 512; ++x) {
        std::vector<std::uint8_t> vx(9);
        for (int k = 0; k < 9; ++k) vx[k] = (x >> k) & 1;
        const BinaryMask mx(3, 3, vx);
        for (int y = 0; y < 512; ++y) {
            std::vector<std::uint8_t> vy(9);
            for (int k = 0; k < 9; ++k) vy[k] = (y >> k) & 1;
            const BinaryMask my(3, 3, vy);
            if (hd95(mx, my) != hd95_fast(mx, my)) {
                o.require(false, "3x3 sweep mismatch at " + std::to_string(x) + "," + std::to_string(y));
            }
            ++sweep;
        }
    }
    for (int t = 0; t < 500; ++t) {
        const double da = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
        const double db = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
        const auto p = random_mask(rng, 32, 32, da), q = random_mask(rng, 32, 32, db);
        o.require(hd95(p, q) == hd95_fast(p, q), "32x32 pair " + std::to_string(t) + " mismatch");
    }
    const double secs = seconds_since(t0);
    o.require(secs <= 300, "runtime " + fmt("%.0f s", secs));
    if (o.pass) {
        o.detail = "fixtures, 1000 random pairs (identity err " + fmt("%.1e", identity_err) + "), " +
                   std::to_string(sweep) + " 3x3 pairs, 500 32x32 pairs exact in " + fmt("%.1f", secs) + " s";
    }
    return o;
}

Outcome adapter_identity() {
    Outcome o;
    ModelConfig small;
    small.image_size = 32;
    small.width = 16;
    small.embed_dim = 32;
    small.depth = 2;
    small.heads = 2;
    std::size_t values = 0;
    for (const auto& cfg : {small, ModelConfig{}}) {
        const Model model(cfg);
        Rng rng(cfg.seed + 9);
        const Tensor img = Tensor::uniform({2, 3, cfg.image_size, cfg.image_size}, rng, 0, 1);
        const std::vector<BoxPrompt> boxes{{2, 3, cfg.image_size - 5, cfg.image_size - 2}, {0, 0, 16, 16}};
        NoGradGuard guard;
        const Tensor on = model.forward(img, boxes, true), off = model.forward(img, boxes, false);
        const bool same = std::equal(on.data().begin(), on.data().end(), off.data().begin());
        o.require(same, "logits differ at S=" + std::to_string(cfg.image_size));
        values += static_cast<std::size_t>(on.numel());
    }
    if (o.pass) o.detail = std::to_string(values) + " logits bit-identical with adapters on and off";
    return o;
}

// Shared between criteria 6 and 7.
struct ToyRuns {
    bool ready = false;
    std::string error;
    DatasetManifest data;
    std::vector<AblationRow> rows;
    MetricsSummary full_test;
    double full_secs = 0;
    bool rerun_identical = false;
    std::string rerun_note;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Log lines without the '#' comments (headers and self-check notes).
std::vector<std::string> epoch_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

ToyRuns& toy_runs(const fs::path& work) {
    static ToyRuns runs;
    if (runs.ready || !runs.error.empty()) return runs;
    try {
        const fs::path data_dir = work / "toy_data";
        fs::remove_all(data_dir);
        runs.data = write_synthetic_dataset(data_dir.string(), 42, 300, 64);
        const ModelConfig cfg;  // defaults: S=64, 40 epochs, seed 42

        const fs::path first = work / "toy_full";
        fs::remove_all(first);
        std::ofstream log1(work / "toy_full.log");
        const auto t0 = std::chrono::steady_clock::now();
        train(cfg, runs.data, {.out_dir = first.string(), .log = &log1});
        runs.full_secs = seconds_since(t0);
        const auto test = load_split(runs.data, Split::Test);
        const Model best = model_from_checkpoint(load_checkpoint((first / "best.ckpt").string()));
        runs.full_test = evaluate(best, test.samples, cfg.seed, Split::Test).summary;

        // The ablation's Full configuration is an independent rerun of the same run.
        const fs::path abl = work / "toy_ablate";
        fs::remove_all(abl);
        std::ofstream log2(work / "toy_ablate.log");
        runs.rows = ablate(cfg, runs.data, abl.string(), &log2);
        std::ofstream(work / "ablation.csv") << ablation_csv(runs.rows);

        const bool logs = slurp(first / "train_log.txt") == slurp(abl / "full" / "train_log.txt");
        const bool ckpt = slurp(first / "last.ckpt") == slurp(abl / "full" / "last.ckpt");
        const bool test_same = runs.rows[0].test.dice == runs.full_test.dice;
        runs.rerun_identical = logs && ckpt && test_same;
        runs.rerun_note = std::string("logs ") + (logs ? "equal" : "differ") + ", checkpoint " +
                          (ckpt ? "equal" : "differ") + ", test dice " + (test_same ? "equal" : "differs");
        runs.ready = true;
    } catch (const std::exception& e) {
        runs.error = e.what();
    }
    return runs;
}

Outcome toy_training(const fs::path& work) {
    Outcome o;
    const auto& r = toy_runs(work);
    if (!r.ready) return {false, "run failed: " + r.error};
    o.require(r.full_test.dice >= 0.90, "test dice " + fmt("%.4f", r.full_test.dice));
    o.require(r.full_test.hd95_undefined == 0, std::to_string(r.full_test.hd95_undefined) + " empty predictions");
    o.require(r.full_test.hd95 <= 4.0, "test hd95 " + fmt("%.3f", r.full_test.hd95));
    o.require(r.rerun_identical, "rerun: " + r.rerun_note);
    const std::string summary = "test dice " + fmt("%.4f", r.full_test.dice) + ", hd95 " +
                                fmt("%.3f", r.full_test.hd95) + " px, rerun " + r.rerun_note + ", " +
                                fmt("%.0f", r.full_secs) + " s";
    o.detail = o.pass ? summary : o.detail + " (" + summary + ")";
    return o;
}

Outcome ablation(const fs::path& work) {
    Outcome o;
    const auto& r = toy_runs(work);
    if (!r.ready) return {false, "run failed: " + r.error};
    o.require(r.rows.size() == 4, "expected four configurations");
    if (r.rows.size() != 4) return o;
    for (std::size_t i = 1; i < 4; ++i) {
        o.require(r.rows[i - 1].trainable_parameters > r.rows[i].trainable_parameters,
                  "parameter ordering broken between " + r.rows[i - 1].name + " and " + r.rows[i].name);
        o.require(r.rows[i].data_digest == r.rows[0].data_digest, r.rows[i].name + " saw a different sample order");
    }
    o.require(!r.rows[3].has_cbrnet, "w/o CBR-Net still built a CBR-Net");
    o.require(r.rows[0].test.dice >= r.rows[3].test.dice - 0.01,
              "full dice " + fmt("%.4f", r.rows[0].test.dice) + " vs " + fmt("%.4f", r.rows[3].test.dice));
    std::ostringstream os;
    for (const auto& row : r.rows) {
        os << (os.tellp() ? "; " : "") << row.name << " " << row.trainable_parameters << " params dice "
           << fmt("%.4f", row.test.dice);
    }
    o.detail = o.pass ? os.str() : o.detail + " (" + os.str() + ")";
    return o;
}

double sorted_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    const auto rank = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(p / 100.0 * n - 1e-9)));
    return v[static_cast<std::size_t>(std::min<std::int64_t>(rank, static_cast<std::int64_t>(v.size()))) - 1];
}

Outcome preprocessing() {
    Outcome o;
    o.require(window_ct(std::vector<double>{-1000, 40, 1000}) == std::vector<double>{-160, 40, 240}, "CT window");
    Rng rng(808);
    double worst = 0, idem = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 3000;
        std::vector<double> raw(n);
        for (auto& v : raw) v = std::lognormal_distribution<double>(4.0, 1.5)(rng) * (rng() % 5 ? 1 : -1);
        const double lo = sorted_percentile(raw, 0.5), hi = sorted_percentile(raw, 99.5);
        const auto clipped = clip_percentiles(raw);
        const auto [mn, mx] = std::minmax_element(clipped.begin(), clipped.end());
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(clipped[i] - std::clamp(raw[i], lo, hi)));
        const auto norm = minmax_normalize(clipped);
        for (std::size_t i = 0; i < n; ++i) {
            const double expect = *mx > *mn ? (clipped[i] - *mn) / (*mx - *mn) * 255.0 : 0.0;
            worst = std::max(worst, std::abs(norm[i] - expect));
        }
        // MRI chain applied twice.
        const auto once = normalize_intensities(raw, Modality::MRI);
        const auto twice = normalize_intensities(once, Modality::MRI);
        for (std::size_t i = 0; i < n; ++i) idem = std::max(idem, std::abs(once[i] - twice[i]));
        // CT chain: each stage is a projection.
        std::vector<double> hu(n);
        for (auto& v : hu) v = std::uniform_real_distribution<double>(-1200, 1800)(rng);
        const auto w = window_ct(hu);
        o.require(window_ct(w) == w, "CT window not idempotent");
        const auto nw = minmax_normalize(w), nnw = minmax_normalize(nw);
        for (std::size_t i = 0; i < n; ++i) idem = std::max(idem, std::abs(nw[i] - nnw[i]));
    }
    o.require(worst <= 1e-12, "oracle mismatch " + fmt("%.2e", worst));
    o.require(idem <= 1e-12, "idempotence error " + fmt("%.2e", idem));
    if (o.pass) {
        o.detail = "window exact; 200 arrays vs sort oracle (worst " + fmt("%.1e", worst) +
                   "); MRI chain and CT stages idempotent (worst " + fmt("%.1e", idem) + ")";
    }
    return o;
}

Outcome prompt_contract() {
    Outcome o;
    o.require(perturbation_max(1024) == 20, "p_max at S=1024 is " + std::to_string(perturbation_max(1024)));
    const int s = 1024, p = perturbation_max(s);
    Rng rng(derive_seed(99, 9));
    std::array<std::vector<int>, 4> hist;
    for (auto& h : hist) h.assign(static_cast<std::size_t>(p + 1), 0);
    std::uniform_int_distribution<int> pos(0, s - 1);
    int interior = 0;
    for (int t = 0; t < 10000; ++t) {
        int x0 = pos(rng), x1 = pos(rng), y0 = pos(rng), y1 = pos(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        const BoxPrompt box{x0, y0, x1 + 1, y1 + 1};
        const BoxPrompt out = perturb_box(box, rng, s);
        o.require(out.contains(box), "box " + box.str() + " not contained in " + out.str());
        o.require(out.inside(s, s), "box " + out.str() + " out of bounds");
        // Offsets are observable only when no clipping happened.
        if (box.x0 >= p && box.y0 >= p && box.x1 <= s - p && box.y1 <= s - p) {
            ++interior;
            const int d[4] = {box.x0 - out.x0, box.y0 - out.y0, out.x1 - box.x1, out.y1 - box.y1};
            for (int e = 0; e < 4; ++e) {
                if (d[e] < 0 || d[e] > p) o.require(false, "offset outside [0,p_max]");
                else ++hist[e][static_cast<std::size_t>(d[e])];
            }
        }
    }
    // Separate pass on interior boxes so every edge has 10000 unclipped draws.
    for (int t = interior; t < 10000; ++t) {
        std::uniform_int_distribution<int> in(p, s - p - 2);
        int x0 = in(rng), x1 = in(rng), y0 = in(rng), y1 = in(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        const BoxPrompt box{x0, y0, x1 + 1, y1 + 1};
        const BoxPrompt out = perturb_box(box, rng, s);
        const int d[4] = {box.x0 - out.x0, box.y0 - out.y0, out.x1 - box.x1, out.y1 - box.y1};
        for (int e = 0; e < 4; ++e) {
            if (d[e] < 0 || d[e] > p) o.require(false, "offset outside [0,p_max]");
            else ++hist[e][static_cast<std::size_t>(d[e])];
        }
    }
    const boost::math::chi_squared_distribution<double> chi(p);
    const char* edges[] = {"x0", "y0", "x1", "y1"};
    std::string pvals;
    for (int e = 0; e < 4; ++e) {
        const double expect = 10000.0 / (p + 1);
        double stat = 0;
        for (int k : hist[e]) stat += (k - expect) * (k - expect) / expect;
        const double pv = boost::math::cdf(boost::math::complement(chi, stat));
        o.require(pv > 0.001, std::string("edge ") + edges[e] + " chi-square p=" + fmt("%.2e", pv));
        pvals += std::string(e ? ", " : "") + edges[e] + " p=" + fmt("%.3f", pv);
    }
    if (o.pass) o.detail = "10000 boxes contained and in bounds, p_max=20 at S=1024; " + pvals;
    return o;
}

Outcome checkpoint_fidelity(const fs::path& work) {
    Outcome o;
    const fs::path data_dir = work / "resume_data";
    fs::remove_all(data_dir);
    const auto data = write_synthetic_dataset(data_dir.string(), 5, 24, 32);
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.width = 16;
    cfg.embed_dim = 32;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.batch_size = 4;
    cfg.epochs = 6;
    cfg.lr = 1e-3;
    const fs::path whole = work / "resume_whole", split = work / "resume_split";
    fs::remove_all(whole);
    fs::remove_all(split);
    const auto full = train(cfg, data, {.out_dir = whole.string()});
    const auto head = train(cfg, data, {.out_dir = split.string(), .stop_after_epoch = 3});
    const auto tail = train(cfg, data, {.out_dir = split.string(), .resume = (split / "last.ckpt").string()});
    std::vector<EpochLog> joined = head.epochs;
    joined.insert(joined.end(), tail.epochs.begin(), tail.epochs.end());
    o.require(joined.size() == full.epochs.size(), "epoch count differs");
    std::size_t steps = 0;
    for (std::size_t e = 0; e < std::min(joined.size(), full.epochs.size()); ++e) {
        o.require(joined[e].step_losses == full.epochs[e].step_losses, "step losses differ at epoch " + std::to_string(e + 1));
        o.require(format_epoch(joined[e]) == format_epoch(full.epochs[e]), "epoch line differs at " + std::to_string(e + 1));
        steps += full.epochs[e].step_losses.size();
    }
    o.require(epoch_lines(whole / "train_log.txt") == epoch_lines(split / "train_log.txt"), "logged epoch lines differ");
    o.require(slurp(whole / "last.ckpt") == slurp(split / "last.ckpt"), "final checkpoint differs");
    if (o.pass) {
        o.detail = "interrupted after epoch 3 of 6; " + std::to_string(steps) +
                   " step losses, log and final checkpoint identical";
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work = (fs::temp_directory_path() / "msca_acceptance").string();
    std::vector<int> only;
    app.add_option("--work-dir", work, "Scratch directory for datasets and runs")->capture_default_str();
    app.add_option("--only", only, "Run just these criteria (1-10)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);
    const fs::path w(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"fusion algebra", fusion_algebra},
        {"pyramid shape law", pyramid_shapes},
        {"metric correctness", metric_correctness},
        {"adapter identity at init", adapter_identity},
        {"toy training", [&] { return toy_training(w); }},
        {"ablation harness", [&] { return ablation(w); }},
        {"preprocessing", preprocessing},
        {"prompt contract", prompt_contract},
        {"checkpoint fidelity", [&] { return checkpoint_fidelity(w); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            out = criteria[i].second();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        if (!out.pass) ++failed;
        std::printf("criterion %2d %s  %-26s %s [%.1f s]\n", id, out.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    out.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
