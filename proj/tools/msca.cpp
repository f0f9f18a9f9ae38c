// Command-line front end: synthetic data, preprocessing, training, evaluation,
// ablation and gradient checks.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "msca/checkpoint.hpp"
#include "msca/dataset.hpp"
#include "msca/gradcheck_suite.hpp"
#include "msca/preprocess.hpp"
#include "msca/tensor_io.hpp"
#include "msca/trainer.hpp"

namespace fs = std::filesystem;
using namespace msca;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2, kIo = 3 };

void write_text(const std::string& path, const std::string& text) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

int cmd_synth(std::uint64_t seed, int n, int size, const std::string& out) {
    const auto m = write_synthetic_dataset(out, seed, n, size);
    std::printf("wrote %d samples to %s (train %zu, val %zu, test %zu)\n", n, out.c_str(), m.train.size(),
                m.val.size(), m.test.size());
    return kOk;
}

int cmd_preprocess(const std::string& modality, const std::string& in, const std::string& out, int size,
                   const PreprocessOptions& opts, const std::string& pgm_dir) {
    if (size < 1) throw ConfigError("--size must be >= 1");
    if (modality == "ct" && !(opts.window_width > 0)) throw ConfigError("--window-width must be positive");
    if (modality == "mri" && !(opts.p_lo >= 0 && opts.p_lo < opts.p_hi && opts.p_hi <= 100)) {
        throw ConfigError("percentiles must satisfy 0 <= p-lo < p-hi <= 100");
    }
    Tensor volume = load_tensor(in);
    if (volume.ndim() == 2) volume = Tensor({1, volume.dim(0), volume.dim(1)}, std::vector<double>(volume.data().begin(), volume.data().end()));
    const auto slices = preprocess_volume(volume, modality == "ct" ? Modality::CT : Modality::MRI, size, opts);
    Tensor result({static_cast<std::int64_t>(slices.size()), size, size});
    auto dst = result.data().begin();
    for (const auto& s : slices) dst = std::copy(s.pixels.begin(), s.pixels.end(), dst);
    save_tensor(out, result, DType::F64);
    if (!pgm_dir.empty()) {
        fs::create_directories(pgm_dir);
        for (std::size_t k = 0; k < slices.size(); ++k) {
            GrayImage g{size, size, std::vector<std::uint8_t>(slices[k].pixels.size())};
            for (std::size_t i = 0; i < g.pixels.size(); ++i) {
                g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(slices[k].pixels[i], 0.0, 255.0)));
            }
            char name[32];
            std::snprintf(name, sizeof name, "slice_%04zu.pgm", k);
            write_pgm((fs::path(pgm_dir) / name).string(), g);
        }
    }
    std::printf("preprocessed %zu slice(s) to %s\n", slices.size(), out.c_str());
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& resume, double train_fraction) {
    auto cfg = ModelConfig::load(config_path);
    if (train_fraction > 0) {
        cfg.train_fraction = train_fraction;
        cfg.validate();
    }
    TrainOptions opts;
    opts.out_dir = out;
    opts.log = &std::cout;
    if (!resume.empty()) opts.resume = resume;
    fs::create_directories(out);
    cfg.save((fs::path(out) / "config.txt").string());
    const auto r = train(cfg, load_manifest(data), opts);
    std::printf("best val dice %.6f at epoch %d; trainable parameters %lld\n", r.best_val_dice, r.best_epoch,
                static_cast<long long>(r.trainable_parameters));
    if (!r.loss_self_check) {
        std::fprintf(stderr, "loss self-check failed: %s\n", r.self_check_message.c_str());
        return kNumerical;
    }
    return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split_name, const std::string& out_csv,
             const std::string& data_override, bool bench) {
    const auto split = parse_split(split_name);
    const auto ckpt = load_checkpoint(ckpt_path);
    const std::string data = data_override.empty() ? ckpt.data : data_override;
    if (data.empty()) throw ConfigError("checkpoint does not record its dataset; pass --data");
    const auto manifest = load_manifest(data);
    const Model model = model_from_checkpoint(ckpt);
    const auto loaded = load_split(manifest, split);
    if (loaded.filtered_empty) std::printf("filtered %zu sample(s) with empty masks\n", loaded.filtered_empty);
    if (loaded.samples.empty()) throw ValidationError("split " + split_name + " is empty");
    const auto result = evaluate(model, loaded.samples, ckpt.config.seed, split);
    write_text(out_csv, eval_csv(result));
    const auto& s = result.summary;
    std::printf("%s: images=%zu dice=%.6f iou=%.6f acc=%.6f hd95=%.6f hd95_undefined=%zu\n", split_name.c_str(),
                s.images, s.dice, s.iou, s.acc, s.hd95, s.hd95_undefined);
    for (const auto& [site, b] : model.fusion_biases()) std::printf("fusion bias %s: b=%.6f\n", site.c_str(), b);
    if (bench) {
        const auto br = bench_forward(model, loaded.samples.front());
        std::printf("bench: %d forward passes at batch 1, mean %.3f ms\n", br.passes, br.mean_ms);
    }
    return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& data, const std::string& out_csv,
               const std::string& runs_dir) {
    const auto cfg = ModelConfig::load(config_path);
    const std::string dir = runs_dir.empty() ? (fs::path(out_csv).parent_path() / "ablation_runs").string() : runs_dir;
    const auto rows = ablate(cfg, load_manifest(data), dir, &std::cout);
    write_text(out_csv, ablation_csv(rows));
    std::printf("%-26s %10s %9s %9s\n", "configuration", "params", "test_dice", "test_hd95");
    for (const auto& r : rows) {
        std::printf("%-26s %10lld %9.4f %9.4f\n", r.name.c_str(), static_cast<long long>(r.trainable_parameters),
                    r.test.dice, r.test.hd95);
    }
    return kOk;
}

int cmd_gradcheck(const std::string& module, std::optional<double> tol, int seeds) {
    const auto cases = run_gradcheck_suite(module, seeds, tol);
    bool ok = true;
    for (const auto& c : cases) {
        std::printf("%-4s %-12s %-28s seeds=%d probes=%lld max_rel_error=%.3e tol=%.0e", c.passed ? "ok" : "FAIL",
                    c.module.c_str(), c.name.c_str(), c.seeds, static_cast<long long>(c.probes), c.max_rel_error,
                    c.tol);
        if (c.shrunk) std::printf(" reduced_steps=%lld", static_cast<long long>(c.shrunk));
        if (c.nonsmooth) std::printf(" kink_probes=%lld", static_cast<long long>(c.nonsmooth));
        std::printf("\n");
        if (!c.passed) std::printf("     %s\n", c.detail.c_str());
        ok = ok && c.passed;
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Box-prompted segmentation toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 42;
    int n = 300, size = 64;
    std::string out, in, modality, config, data, checkpoint, split, out_csv, resume, runs_dir, pgm_dir, module = "all";
    double train_fraction = -1;
    bool bench = false;
    PreprocessOptions pre;
    std::optional<double> tol;
    int seeds = 20;

    auto* synth = app.add_subcommand("synth-data", "Generate the synthetic ellipse dataset");
    synth->add_option("--seed", seed, "Dataset seed")->capture_default_str();
    synth->add_option("--n", n, "Number of samples")->capture_default_str();
    synth->add_option("--size", size, "Image size S")->capture_default_str();
    synth->add_option("--out", out, "Output directory")->required();

    auto* prep = app.add_subcommand("preprocess", "Normalize a raw CT/MRI volume into S x S slices");
    prep->add_option("--modality", modality, "ct or mri")->required()->check(CLI::IsMember({"ct", "mri"}));
    prep->add_option("--in", in, "Raw tensor volume [D,H,W]")->required();
    prep->add_option("--out", out, "Output raw tensor [D,S,S]")->required();
    prep->add_option("--size", size, "Output size S")->capture_default_str();
    auto* ww = prep->add_option("--window-width", pre.window_width, "CT window width (HU)")->capture_default_str();
    auto* wl = prep->add_option("--window-level", pre.window_level, "CT window level (HU)")->capture_default_str();
    auto* plo = prep->add_option("--p-lo", pre.p_lo, "MRI lower percentile")->capture_default_str();
    auto* phi = prep->add_option("--p-hi", pre.p_hi, "MRI upper percentile")->capture_default_str();
    ww->excludes(plo)->excludes(phi);
    wl->excludes(plo)->excludes(phi);
    prep->add_option("--pgm-dir", pgm_dir, "Also write 8-bit PGM slices here");

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--config", config, "key=value config file")->required();
    tr->add_option("--data", data, "Dataset manifest (file or directory)")->required();
    tr->add_option("--out", out, "Run directory")->required();
    tr->add_option("--resume", resume, "Continue from a checkpoint");
    tr->add_option("--train-fraction", train_fraction, "Use this fraction of the training split");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--split", split, "train, val or test")->required();
    ev->add_option("--out-csv", out_csv)->required();
    ev->add_option("--data", data, "Dataset manifest (defaults to the one recorded in the checkpoint)");
    ev->add_flag("--bench", bench, "Also time 600 batch-1 forward passes");

    auto* ab = app.add_subcommand("ablate", "Train and test the four ablation configurations");
    ab->add_option("--config", config)->required();
    ab->add_option("--data", data)->required();
    ab->add_option("--out-csv", out_csv)->required();
    ab->add_option("--runs-dir", runs_dir, "Where per-configuration runs are written");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    std::string modules = "all";
    for (const auto& m : gradcheck_modules()) modules += ", " + m;
    gc->add_option("--module", module, modules)->capture_default_str();
    gc->add_option("--tol", tol, "Override the relative-error tolerance");
    gc->add_option("--seeds", seeds, "Random instances per check")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*synth) return cmd_synth(seed, n, size, out);
        if (*prep) return cmd_preprocess(modality, in, out, size, pre, pgm_dir);
        if (*tr) return cmd_train(config, data, out, resume, train_fraction);
        if (*ev) return cmd_eval(checkpoint, split, out_csv, data, bench);
        if (*ab) return cmd_ablate(config, data, out_csv, runs_dir);
        if (*gc) return cmd_gradcheck(module, tol, seeds);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kNumerical;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kIo;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfig;
    }
    return kOk;
}
