#include "msca/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "msca/adamw.hpp"
#include "msca/loss.hpp"
#include "msca/random.hpp"

namespace msca {

namespace fs = std::filesystem;

namespace {

enum RunStream : std::uint64_t { kOrder = 101, kSubset = 102, kEval = 200 };

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator so ("ab","c") and ("a","bc") differ
    return h * 0x100000001b3ULL;
}

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

Tensor stack_images(const std::vector<const Sample*>& batch) {
    const auto& first = batch.front()->image;
    Shape shape{static_cast<std::int64_t>(batch.size()), first.dim(0), first.dim(1), first.dim(2)};
    Tensor out(shape);
    auto dst = out.data().begin();
    for (const auto* s : batch) {
        if (s->image.shape() != first.shape()) throw DimensionError("images in a batch must share a shape");
        dst = std::copy(s->image.data().begin(), s->image.data().end(), dst);
    }
    return out;
}

std::string rng_text(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::string config_key(ModelConfig cfg) {
    cfg.epochs = 0;
    return cfg.to_text();
}

}  // namespace

std::string format_epoch(const EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "epoch=%d loss=%.17g val_dice=%.17g val_iou=%.17g digest=%016llx", e.epoch,
                  e.train_loss, e.val_dice, e.val_iou, static_cast<unsigned long long>(e.batch_digest));
    return buf;
}

bool smoothed_loss_non_increasing(const std::vector<double>& losses, std::string* message) {
    constexpr std::size_t kWindow = 5, kHorizon = 20;
    const std::size_t n = std::min(losses.size(), kHorizon);
    double prev = 0.0;
    for (std::size_t end = kWindow; end <= n; ++end) {
        const double avg = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(end - kWindow),
                                           losses.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
                           kWindow;
        if (end > kWindow && avg > prev) {
            if (message) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "smoothed loss rose from %.6g to %.6g at epoch %zu", prev, avg, end);
                *message = buf;
            }
            return false;
        }
        prev = avg;
    }
    if (message) *message = "ok";
    return true;
}

TrainResult train(const ModelConfig& config, const DatasetManifest& data, const TrainOptions& options) {
    config.validate();
    if (options.out_dir.empty()) throw ConfigError("train needs an output directory");
    if (data.size && data.size != config.image_size) {
        throw ConfigError("dataset size " + std::to_string(data.size) + " does not match image_size " +
                          std::to_string(config.image_size));
    }
    fs::create_directories(options.out_dir);

    TrainResult result;
    auto loaded = load_split(data, Split::Train);
    result.filtered_empty = loaded.filtered_empty;
    if (loaded.samples.empty()) throw ValidationError("training split is empty");
    std::vector<Sample> train_set = std::move(loaded.samples);
    if (config.train_fraction < 1.0) {
        const auto keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(train_set.size()))));
        std::vector<std::size_t> idx(train_set.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng subset_rng(derive_seed(config.seed, kSubset));
        std::shuffle(idx.begin(), idx.end(), subset_rng);
        idx.resize(keep);
        std::sort(idx.begin(), idx.end());
        std::vector<Sample> subset;
        for (auto i : idx) subset.push_back(train_set[i]);
        train_set = std::move(subset);
    }
    result.train_samples = train_set.size();
    const auto val = load_split(data, Split::Val);
    result.filtered_empty += val.filtered_empty;

    Model model(config);
    AdamW opt(model.trainable_parameters(), {config.lr, config.weight_decay});
    result.trainable_parameters = model.trainable_parameter_count();
    Rng run_rng(derive_seed(config.seed, kOrder));
    int start_epoch = 1;
    if (options.resume) {
        const auto ckpt = load_checkpoint(*options.resume);
        if (config_key(ckpt.config) != config_key(config)) {
            throw ConfigError("checkpoint " + *options.resume + " was written with a different config");
        }
        restore_parameters(model, ckpt);
        restore_optimizer(opt, ckpt);
        std::istringstream(ckpt.rng_state) >> run_rng;
        start_epoch = ckpt.epoch + 1;
        result.best_val_dice = ckpt.best_val_dice;
        result.best_epoch = ckpt.best_epoch;
    }

    const fs::path out(options.out_dir);
    std::ofstream log_file(out / "train_log.txt", options.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + (out / "train_log.txt").string());
    auto emit = [&](const std::string& line) {
        log_file << line << "\n";
        log_file.flush();
        if (options.log) *options.log << line << "\n" << std::flush;
    };
    if (!options.resume) {
        emit("# trainable_parameters=" + std::to_string(result.trainable_parameters) +
             " train_samples=" + std::to_string(train_set.size()) +
             " filtered_empty=" + std::to_string(result.filtered_empty));
    }

    auto snapshot = [&](int epoch) {
        Checkpoint c = capture(model, &opt);
        c.epoch = epoch;
        c.rng_state = rng_text(run_rng);
        c.best_val_dice = result.best_val_dice;
        c.best_epoch = result.best_epoch;
        c.data = fs::absolute(data.root).string();
        return c;
    };

    const auto s = config.image_size;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
        EpochLog e;
        e.epoch = epoch;
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), run_rng);
        e.batch_digest = kFnvBasis;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::vector<const Sample*> batch;
            std::vector<BoxPrompt> boxes;
            std::vector<BinaryMask> masks;
            for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
                const Sample& smp = train_set[order[k]];
                batch.push_back(&smp);
                boxes.push_back(perturb_box(smp.box, run_rng, s));
                masks.push_back(smp.mask);
                e.batch_digest = fnv1a(e.batch_digest, smp.id);
            }
            opt.zero_grad();
            const Tensor logits = model.forward(stack_images(batch), boxes);
            const Tensor loss = total_loss(logits, masks_to_tensor(masks), config.alpha);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(start / bs + 1) + "; last good checkpoint kept in " +
                                     options.out_dir);
            }
            backward(loss);
            opt.step();
            e.step_losses.push_back(value);
        }
        e.train_loss = std::accumulate(e.step_losses.begin(), e.step_losses.end(), 0.0) /
                       static_cast<double>(e.step_losses.size());
        if (!val.samples.empty()) {
            const auto summary = evaluate(model, val.samples, config.seed, Split::Val).summary;
            e.val_dice = summary.dice;
            e.val_iou = summary.iou;
        }
        if (e.val_dice > result.best_val_dice) {
            result.best_val_dice = e.val_dice;
            result.best_epoch = epoch;
            save_checkpoint((out / "best.ckpt").string(), snapshot(epoch));
        }
        save_checkpoint((out / "last.ckpt").string(), snapshot(epoch));
        emit(format_epoch(e));
        result.epochs.push_back(std::move(e));
        if (epoch == options.stop_after_epoch) break;
    }

    if (!options.resume && !result.epochs.empty()) {
        std::vector<double> losses;
        for (const auto& e : result.epochs) losses.push_back(e.train_loss);
        result.loss_self_check = smoothed_loss_non_increasing(losses, &result.self_check_message);
        emit("# loss_self_check=" + std::string(result.loss_self_check ? "pass" : "FAIL") + " " +
             result.self_check_message);
    }
    return result;
}

EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, std::uint64_t seed, Split split,
                    int batch_size) {
    NoGradGuard no_grad;
    EvalResult result;
    Rng rng(derive_seed(seed, kEval, static_cast<std::uint64_t>(split)));
    const auto s = model.config().image_size;
    const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
    std::vector<MetricsReport> reports;
    for (std::size_t start = 0; start < samples.size(); start += bs) {
        std::vector<const Sample*> batch;
        std::vector<BoxPrompt> boxes;
        for (std::size_t k = start; k < std::min(samples.size(), start + bs); ++k) {
            batch.push_back(&samples[k]);
            boxes.push_back(perturb_box(samples[k].box, rng, s));
        }
        const auto predictions = binarize(model.forward(stack_images(batch), boxes));
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto m = evaluate_masks(predictions[k], batch[k]->mask);
            result.images.push_back({batch[k]->id, m});
            reports.push_back(m);
        }
    }
    result.summary = summarize(reports);
    return result;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::string eval_csv(const EvalResult& result) {
    std::string out = "image_id,dice,iou,acc,hd95\n";
    for (const auto& r : result.images) {
        out += r.id + "," + num(r.metrics.dice) + "," + num(r.metrics.iou) + "," + num(r.metrics.acc) + "," +
               (r.metrics.hd95 ? num(*r.metrics.hd95) : "") + "\n";
    }
    const auto& s = result.summary;
    out += "mean," + num(s.dice) + "," + num(s.iou) + "," + num(s.acc) + "," +
           (std::isnan(s.hd95) ? std::string() : num(s.hd95)) + "\n";
    return out;
}

BenchResult bench_forward(const Model& model, const Sample& sample, int passes, int warmup) {
    NoGradGuard no_grad;
    const Tensor image = stack_images({&sample});
    const std::vector<BoxPrompt> boxes{sample.box};
    for (int i = 0; i < warmup; ++i) model.forward(image, boxes);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < passes; ++i) model.forward(image, boxes);
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
    return {passes, passes > 0 ? dt.count() / passes : 0.0};
}

std::vector<std::pair<std::string, ModelConfig>> ablation_configs(const ModelConfig& base) {
    ModelConfig full = base;
    full.adapter_enabled = true;
    full.fusion_mode = FusionMode::AtteFFB;
    full.cbrnet_enabled = true;
    ModelConfig no_adapter = full;
    no_adapter.adapter_enabled = false;
    ModelConfig no_atte = full;
    no_atte.fusion_mode = FusionMode::Add;
    ModelConfig no_cbr = full;
    no_cbr.fusion_mode = FusionMode::None;
    no_cbr.cbrnet_enabled = false;
    return {{"Full", full}, {"w/o Adapter", no_adapter}, {"w/o Atte-FFB", no_atte}, {"w/o CBR-Net & Atte-FFB", no_cbr}};
}

std::vector<AblationRow> ablate(const ModelConfig& base, const DatasetManifest& data, const std::string& out_dir,
                                std::ostream* log) {
    const char* slugs[] = {"full", "no_adapter", "no_atteffb", "no_cbrnet"};
    const auto test = load_split(data, Split::Test);
    std::vector<AblationRow> rows;
    std::size_t i = 0;
    for (const auto& [name, cfg] : ablation_configs(base)) {
        if (log) *log << "# ablation: " << name << "\n";
        TrainOptions opts;
        opts.out_dir = (fs::path(out_dir) / slugs[i++]).string();
        opts.log = log;
        const auto tr = train(cfg, data, opts);
        AblationRow row;
        row.name = name;
        row.config = cfg;
        row.trainable_parameters = tr.trainable_parameters;
        row.best_val_dice = tr.best_val_dice;
        row.data_digest = kFnvBasis;
        for (const auto& e : tr.epochs) row.data_digest = fnv1a(row.data_digest, std::to_string(e.batch_digest));
        const fs::path best = fs::path(opts.out_dir) / "best.ckpt";
        const Model model = model_from_checkpoint(load_checkpoint(best.string()));
        row.has_cbrnet = model.has_cbrnet();
        if (!test.samples.empty()) row.test = evaluate(model, test.samples, cfg.seed, Split::Test).summary;
        rows.push_back(row);
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out =
        "configuration,adapter,fusion_mode,cbrnet,trainable_params,val_dice,test_dice,test_iou,test_acc,test_hd95,"
        "data_digest\n";
    for (const auto& r : rows) {
        char digest[20];
        std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(r.data_digest));
        out += r.name + "," + (r.config.adapter_enabled ? "1" : "0") + "," + to_string(r.config.fusion_mode) + "," +
               (r.has_cbrnet ? "1" : "0") + "," + std::to_string(r.trainable_parameters) + "," +
               num(r.best_val_dice) + "," + num(r.test.dice) + "," + num(r.test.iou) + "," + num(r.test.acc) + "," +
               (std::isnan(r.test.hd95) ? std::string() : num(r.test.hd95)) + "," + digest + "\n";
    }
    return out;
}

}  // namespace msca
