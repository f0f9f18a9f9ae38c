#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msca/checkpoint.hpp"
#include "msca/dataset.hpp"
#include "msca/metrics.hpp"
#include "msca/model.hpp"

namespace msca {

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // mean over steps
    double val_dice = 0.0;
    double val_iou = 0.0;
    std::uint64_t batch_digest = 0;  // order of sample ids consumed this epoch
    std::vector<double> step_losses;
};

std::string format_epoch(const EpochLog& log);

struct TrainOptions {
    std::string out_dir;                 // receives last.ckpt, best.ckpt, train_log.txt
    std::optional<std::string> resume;   // checkpoint to continue from
    int stop_after_epoch = -1;           // simulate an interruption after this epoch
    std::ostream* log = nullptr;         // progress lines (also written to train_log.txt)
};

struct TrainResult {
    std::vector<EpochLog> epochs;  // epochs run by this call
    double best_val_dice = -1.0;
    int best_epoch = 0;
    std::int64_t trainable_parameters = 0;
    std::size_t train_samples = 0;
    std::size_t filtered_empty = 0;
    bool loss_self_check = true;
    std::string self_check_message;
};

/// Deterministic given (config, data): initialization, sample order and box
/// perturbations all derive from config.seed.
TrainResult train(const ModelConfig& config, const DatasetManifest& data, const TrainOptions& options);

/// Non-increasing check of the 5-epoch moving average over the first 20 epochs.
bool smoothed_loss_non_increasing(const std::vector<double>& epoch_losses, std::string* message = nullptr);

struct ImageResult {
    std::string id;
    MetricsReport metrics;
};

struct EvalResult {
    std::vector<ImageResult> images;
    MetricsSummary summary;
};

/// Predicts every sample with a perturbed box drawn from a stream fixed by
/// (seed, split), so repeated evaluations see identical prompts.
EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, std::uint64_t seed, Split split,
                    int batch_size = 8);

/// image_id,dice,iou,acc,hd95 rows (hd95 empty when undefined) and a final "mean" row.
std::string eval_csv(const EvalResult& result);

struct BenchResult {
    int passes = 0;
    double mean_ms = 0.0;
};
/// Mean wall time of batch-1 forward passes after a short warm-up.
BenchResult bench_forward(const Model& model, const Sample& sample, int passes = 600, int warmup = 20);

struct AblationRow {
    std::string name;
    ModelConfig config;
    std::int64_t trainable_parameters = 0;
    bool has_cbrnet = false;
    double best_val_dice = 0.0;
    std::uint64_t data_digest = 0;  // combined batch digests of every epoch
    MetricsSummary test;
};

/// The four variants: Full, w/o Adapter, w/o Atte-FFB (add fusion), w/o CBR-Net & Atte-FFB.
std::vector<std::pair<std::string, ModelConfig>> ablation_configs(const ModelConfig& base);

std::vector<AblationRow> ablate(const ModelConfig& base, const DatasetManifest& data, const std::string& out_dir,
                                std::ostream* log = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace msca
