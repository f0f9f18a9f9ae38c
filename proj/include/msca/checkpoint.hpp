#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msca/adamw.hpp"
#include "msca/config.hpp"
#include "msca/model.hpp"

namespace msca {

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to continue a run: config, epoch, run RNG, optimizer moments,
/// and every model tensor under its dotted name.
struct Checkpoint {
    ModelConfig config;
    int epoch = 0;  // last completed epoch
    std::string rng_state;
    std::int64_t adam_steps = 0;
    double best_val_dice = -1.0;
    int best_epoch = 0;
    std::string data;  // dataset manifest the run was trained on, if known
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> adam_m;
    std::vector<std::pair<std::string, Tensor>> adam_v;
};

/// Text header ("MSCACKPT <version>", key=value lines, config, "end") followed by
/// length-prefixed names and raw tensor blobs.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of a model (and optionally its optimizer) into a checkpoint.
Checkpoint capture(const Model& model, const AdamW* optimizer);

/// Copies checkpoint tensors into `model`. Every model tensor must be present with
/// a matching shape; the error names the offending tensor.
void restore_parameters(Model& model, const Checkpoint& ckpt);
void restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt);

/// Builds a model from the checkpoint's config and loads its parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace msca
