#pragma once

#include <cstdint>
#include <string>

namespace msca {

enum class FusionMode { AtteFFB, Add, None };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

/// Hyperparameters of one train/eval/ablate run. Serialized as flat key=value text
/// using the field names below.
struct ModelConfig {
    int image_size = 64;  // S
    int width = 64;       // c, CBR-Net/decoder feature width
    int embed_dim = 64;   // d, ViT token width
    int depth = 4;        // L, transformer blocks
    int heads = 4;
    bool adapter_enabled = true;
    FusionMode fusion_mode = FusionMode::AtteFFB;
    bool cbrnet_enabled = true;
    bool freeze_backbone = false;
    double alpha = 0.5;
    double lr = 1e-4;
    double weight_decay = 0.01;
    int batch_size = 8;
    int epochs = 40;
    std::uint64_t seed = 42;
    double train_fraction = 1.0;

    static constexpr int kPatch = 16;

    /// Throws ConfigError on any violated constraint.
    void validate() const;

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    static ModelConfig load(const std::string& path);
    void save(const std::string& path) const;
};

}  // namespace msca
