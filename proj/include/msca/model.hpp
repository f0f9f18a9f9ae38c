#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msca/backbone.hpp"
#include "msca/cbrnet.hpp"
#include "msca/config.hpp"

namespace msca {

/// ViT encoder + box prompt encoder + mask decoder, optionally augmented with the
/// parallel CBR-Net branch whose features are fused into the decoder.
///
/// Every component draws its initialization from its own child stream of the
/// config seed, so ablation variants share identical weights for shared parts.
class Model {
public:
    explicit Model(const ModelConfig& config);

    /// images [N,3,S,S] in [0,1], one box per image -> logits [N,1,S,S].
    Tensor forward(const Tensor& images, std::span<const BoxPrompt> boxes) const;
    Tensor forward(const Tensor& images, std::span<const BoxPrompt> boxes, bool adapters_enabled) const;

    /// Every persisted tensor (trainable parameters and buffers) with dotted names.
    ParamList parameters() const;
    /// Entries of parameters() that currently require a gradient.
    ParamList trainable_parameters() const;
    std::int64_t trainable_parameter_count() const;

    /// Freezes the ViT (except adapters), prompt encoder and non-fusion decoder layers.
    void freeze_backbone();

    const ModelConfig& config() const { return config_; }
    bool has_cbrnet() const { return cbrnet.has_value(); }
    /// b = sigmoid(beta) for every Atte-FFB site, keyed by site name.
    std::vector<std::pair<std::string, double>> fusion_biases() const;

    ViTMini vit;
    PromptEncoder prompt;
    std::optional<CbrNet> cbrnet;
    MaskDecoder decoder;

private:
    ModelConfig config_;
};

}  // namespace msca
