#include "msca/model.hpp"

#include "msca/random.hpp"

namespace msca {

namespace {

enum Stream : std::uint64_t { kVit = 1, kFourier, kPrompt, kCbr, kDecoder, kFusion };

Rng stream(const ModelConfig& cfg, Stream s) { return Rng(derive_seed(cfg.seed, s)); }

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng vit_rng = stream(config_, kVit);
    Rng fourier_rng = stream(config_, kFourier);
    Rng prompt_rng = stream(config_, kPrompt);
    Rng decoder_rng = stream(config_, kDecoder);
    Rng fusion_rng = stream(config_, kFusion);
    vit = ViTMini(config_.image_size, config_.width, config_.embed_dim, config_.depth, config_.heads, vit_rng);
    prompt = PromptEncoder(config_.embed_dim, fourier_rng, prompt_rng);
    if (config_.cbrnet_enabled) {
        Rng cbr_rng = stream(config_, kCbr);
        cbrnet.emplace(config_.width, cbr_rng);
    }
    decoder = MaskDecoder(config_.width, config_.embed_dim, config_.fusion_mode, decoder_rng, fusion_rng);
    if (!config_.adapter_enabled) {
        ParamList adapters;
        vit.collect_adapters("", adapters);
        set_trainable(adapters, false);
    }
    if (config_.freeze_backbone) freeze_backbone();
}

Tensor Model::forward(const Tensor& images, std::span<const BoxPrompt> boxes) const {
    return forward(images, boxes, config_.adapter_enabled);
}

Tensor Model::forward(const Tensor& images, std::span<const BoxPrompt> boxes, bool adapters_enabled) const {
    if (images.ndim() != 4 || static_cast<std::size_t>(images.dim(0)) != boxes.size()) {
        throw DimensionError("forward: need one box per image, got " + std::to_string(boxes.size()) +
                             " boxes for " + shape_str(images.shape()));
    }
    const int h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
    Tensor global = vit.encode(images, adapters_enabled);
    Tensor tokens = prompt.encode(boxes, w, h);
    if (!cbrnet || config_.fusion_mode == FusionMode::None) {
        return decoder.decode(global, Tensor(), nullptr, tokens);
    }
    FeaturePyramid pyramid = cbrnet->forward(images);
    Tensor f4 = cbrnet->align_feature4(pyramid.f4);
    return decoder.decode(global, f4, &pyramid, tokens);
}

ParamList Model::parameters() const {
    ParamList out;
    vit.collect("vit", out, config_.adapter_enabled);
    prompt.collect("prompt", out);
    if (cbrnet) cbrnet->collect("cbrnet", out);
    decoder.collect("decoder", out);
    return out;
}

ParamList Model::trainable_parameters() const {
    ParamList out;
    for (auto& p : parameters()) {
        if (!p.buffer && p.tensor.requires_grad()) out.push_back(p);
    }
    return out;
}

std::int64_t Model::trainable_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : trainable_parameters()) n += p.tensor.numel();
    return n;
}

void Model::freeze_backbone() {
    ParamList frozen;
    vit.collect("vit", frozen, false);
    prompt.collect("prompt", frozen);
    decoder.collect_backbone("decoder", frozen);
    set_trainable(frozen, false);
}

std::vector<std::pair<std::string, double>> Model::fusion_biases() const {
    std::vector<std::pair<std::string, double>> out;
    if (const auto* f = decoder.deep.atte_ffb()) out.emplace_back("deep_fuse", f->bias_value());
    const char* names[] = {"skip3", "skip2", "skip1"};
    for (std::size_t i = 0; i < decoder.skips.size(); ++i) {
        if (const auto* f = decoder.skips[i].atte_ffb()) out.emplace_back(names[i], f->bias_value());
    }
    return out;
}

}  // namespace msca
