#pragma once

// Generic U-shape builder. All six variants come from one block-placement
// table: variant -> {encoder kind, bottleneck kind, decoder kind, deep
// supervision}. Encoders halve resolution and raise channels per stage;
// decoders mirror with skip fusion by concatenation + 1x1 conv.

#include <memory>
#include <optional>
#include <string>

#include "stenoseg/blocks.hpp"

namespace stenoseg {

enum class Variant { UMambaBot, UMambaEnc, LightMUNet, SwinUMamba, SwinUMambaD, SwinUNetR };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::UMambaBot: return "umamba_bot";
        case Variant::UMambaEnc: return "umamba_enc";
        case Variant::LightMUNet: return "lightm_unet";
        case Variant::SwinUMamba: return "swin_umamba";
        case Variant::SwinUMambaD: return "swin_umamba_d";
        case Variant::SwinUNetR: return "swin_unetr";
    }
    return "?";
}

inline std::optional<Variant> variant_from_name(const std::string& s) {
    for (Variant v : {Variant::UMambaBot, Variant::UMambaEnc, Variant::LightMUNet,
                      Variant::SwinUMamba, Variant::SwinUMambaD, Variant::SwinUNetR})
        if (s == variant_name(v)) return v;
    return std::nullopt;
}

struct BlockPlacement {
    BlockKind encoder;
    BlockKind bottleneck;
    BlockKind decoder;
    bool deep_supervision;
};

inline BlockPlacement placement(Variant v) {
    switch (v) {
        case Variant::UMambaBot:
            return {BlockKind::ResidualConv, BlockKind::UMambaBlock, BlockKind::ResidualConv,
                    false};
        case Variant::UMambaEnc:
            return {BlockKind::UMambaBlock, BlockKind::UMambaBlock, BlockKind::ResidualConv,
                    false};
        case Variant::LightMUNet:
            return {BlockKind::RVMLayer, BlockKind::RVMLayer, BlockKind::ResidualConv, false};
        case Variant::SwinUMamba:
            return {BlockKind::VSS, BlockKind::VSS, BlockKind::ResidualConv, true};
        case Variant::SwinUMambaD:
            return {BlockKind::VSS, BlockKind::VSS, BlockKind::VSS, true};
        case Variant::SwinUNetR:
            return {BlockKind::SwinWindowAttention, BlockKind::SwinWindowAttention,
                    BlockKind::ResidualConv, false};
    }
    throw ShapeError("unknown variant");
}

struct ModelSpec {
    Variant variant = Variant::UMambaBot;
    std::vector<std::size_t> stage_channels{8, 16, 32};
    std::vector<std::size_t> depths{1, 1, 1};
    std::size_t input_channels = 1;
    std::size_t class_count = 2;
    bool deep_supervision = false;  // forced on for SwinUMamba / SwinUMambaD
    std::size_t bottleneck_depth = 1;  // forced to 4 for LightM-UNet
    std::size_t state_size = 8;
    std::size_t expansion = 2;
    std::size_t window_size = 4;
    std::size_t head_count = 2;

    std::size_t stages() const { return stage_channels.size(); }

    void validate() const {
        if (stage_channels.size() < 2) throw ShapeError("need at least 2 stages");
        if (depths.size() != stage_channels.size())
            throw ShapeError("depths/stage_channels length mismatch");
        for (std::size_t i = 1; i < stage_channels.size(); ++i)
            if (stage_channels[i] <= stage_channels[i - 1])
                throw ShapeError("stage channels must strictly increase through the encoder");
        if (class_count < 2) throw ShapeError("need at least 2 classes");
    }
};

template <class T>
class Network {
  public:
    ModelSpec spec;
    BlockPlacement place{};

    Conv2dLayer<T> stem;
    std::vector<Conv2dLayer<T>> down;  // stage i>0 entry, stride 2
    std::vector<std::vector<std::unique_ptr<Block2D<T>>>> enc_blocks;
    std::vector<std::unique_ptr<Block2D<T>>> bottleneck;
    std::vector<Conv2dLayer<T>> up_proj;  // 1x1 after nearest upsample
    std::vector<Conv2dLayer<T>> fuse;     // 1x1 on concatenated skip
    std::vector<std::vector<std::unique_ptr<Block2D<T>>>> dec_blocks;
    Conv2dLayer<T> head;
    std::vector<Conv2dLayer<T>> aux_heads;  // finest-first

    ParamRegistry<T> registry;

    struct Output {
        Tensor<T> primary;
        std::vector<Tensor<T>> aux;  // finest resolution first
    };

    std::size_t count_params() const { return registry.count_scalars(); }

    std::vector<Tensor<T>> parameters() {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : registry.items) out.push_back(t);
        return out;
    }

    Output forward(const Tensor<T>& images) const {
        if (images.rank() != 4 || images.extent(1) != spec.input_channels)
            throw ShapeError("forward: expected [B," + std::to_string(spec.input_channels) +
                             ",H,W] input");
        const std::size_t S = spec.stages();
        const std::size_t div = std::size_t(1) << (S - 1);
        if (images.extent(2) % div || images.extent(3) % div)
            throw ShapeError("spatial extents must be divisible by 2^(stages-1)");

        std::vector<Tensor<T>> skips;
        Tensor<T> x = stem.forward(images);
        for (std::size_t i = 0; i < S; ++i) {
            if (i > 0) x = down[i - 1].forward(x);
            for (const auto& b : enc_blocks[i]) x = b->forward(x);
            if (i + 1 < S) skips.push_back(x);
        }
        for (const auto& b : bottleneck) x = b->forward(x);

        Output out;
        std::vector<Tensor<T>> aux_coarse_first;
        if (place.deep_supervision || spec.deep_supervision)
            aux_coarse_first.push_back(aux_heads_fwd(0, x));
        for (std::size_t j = S - 1; j-- > 0;) {
            x = up_proj[j].forward(resample(x, ResampleMode::UpsampleNearest2));
            x = fuse[j].forward(concat<T>({x, skips[j]}, 1));
            for (const auto& b : dec_blocks[j]) x = b->forward(x);
            if ((place.deep_supervision || spec.deep_supervision) && j > 0)
                aux_coarse_first.push_back(aux_heads_fwd(S - 1 - j, x));
        }
        out.primary = head.forward(x);
        for (auto it = aux_coarse_first.rbegin(); it != aux_coarse_first.rend(); ++it)
            out.aux.push_back(*it);
        return out;
    }

  private:
    Tensor<T> aux_heads_fwd(std::size_t k, const Tensor<T>& x) const {
        return aux_heads[k].forward(x);
    }
};

template <class T>
inline std::unique_ptr<Network<T>> build(const ModelSpec& spec_in, std::uint64_t seed) {
    ModelSpec spec = spec_in;
    spec.validate();
    const BlockPlacement place = placement(spec.variant);
    if (place.deep_supervision) spec.deep_supervision = true;
    if (spec.variant == Variant::LightMUNet) spec.bottleneck_depth = 4;

    auto net = std::make_unique<Network<T>>();
    net->spec = spec;
    net->place = place;
    std::mt19937_64 rng(seed);

    const std::size_t S = spec.stages();
    auto cfg_for = [&](BlockKind kind, std::size_t channels, std::size_t index) {
        BlockConfig c;
        c.kind = kind;
        c.channels = channels;
        c.state_size = spec.state_size;
        c.expansion = spec.expansion;
        c.window_size = spec.window_size;
        c.head_count = spec.head_count;
        c.shift = (kind == BlockKind::SwinWindowAttention) && (index % 2 == 1);
        return c;
    };

    net->stem = Conv2dLayer<T>(spec.input_channels, spec.stage_channels[0], 3, 1, 1, 1, rng);
    net->enc_blocks.resize(S);
    for (std::size_t i = 0; i < S; ++i) {
        if (i > 0)
            net->down.emplace_back(spec.stage_channels[i - 1], spec.stage_channels[i], 3, 2, 1, 1,
                                   rng);
        for (std::size_t d = 0; d < spec.depths[i]; ++d)
            net->enc_blocks[i].push_back(
                make_block<T>(cfg_for(place.encoder, spec.stage_channels[i], d), rng));
    }
    for (std::size_t d = 0; d < spec.bottleneck_depth; ++d)
        net->bottleneck.push_back(
            make_block<T>(cfg_for(place.bottleneck, spec.stage_channels[S - 1], d), rng));

    net->up_proj.resize(S - 1);
    net->fuse.resize(S - 1);
    net->dec_blocks.resize(S - 1);
    for (std::size_t j = S - 1; j-- > 0;) {
        net->up_proj[j] =
            Conv2dLayer<T>(spec.stage_channels[j + 1], spec.stage_channels[j], 1, 1, 0, 1, rng);
        net->fuse[j] =
            Conv2dLayer<T>(2 * spec.stage_channels[j], spec.stage_channels[j], 1, 1, 0, 1, rng);
        for (std::size_t d = 0; d < spec.depths[j]; ++d)
            net->dec_blocks[j].push_back(
                make_block<T>(cfg_for(place.decoder, spec.stage_channels[j], d), rng));
    }
    net->head = Conv2dLayer<T>(spec.stage_channels[0], spec.class_count, 1, 1, 0, 1, rng);
    if (spec.deep_supervision) {
        // one head at the bottleneck resolution plus one per intermediate
        // decoder stage (coarse-first construction order)
        net->aux_heads.emplace_back(spec.stage_channels[S - 1], spec.class_count, 1, 1, 0, 1, rng);
        for (std::size_t j = S - 1; j-- > 1;)
            net->aux_heads.emplace_back(spec.stage_channels[j], spec.class_count, 1, 1, 0, 1,
                                        rng);
    }

    // stable parameter names
    auto& r = net->registry;
    net->stem.register_params("stem", r);
    for (std::size_t i = 0; i < S; ++i) {
        if (i > 0) net->down[i - 1].register_params("down" + std::to_string(i), r);
        for (std::size_t d = 0; d < net->enc_blocks[i].size(); ++d)
            net->enc_blocks[i][d]->register_params(
                "enc" + std::to_string(i) + ".block" + std::to_string(d), r);
    }
    for (std::size_t d = 0; d < net->bottleneck.size(); ++d)
        net->bottleneck[d]->register_params("bottleneck.block" + std::to_string(d), r);
    for (std::size_t j = 0; j + 1 < S; ++j) {
        net->up_proj[j].register_params("dec" + std::to_string(j) + ".up", r);
        net->fuse[j].register_params("dec" + std::to_string(j) + ".fuse", r);
        for (std::size_t d = 0; d < net->dec_blocks[j].size(); ++d)
            net->dec_blocks[j][d]->register_params(
                "dec" + std::to_string(j) + ".block" + std::to_string(d), r);
    }
    net->head.register_params("head", r);
    for (std::size_t k = 0; k < net->aux_heads.size(); ++k)
        net->aux_heads[k].register_params("aux_head" + std::to_string(k), r);
    return net;
}

// Named presets. "tiny" is the desk-scale configuration used by the
// acceptance suite; full-size presets approximate each variant's usual
// parameter budget (only LightM-UNet's 5M is treated as an anchored check).
inline ModelSpec preset(Variant v, const std::string& size) {
    ModelSpec s;
    s.variant = v;
    if (size == "tiny") {
        s.stage_channels = {8, 16, 32};
        s.depths = {1, 1, 1};
        s.state_size = 4;
        s.expansion = 2;
        s.window_size = 4;
        s.head_count = 2;
        return s;
    }
    if (size == "full") {
        s.state_size = 16;
        s.expansion = 2;
        s.window_size = 8;
        s.head_count = 4;
        switch (v) {
            case Variant::LightMUNet:
                s.stage_channels = {32, 64, 128, 256};
                s.depths = {1, 2, 2, 2};
                break;
            case Variant::SwinUNetR:  // ~25M
                s.stage_channels = {48, 96, 192, 384};
                s.depths = {2, 2, 2, 2};
                break;
            case Variant::SwinUMambaD:  // ~27M
                s.stage_channels = {48, 96, 192, 384};
                s.depths = {2, 2, 2, 2};
                break;
            case Variant::SwinUMamba:  // ~60M
                s.stage_channels = {64, 128, 256, 512};
                s.depths = {2, 2, 2, 2};
                break;
            case Variant::UMambaEnc:  // ~104M
                s.stage_channels = {64, 128, 256, 512, 1024};
                s.depths = {2, 2, 2, 2, 2};
                break;
            case Variant::UMambaBot:  // ~500M (defined, not exercised)
                s.stage_channels = {128, 256, 512, 1024, 2048};
                s.depths = {2, 2, 2, 2, 2};
                break;
        }
        return s;
    }
    throw ShapeError("unknown preset size: " + size);
}

}  // namespace stenoseg
