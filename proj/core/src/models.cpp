#include "ftk/models.hpp"

#include <variant>

#include "ftk/ops.hpp"

namespace ftk {

const char* arch_name(Arch arch) {
    switch (arch) {
    case Arch::vgg16: return "vgg16";
    case Arch::mini_vgg: return "mini_vgg";
    case Arch::wide_resnet: return "wide_resnet";
    case Arch::mini_wide_resnet: return "mini_wide_resnet";
    }
    return "unknown";
}

Arch parse_arch(const std::string& name) {
    for (Arch a : {Arch::vgg16, Arch::mini_vgg, Arch::wide_resnet, Arch::mini_wide_resnet}) {
        if (name == arch_name(a)) {
            return a;
        }
    }
    throw ConfigError("unknown architecture '" + name + "'");
}

namespace {

bool is_mini(Arch a) {
    return a == Arch::mini_vgg || a == Arch::mini_wide_resnet;
}

bool is_residual(Arch a) {
    return a == Arch::wide_resnet || a == Arch::mini_wide_resnet;
}

std::vector<std::size_t> stage_blocks_or_default(const ModelConfig& cfg) {
    if (!cfg.stage_blocks.empty()) {
        return cfg.stage_blocks;
    }
    return cfg.arch == Arch::wide_resnet ? std::vector<std::size_t>{3, 4, 6, 3} : std::vector<std::size_t>{2, 2, 2};
}

// Plain conv stack: a positive entry is a 3x3/pad-1 conv of that width plus
// ReLU, zero is a 2x2 stride-2 max-pool.
std::vector<LayerSpec> vgg_layers(std::initializer_list<std::size_t> plan) {
    std::vector<LayerSpec> layers;
    std::size_t in = 3;
    for (std::size_t v : plan) {
        if (v == 0) {
            layers.push_back(LayerSpec::maxpool(2, 2));
        } else {
            layers.push_back(LayerSpec::conv(in, v, 3, 1, 1));
            layers.push_back(LayerSpec::relu());
            in = v;
        }
    }
    return layers;
}

} // namespace

void ModelConfig::validate() const {
    if (num_classes < 1) {
        throw ConfigError("num_classes must be >= 1");
    }
    if (is_mini(arch) && input_size != 64) {
        throw ConfigError(std::string(arch_name(arch)) + " requires input_size 64, got " + std::to_string(input_size));
    }
    if (!is_mini(arch) && input_size != 224 && input_size != 64) {
        throw ConfigError(std::string(arch_name(arch)) + " supports input_size 224 or 64, got " +
                          std::to_string(input_size));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("head dropout must be in [0, 1)");
    }
    if (head_hidden == 0) {
        throw ConfigError("head_hidden must be positive");
    }
    if (is_residual(arch)) {
        if (width_factor < 1) {
            throw ConfigError("width_factor must be >= 1");
        }
        const auto blocks = stage_blocks_or_default(*this);
        const std::size_t stages = arch == Arch::wide_resnet ? 4 : 3;
        if (blocks.size() != stages) {
            throw ConfigError(std::string(arch_name(arch)) + " needs " + std::to_string(stages) +
                              " stage block counts");
        }
        for (auto b : blocks) {
            if (b == 0) {
                throw ConfigError("stage block counts must be positive");
            }
        }
    } else if (!stage_blocks.empty()) {
        throw ConfigError("stage_blocks only applies to residual architectures");
    }
}

std::vector<LayerSpec> backbone_layers(const ModelConfig& cfg) {
    switch (cfg.arch) {
    case Arch::vgg16:
        return vgg_layers({64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0});
    case Arch::mini_vgg: return vgg_layers({32, 32, 0, 64, 64, 0, 128, 128, 0});
    case Arch::wide_resnet: {
        std::vector<LayerSpec> layers{LayerSpec::conv(3, 64, 7, 2, 3, false), LayerSpec::batchnorm(64),
                                      LayerSpec::relu(), LayerSpec::maxpool(3, 2, 1)};
        const auto blocks = stage_blocks_or_default(cfg);
        std::size_t in = 64;
        for (std::size_t stage = 0; stage < blocks.size(); ++stage) {
            const std::size_t base = 64u << stage;
            for (std::size_t b = 0; b < blocks[stage]; ++b) {
                const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
                layers.push_back(LayerSpec::residual(in, base * cfg.width_factor, base * 4, stride, true));
                in = base * 4;
            }
        }
        layers.push_back(LayerSpec::global_avg_pool());
        return layers;
    }
    case Arch::mini_wide_resnet: {
        std::vector<LayerSpec> layers{LayerSpec::conv(3, 16, 3, 1, 1, false), LayerSpec::batchnorm(16),
                                      LayerSpec::relu()};
        const auto blocks = stage_blocks_or_default(cfg);
        std::size_t in = 16;
        for (std::size_t stage = 0; stage < blocks.size(); ++stage) {
            const std::size_t width = (16u << stage) * cfg.width_factor;
            for (std::size_t b = 0; b < blocks[stage]; ++b) {
                const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
                layers.push_back(LayerSpec::residual(in, width, width, stride, false));
                in = width;
            }
        }
        layers.push_back(LayerSpec::global_avg_pool());
        return layers;
    }
    }
    throw ConfigError("unknown architecture");
}

std::vector<LayerSpec> head_layers(std::size_t feature_width, std::size_t num_classes, std::size_t hidden,
                                   double dropout) {
    return {LayerSpec::flatten(),           LayerSpec::linear(feature_width, hidden),
            LayerSpec::relu(),              LayerSpec::dropout(dropout),
            LayerSpec::linear(hidden, num_classes), LayerSpec::log_softmax()};
}

BuiltModel build_model(const ModelConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    BuiltModel model;
    model.config = cfg;
    model.backbone = Stack(kBackbonePrefix, backbone_layers(cfg));
    const Shape out = model.backbone.output_shape({1, 3, cfg.input_size, cfg.input_size});
    model.feature_width = shape_numel(out);
    model.backbone.init_params(model.params, init_seed);
    replace_head(model, cfg.num_classes, init_seed);
    return model;
}

void replace_head(BuiltModel& model, std::size_t num_classes, std::uint64_t init_seed) {
    if (num_classes < 1) {
        throw ConfigError("num_classes must be >= 1");
    }
    model.params.remove_prefix(kHeadPrefix);
    model.config.num_classes = num_classes;
    model.head = Stack(kHeadPrefix, head_layers(model.feature_width, num_classes, model.config.head_hidden,
                                                model.config.dropout));
    model.head.init_params(model.params, init_seed);
}

std::size_t freeze_backbone(BuiltModel& model) {
    model.backbone_frozen = true;
    return set_trainable(model.params, kBackbonePrefix, false);
}

Var BuiltModel::forward(const Var& input, Mode mode, std::uint64_t seed) {
    const Var features = backbone.forward(params, input, {mode, seed, backbone_frozen});
    return forward_head(features, mode, seed);
}

Var BuiltModel::forward_head(const Var& features, Mode mode, std::uint64_t seed) {
    return head.forward(params, features, {mode, seed, false});
}

Tensor feature_extract(BuiltModel& model, const Tensor& images) {
    if (!model.backbone_frozen) {
        throw StateError("feature_extract requires a frozen backbone");
    }
    for (const auto& p : model.params) {
        if (p.name.starts_with(kBackbonePrefix) && p.trainable) {
            throw StateError("feature_extract: backbone param '" + p.name + "' is trainable");
        }
    }
    const Var out = model.backbone.forward(model.params, Var(images), {Mode::eval, 0, true});
    const std::size_t n = out.shape().at(0);
    return out.value().reshaped({n, out.value().numel() / n});
}

} // namespace ftk
