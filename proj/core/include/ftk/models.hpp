#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftk/data.hpp"
#include "ftk/layers.hpp"

namespace ftk {

enum class Arch { vgg16, mini_vgg, wide_resnet, mini_wide_resnet };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct ModelConfig {
    Arch arch = Arch::mini_vgg;
    std::size_t input_size = 64;
    std::size_t num_classes = 10;
    // Residual family: channel multiplier and blocks per stage. Empty
    // stage_blocks selects the arch default ((3,4,6,3) or (2,2,2)).
    std::size_t width_factor = 2;
    std::vector<std::size_t> stage_blocks;
    double dropout = 0.5;
    std::size_t head_hidden = 512;

    void validate() const;
};

/// A backbone ("features.") and a classification head ("head.") sharing one
/// ParamTree. The head ends in log_softmax.
struct BuiltModel {
    ModelConfig config;
    Stack backbone;
    Stack head;
    ParamTree params;
    // Width of the flattened backbone output.
    std::size_t feature_width = 0;
    bool backbone_frozen = false;

    Var forward(const Var& input, Mode mode, std::uint64_t seed = 0);
    Var forward_head(const Var& features, Mode mode, std::uint64_t seed = 0);
};

inline constexpr const char* kBackbonePrefix = "features.";
inline constexpr const char* kHeadPrefix = "head.";

std::vector<LayerSpec> backbone_layers(const ModelConfig& cfg);
// flatten -> linear(F, hidden) -> relu -> dropout -> linear(hidden, K) -> log_softmax
std::vector<LayerSpec> head_layers(std::size_t feature_width, std::size_t num_classes, std::size_t hidden,
                                   double dropout);

BuiltModel build_model(const ModelConfig& cfg, std::uint64_t init_seed);

// Discards the head and initializes a new one for num_classes.
void replace_head(BuiltModel& model, std::size_t num_classes, std::uint64_t init_seed);

// Marks every backbone param non-trainable and pins backbone batch-norm to
// running statistics. Returns the number of params matched.
std::size_t freeze_backbone(BuiltModel& model);

// Frozen-trunk features [N x F] of a batch, computed in eval mode without
// recording a graph.
Tensor feature_extract(BuiltModel& model, const Tensor& images);

} // namespace ftk
