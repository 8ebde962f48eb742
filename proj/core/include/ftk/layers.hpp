#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ftk/autograd.hpp"
#include "ftk/tensor.hpp"

namespace ftk {

enum class Mode { train, eval };

struct Param {
    std::string name;
    Var var;
    bool trainable = true;
    // Running statistics: persisted with the weights, never optimized.
    bool buffer = false;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Deep copy of every entry of a ParamTree, in tree order.
using Snapshot = std::vector<NamedTensor>;

/// Ordered, uniquely named collection of parameters and buffers.
///
/// Names are dotted paths ("features.0.weight"); order is insertion order.
/// Invariant: a param with trainable == false never requires a gradient.
class ParamTree {
  public:
    Param& add(std::string name, Tensor value, bool buffer = false);

    Param* find(std::string_view name);
    const Param* find(std::string_view name) const;
    Param& at(std::string_view name);
    const Param& at(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    std::size_t size() const { return params_.size(); }
    bool empty() const { return params_.empty(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    // Removes every entry whose name starts with prefix; returns how many.
    std::size_t remove_prefix(std::string_view prefix);

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    // Element count of non-buffer entries.
    std::size_t parameter_count() const;

    void zero_grads();
    Snapshot snapshot() const;
    // Copies snapshot values into the matching entries; names and shapes must agree.
    void restore(const Snapshot& snap);
    // Independent copy with fresh leaves.
    ParamTree clone() const;

  private:
    void reindex();

    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Sets trainable = flag on every non-buffer param whose name starts with
// prefix; returns the number of params matched.
std::size_t set_trainable(ParamTree& tree, std::string_view prefix, bool flag);

enum class LayerKind {
    conv2d,
    linear,
    relu,
    maxpool2d,
    dropout,
    batchnorm2d,
    flatten,
    log_softmax,
    residual_block,
    global_avg_pool,
};

const char* layer_kind_name(LayerKind kind);

/// One layer of a stack plus its hyperparameters. Fields irrelevant to the
/// kind are ignored.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool bias = true;
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    double p = 0.5;
    double momentum = 0.1;
    double eps = 1e-5;
    // residual_block: inner width and bottleneck (1x1-3x3-1x1) vs basic (3x3-3x3).
    std::size_t mid_channels = 0;
    bool bottleneck = false;

    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0, bool bias = true);
    static LayerSpec linear(std::size_t in, std::size_t out);
    static LayerSpec relu() { return {.kind = LayerKind::relu}; }
    static LayerSpec maxpool(std::size_t kernel, std::size_t stride, std::size_t padding = 0);
    static LayerSpec dropout(double p = 0.5);
    static LayerSpec batchnorm(std::size_t channels);
    static LayerSpec flatten() { return {.kind = LayerKind::flatten}; }
    static LayerSpec log_softmax() { return {.kind = LayerKind::log_softmax}; }
    static LayerSpec global_avg_pool() { return {.kind = LayerKind::global_avg_pool}; }
    static LayerSpec residual(std::size_t in, std::size_t mid, std::size_t out, std::size_t stride, bool bottleneck);

    void validate() const;
    bool has_projection() const { return stride != 1 || in_channels != out_channels; }
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    // Dropout layers derive their masks from (seed, layer index).
    std::uint64_t seed = 0;
    // Batch-norm uses running statistics even in train mode.
    bool freeze_batchnorm = false;
};

/// An ordered list of layers whose params live in a ParamTree under
/// "<prefix><layer index>.".
class Stack {
  public:
    Stack() = default;
    Stack(std::string prefix, std::vector<LayerSpec> layers);

    const std::string& prefix() const { return prefix_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    // Adds this stack's params to tree with Kaiming-uniform (fan-in) weights,
    // zero biases, unit gamma, zero beta. Each tensor's values depend only on
    // (seed, its name).
    void init_params(ParamTree& tree, std::uint64_t seed) const;

    Var forward(ParamTree& tree, const Var& input, const ForwardOptions& opts) const;

    // Shape after every layer for an input of the given shape.
    Shape output_shape(const Shape& input) const;

  private:
    std::string prefix_;
    std::vector<LayerSpec> layers_;
};

} // namespace ftk
