#include "ftk/layers.hpp"

#include <cmath>

#include "ftk/ops.hpp"
#include "ftk/rng.hpp"

namespace ftk {

// ---------------------------------------------------------------- ParamTree

Param& ParamTree::add(std::string name, Tensor value, bool buffer) {
    if (index_.contains(name)) {
        throw ValueError("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), Var(std::move(value), !buffer), !buffer, buffer});
    return params_.back();
}

Param* ParamTree::find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
}

const Param* ParamTree::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
}

Param& ParamTree::at(std::string_view name) {
    if (auto* p = find(name)) {
        return *p;
    }
    throw ValueError("no parameter named '" + std::string(name) + "'");
}

const Param& ParamTree::at(std::string_view name) const {
    if (const auto* p = find(name)) {
        return *p;
    }
    throw ValueError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParamTree::remove_prefix(std::string_view prefix) {
    const auto before = params_.size();
    std::erase_if(params_, [&](const Param& p) { return p.name.starts_with(prefix); });
    reindex();
    return before - params_.size();
}

void ParamTree::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) {
        index_.emplace(params_[i].name, i);
    }
}

std::vector<std::string> ParamTree::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.name);
    }
    return out;
}

std::vector<std::string> ParamTree::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
        if (p.trainable) {
            out.push_back(p.name);
        }
    }
    return out;
}

std::size_t ParamTree::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (!p.buffer) {
            n += p.var.value().numel();
        }
    }
    return n;
}

void ParamTree::zero_grads() {
    for (auto& p : params_) {
        p.var.zero_grad();
    }
}

Snapshot ParamTree::snapshot() const {
    Snapshot snap;
    snap.reserve(params_.size());
    for (const auto& p : params_) {
        snap.push_back({p.name, p.var.value()});
    }
    return snap;
}

void ParamTree::restore(const Snapshot& snap) {
    if (snap.size() != params_.size()) {
        throw ValueError("snapshot has " + std::to_string(snap.size()) + " entries, tree has " +
                         std::to_string(params_.size()));
    }
    for (const auto& entry : snap) {
        Param& p = at(entry.name);
        if (p.var.shape() != entry.tensor.shape() || p.var.dtype() != entry.tensor.dtype()) {
            throw ShapeError("snapshot entry '" + entry.name + "' is " + shape_str(entry.tensor.shape()) +
                             ", tree has " + shape_str(p.var.shape()));
        }
        p.var.mutable_value() = entry.tensor;
    }
}

ParamTree ParamTree::clone() const {
    ParamTree out;
    for (const auto& p : params_) {
        Param& q = out.add(p.name, p.var.value(), p.buffer);
        q.trainable = p.trainable;
        q.var.set_requires_grad(p.trainable);
    }
    return out;
}

std::size_t set_trainable(ParamTree& tree, std::string_view prefix, bool flag) {
    std::size_t matched = 0;
    for (auto& p : tree) {
        if (p.buffer || !p.name.starts_with(prefix)) {
            continue;
        }
        p.trainable = flag;
        p.var.set_requires_grad(flag);
        ++matched;
    }
    return matched;
}

// ---------------------------------------------------------------- LayerSpec

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::batchnorm2d: return "batchnorm2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::log_softmax: return "log_softmax";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    }
    return "unknown";
}

LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding, bool bias) {
    return {.kind = LayerKind::conv2d,
            .in_channels = in,
            .out_channels = out,
            .kernel = kernel,
            .stride = stride,
            .padding = padding,
            .bias = bias};
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
    return {.kind = LayerKind::linear, .in_features = in, .out_features = out};
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride, std::size_t padding) {
    return {.kind = LayerKind::maxpool2d, .kernel = kernel, .stride = stride, .padding = padding};
}

LayerSpec LayerSpec::dropout(double p) {
    return {.kind = LayerKind::dropout, .p = p};
}

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
    return {.kind = LayerKind::batchnorm2d, .in_channels = channels, .out_channels = channels};
}

LayerSpec LayerSpec::residual(std::size_t in, std::size_t mid, std::size_t out, std::size_t stride,
                              bool bottleneck) {
    return {.kind = LayerKind::residual_block,
            .in_channels = in,
            .out_channels = out,
            .stride = stride,
            .mid_channels = mid,
            .bottleneck = bottleneck};
}

void LayerSpec::validate() const {
    auto fail = [this](const std::string& why) {
        throw ValueError(std::string("invalid ") + layer_kind_name(kind) + " layer: " + why);
    };
    switch (kind) {
    case LayerKind::conv2d:
        if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
            fail("channels, kernel and stride must be positive");
        }
        break;
    case LayerKind::linear:
        if (in_features == 0 || out_features == 0) {
            fail("features must be positive");
        }
        break;
    case LayerKind::maxpool2d:
        if (kernel == 0 || stride == 0 || padding >= kernel) {
            fail("kernel and stride must be positive and padding smaller than kernel");
        }
        break;
    case LayerKind::dropout:
        if (!(p >= 0.0 && p < 1.0)) {
            fail("p must be in [0, 1)");
        }
        break;
    case LayerKind::batchnorm2d:
        if (in_channels == 0 || !(eps > 0.0) || !(momentum >= 0.0 && momentum <= 1.0)) {
            fail("needs channels > 0, eps > 0, momentum in [0, 1]");
        }
        break;
    case LayerKind::residual_block:
        if (in_channels == 0 || mid_channels == 0 || out_channels == 0 || stride == 0) {
            fail("channels and stride must be positive");
        }
        break;
    default: break;
    }
}

// ---------------------------------------------------------------- Stack

namespace {

enum class InitKind { kaiming, zeros, ones };

struct ParamDef {
    std::string suffix;
    Shape shape;
    InitKind init;
    bool buffer;
    std::size_t fan_in;
};

void conv_defs(std::vector<ParamDef>& defs, const std::string& name, std::size_t in, std::size_t out,
               std::size_t k, bool bias) {
    defs.push_back({name + ".weight", {out, in, k, k}, InitKind::kaiming, false, in * k * k});
    if (bias) {
        defs.push_back({name + ".bias", {out}, InitKind::zeros, false, 0});
    }
}

void bn_defs(std::vector<ParamDef>& defs, const std::string& name, std::size_t c) {
    defs.push_back({name + ".weight", {c}, InitKind::ones, false, 0});
    defs.push_back({name + ".bias", {c}, InitKind::zeros, false, 0});
    defs.push_back({name + ".running_mean", {c}, InitKind::zeros, true, 0});
    defs.push_back({name + ".running_var", {c}, InitKind::ones, true, 0});
}

std::vector<ParamDef> param_defs(const LayerSpec& l) {
    std::vector<ParamDef> defs;
    switch (l.kind) {
    case LayerKind::conv2d:
        defs.push_back({"weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}, InitKind::kaiming, false,
                        l.in_channels * l.kernel * l.kernel});
        if (l.bias) {
            defs.push_back({"bias", {l.out_channels}, InitKind::zeros, false, 0});
        }
        break;
    case LayerKind::linear:
        defs.push_back({"weight", {l.out_features, l.in_features}, InitKind::kaiming, false, l.in_features});
        defs.push_back({"bias", {l.out_features}, InitKind::zeros, false, 0});
        break;
    case LayerKind::batchnorm2d:
        defs.push_back({"weight", {l.in_channels}, InitKind::ones, false, 0});
        defs.push_back({"bias", {l.in_channels}, InitKind::zeros, false, 0});
        defs.push_back({"running_mean", {l.in_channels}, InitKind::zeros, true, 0});
        defs.push_back({"running_var", {l.in_channels}, InitKind::ones, true, 0});
        break;
    case LayerKind::residual_block:
        if (l.bottleneck) {
            conv_defs(defs, "conv1", l.in_channels, l.mid_channels, 1, false);
            bn_defs(defs, "bn1", l.mid_channels);
            conv_defs(defs, "conv2", l.mid_channels, l.mid_channels, 3, false);
            bn_defs(defs, "bn2", l.mid_channels);
            conv_defs(defs, "conv3", l.mid_channels, l.out_channels, 1, false);
            bn_defs(defs, "bn3", l.out_channels);
        } else {
            conv_defs(defs, "conv1", l.in_channels, l.mid_channels, 3, false);
            bn_defs(defs, "bn1", l.mid_channels);
            conv_defs(defs, "conv2", l.mid_channels, l.out_channels, 3, false);
            bn_defs(defs, "bn2", l.out_channels);
        }
        if (l.has_projection()) {
            conv_defs(defs, "shortcut.conv", l.in_channels, l.out_channels, 1, false);
            bn_defs(defs, "shortcut.bn", l.out_channels);
        }
        break;
    default: break;
    }
    return defs;
}

std::uint64_t name_hash(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[noreturn]] void layer_shape_error(const std::string& layer, const LayerSpec& l, const std::string& expected,
                                    const Shape& got) {
    throw ShapeError("layer " + layer + " (" + layer_kind_name(l.kind) + "): expected " + expected + ", got " +
                     shape_str(got));
}

void check_channels(const std::string& layer, const LayerSpec& l, const Shape& s, std::size_t channels) {
    if (s.size() != 4 || s[1] != channels) {
        layer_shape_error(layer, l, "[N," + std::to_string(channels) + ",H,W]", s);
    }
}

struct BlockCtx {
    ParamTree& tree;
    const std::string& base;
    const ForwardOptions& opts;
    bool training_bn;

    Var w(const std::string& suffix) { return tree.at(base + suffix).var; }
    Var conv(const Var& x, const std::string& name, std::size_t stride, std::size_t pad) {
        return conv2d(x, w(name + ".weight"), std::nullopt, {stride, pad});
    }
    Var bn(const Var& x, const std::string& name, const LayerSpec& l) {
        Tensor& rm = tree.at(base + name + ".running_mean").var.mutable_value();
        Tensor& rv = tree.at(base + name + ".running_var").var.mutable_value();
        return batch_norm2d(x, w(name + ".weight"), w(name + ".bias"), rm, rv, l.momentum, l.eps, training_bn);
    }
};

} // namespace

Stack::Stack(std::string prefix, std::vector<LayerSpec> layers) : prefix_(std::move(prefix)), layers_(std::move(layers)) {
    for (const auto& l : layers_) {
        l.validate();
    }
}

void Stack::init_params(ParamTree& tree, std::uint64_t seed) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string base = prefix_ + std::to_string(i) + ".";
        for (const auto& def : param_defs(layers_[i])) {
            const std::string name = base + def.suffix;
            Tensor t(def.shape, DType::f32);
            switch (def.init) {
            case InitKind::zeros: break;
            case InitKind::ones: t.fill(1.0); break;
            case InitKind::kaiming: {
                SplitMix64 rng(stream_seed(seed, 0, name_hash(name)));
                const double bound = std::sqrt(6.0 / static_cast<double>(def.fan_in));
                for (auto& v : t.span<float>()) {
                    v = static_cast<float>(rng.uniform(-bound, bound));
                }
                break;
            }
            }
            tree.add(name, std::move(t), def.buffer);
        }
    }
}

Var Stack::forward(ParamTree& tree, const Var& input, const ForwardOptions& opts) const {
    Var x = input;
    const bool training = opts.mode == Mode::train;
    const bool training_bn = training && !opts.freeze_batchnorm;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        const std::string layer = prefix_ + std::to_string(i);
        const std::string base = layer + ".";
        const Shape& s = x.shape();
        try {
            switch (l.kind) {
            case LayerKind::conv2d: {
                check_channels(layer, l, s, l.in_channels);
                std::optional<Var> bias;
                if (l.bias) {
                    bias = tree.at(base + "bias").var;
                }
                x = conv2d(x, tree.at(base + "weight").var, bias, {l.stride, l.padding});
                break;
            }
            case LayerKind::linear:
                if (s.size() != 2 || s[1] != l.in_features) {
                    layer_shape_error(layer, l, "[N," + std::to_string(l.in_features) + "]", s);
                }
                x = linear(x, tree.at(base + "weight").var, tree.at(base + "bias").var);
                break;
            case LayerKind::relu: x = relu(x); break;
            case LayerKind::maxpool2d:
                if (s.size() != 4) {
                    layer_shape_error(layer, l, "[N,C,H,W]", s);
                }
                x = maxpool2d(x, l.kernel, l.stride, l.padding);
                break;
            case LayerKind::dropout: x = dropout(x, l.p, training, stream_seed(opts.seed, 0, i)); break;
            case LayerKind::batchnorm2d: {
                check_channels(layer, l, s, l.in_channels);
                BlockCtx ctx{tree, base, opts, training_bn};
                Tensor& rm = tree.at(base + "running_mean").var.mutable_value();
                Tensor& rv = tree.at(base + "running_var").var.mutable_value();
                x = batch_norm2d(x, ctx.w("weight"), ctx.w("bias"), rm, rv, l.momentum, l.eps, training_bn);
                break;
            }
            case LayerKind::flatten: x = flatten(x); break;
            case LayerKind::log_softmax:
                if (s.size() != 2) {
                    layer_shape_error(layer, l, "[N,K]", s);
                }
                x = log_softmax(x);
                break;
            case LayerKind::global_avg_pool:
                if (s.size() != 4) {
                    layer_shape_error(layer, l, "[N,C,H,W]", s);
                }
                x = global_avg_pool(x);
                break;
            case LayerKind::residual_block: {
                check_channels(layer, l, s, l.in_channels);
                BlockCtx ctx{tree, base, opts, training_bn};
                Var y;
                if (l.bottleneck) {
                    y = relu(ctx.bn(ctx.conv(x, "conv1", 1, 0), "bn1", l));
                    y = relu(ctx.bn(ctx.conv(y, "conv2", l.stride, 1), "bn2", l));
                    y = ctx.bn(ctx.conv(y, "conv3", 1, 0), "bn3", l);
                } else {
                    y = relu(ctx.bn(ctx.conv(x, "conv1", l.stride, 1), "bn1", l));
                    y = ctx.bn(ctx.conv(y, "conv2", 1, 1), "bn2", l);
                }
                Var shortcut = x;
                if (l.has_projection()) {
                    shortcut = ctx.bn(ctx.conv(x, "shortcut.conv", l.stride, 0), "shortcut.bn", l);
                }
                x = relu(add(y, shortcut));
                break;
            }
            }
        } catch (const ShapeError& e) {
            const std::string what = e.what();
            if (what.starts_with("layer ")) {
                throw;
            }
            throw ShapeError("layer " + layer + " (" + layer_kind_name(l.kind) + "): " + what);
        }
    }
    return x;
}

Shape Stack::output_shape(const Shape& input) const {
    Shape s = input;
    for (const auto& l : layers_) {
        switch (l.kind) {
        case LayerKind::conv2d:
            s = {s.at(0), l.out_channels, conv_out_extent(s.at(2), l.kernel, l.stride, l.padding),
                 conv_out_extent(s.at(3), l.kernel, l.stride, l.padding)};
            break;
        case LayerKind::linear: s = {s.at(0), l.out_features}; break;
        case LayerKind::maxpool2d:
            s = {s.at(0), s.at(1), conv_out_extent(s.at(2), l.kernel, l.stride, l.padding),
                 conv_out_extent(s.at(3), l.kernel, l.stride, l.padding)};
            break;
        case LayerKind::flatten: s = {s.at(0), shape_numel(s) / s.at(0)}; break;
        case LayerKind::global_avg_pool: s = {s.at(0), s.at(1)}; break;
        case LayerKind::residual_block:
            s = {s.at(0), l.out_channels, conv_out_extent(s.at(2), 3, l.stride, 1),
                 conv_out_extent(s.at(3), 3, l.stride, 1)};
            break;
        default: break;
        }
    }
    return s;
}

} // namespace ftk
