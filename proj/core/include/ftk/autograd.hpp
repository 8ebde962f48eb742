#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ftk/tensor.hpp"

namespace ftk {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Backward rule: reads self.grad and accumulates into self.inputs[i].
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    BackwardFn backward;
    const char* op = "leaf";
};

/// A tensor value traced for reverse-mode differentiation.
///
/// Var is a shared handle: copies refer to the same node. Results of ops
/// record their inputs only when some input requires a gradient, so graphs
/// built from constants (e.g. frozen-trunk inference) retain nothing.
class Var {
  public:
    Var();
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    // Leaves only; used by optimizers and checkpoint loading.
    Tensor& mutable_value();

    const std::optional<Tensor>& grad() const { return node_->grad; }
    std::optional<Tensor>& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);
    bool is_leaf() const { return !node_->backward; }
    const char* op() const { return node_->op; }

    // Clears the accumulated gradient. Never done implicitly between passes.
    void zero_grad() { node_->grad.reset(); }

    const Shape& shape() const { return value().shape(); }
    DType dtype() const { return value().dtype(); }

    /// Runs reverse-mode accumulation from this single-element root.
    ///
    /// Leaf gradients accumulate across repeated calls until zero_grad();
    /// interior gradients are recomputed on every pass.
    void backward() const;

    const NodePtr& node() const { return node_; }

  private:
    explicit Var(NodePtr node) : node_(std::move(node)) {}
    friend Var record(Tensor, std::vector<Var>, BackwardFn, const char*);

    NodePtr node_;
};

// Creates an op result. Inputs and the backward rule are kept only when at
// least one input requires a gradient.
Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

// Adds g into n.grad (allocating on first use). No-op if n does not require grad.
void accumulate_grad(Node& n, const Tensor& g);
void accumulate_grad(Node& n, Tensor&& g);

} // namespace ftk
