#include "ftk/autograd.hpp"

#include <unordered_set>

namespace ftk {

Var::Var() : node_(std::make_shared<Node>()) {}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor& Var::mutable_value() {
    if (!is_leaf()) {
        throw StateError(std::string("cannot mutate the value of non-leaf op '") + node_->op + "'");
    }
    return node_->value;
}

void Var::set_requires_grad(bool flag) {
    if (!is_leaf()) {
        throw StateError("requires_grad can only be changed on leaves");
    }
    node_->requires_grad = flag;
    if (!flag) {
        node_->grad.reset();
    }
}

Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    for (const auto& in : inputs) {
        if (in.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node());
        }
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void accumulate_grad(Node& n, const Tensor& g) {
    if (!n.requires_grad) {
        return;
    }
    check_same_shape(n.value, g, "accumulate_grad");
    if (n.grad) {
        n.grad->add_(g);
    } else {
        n.grad = g;
    }
}

void accumulate_grad(Node& n, Tensor&& g) {
    if (!n.requires_grad) {
        return;
    }
    check_same_shape(n.value, g, "accumulate_grad");
    if (n.grad) {
        n.grad->add_(g);
    } else {
        n.grad = std::move(g);
    }
}

void Var::backward() const {
    if (value().numel() != 1) {
        throw ShapeError("backward requires a single-element root, got " + shape_str(value().shape()));
    }
    if (!requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward) {
            n->grad.reset();
        }
    }
    accumulate_grad(*node_, Tensor::ones(value().shape(), value().dtype()));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad) {
            n->backward(*n);
        }
    }
}

} // namespace ftk
