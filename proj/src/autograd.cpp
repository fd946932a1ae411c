#include "latentfair/autograd.hpp"

#include <unordered_set>

namespace latentfair {

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    for (const auto& in : inputs) {
        if (in.requires_grad()) {
            out.node_->requires_grad = true;
            break;
        }
    }
    if (out.node_->requires_grad) {
        out.node_->inputs.reserve(inputs.size());
        for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
        out.node_->backward = std::move(backward);
    }
    return out;
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() {
    if (node_) node_->grad = Tensor(node_->value.shape(), 0.0);
}

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.value().size() != 1) throw ShapeError("backward() root must be a scalar, got " + shape_str(root.shape()));

    // Iterative post-order DFS gives a topological order without recursion depth limits.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    visited.insert(&root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node().grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) {
            node->grad_buffer();
            node->backward(*node);
        }
    }
}

}  // namespace latentfair
