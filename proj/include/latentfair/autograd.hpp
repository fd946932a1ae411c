#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "latentfair/tensor.hpp"

namespace latentfair {

// A node of the dynamic computation graph. Leaves with requires_grad are
// parameters; interior nodes carry a backward closure that reads this node's
// grad and accumulates into its inputs.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    // Interior node; requires_grad is inherited from the inputs. When no
    // input requires grad the closure is dropped and the result is a constant.
    static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    // Gradient accumulated by backward(); zero tensor of matching shape if none yet.
    const Tensor& grad() const;
    void zero_grad();

    Var detach() const { return Var(node_->value, false); }
    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar root. Gradients accumulate into every
// reachable node that requires grad.
void backward(const Var& root);

}  // namespace latentfair
