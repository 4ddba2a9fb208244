#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace tamiseg {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents that require grad.
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape() || grad.empty() != value.empty())
            grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a value in the computation graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    /// Trainable leaf.
    static Var parameter(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Gradient accumulated by the last backward pass; zeros if none reached this node.
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor<T>(node_->value.shape()); }

    /// Scalar value of a single-element variable.
    T item() const {
        if (node_->value.size() != 1) throw ShapeError("item() on a non-scalar variable");
        return node_->value[0];
    }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Build an op result. `fn` is skipped entirely when no input requires grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (auto& in : inputs) {
        if (in.requires_grad()) n->requires_grad = true;
        n->parents.push_back(in.ptr());
    }
    if (n->requires_grad)
        n->backward = std::move(fn);
    else
        n->parents.clear();
    return Var<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar root. Parameter gradients accumulate.
template <typename T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Intermediate grads start from zero on each sweep.
    for (Node<T>* n : order)
        if (n->backward) n->grad = Tensor<T>(n->value.shape());
    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace tamiseg
