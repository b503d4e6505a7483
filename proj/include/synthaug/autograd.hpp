#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "synthaug/tensor.hpp"

// Define-by-run reverse-mode automatic differentiation.
//
// Every op applied to a Var appends a node holding its value and a closure that
// pushes the node's gradient into its parents. The recorded nodes form a DAG that
// is topologically ordered by construction; backward() walks it in reverse.
namespace synthaug::ad {

template <typename T>
struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    BasicTensor<T>& ensure_grad() {
        if (grad.empty()) grad = BasicTensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(BasicTensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    // Leaf that accumulates gradient across backward() calls until zero_grad().
    static Var parameter(BasicTensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const BasicTensor<T>& value() const { return node_->value; }
    BasicTensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    // Empty tensor if no gradient has reached this node.
    const BasicTensor<T>& grad() const { return node_->grad; }
    BasicTensor<T>& grad_buffer() { return node_->ensure_grad(); }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.storage().begin(), node_->grad.storage().end(), T{0});
    }

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled() noexcept;

// Disables tape recording on this thread for its lifetime (inference, sampling).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds an op result. The backward closure is only kept when recording is on
// and at least one parent needs a gradient.
template <typename T>
Var<T> make_result(BasicTensor<T> value, const char* op, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Var<T>(std::move(n));
}

// Reverse pass from a scalar loss. Leaf gradients accumulate; intermediate
// gradients are rebuilt on every call.
template <typename T>
void backward(const Var<T>& loss);

} // namespace synthaug::ad
