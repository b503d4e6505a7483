#include "synthaug/autograd.hpp"

#include <unordered_set>

namespace synthaug::ad {

namespace {
thread_local bool t_grad_enabled = true;
} // namespace

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.defined()) throw std::logic_error("backward on an undefined Var");
    if (loss.value().size() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; `order` ends up with parents before children.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (n->backward_fn) n->grad = BasicTensor<T>(n->value.shape());
    }
    loss.node()->ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

} // namespace synthaug::ad
