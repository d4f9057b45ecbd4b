#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "rra/tensor.hpp"

namespace rra {

/// Thrown when a forward op produces NaN/Inf. Training loops convert this
/// into a diagnostic abort.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class S>
void check_finite(const Tensor<S>& t, const char* op) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i])))
            throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
    }
}

/// One node of the reverse-mode differentiation graph. `value` is the forward
/// result; `grad` accumulates dRoot/dValue during backward(). The gradient
/// buffer is materialized on first use and always matches value's shape.
///
/// A graph instance is single-writer: forward construction and backward() on
/// it must not interleave across threads. Distinct graphs may run
/// concurrently; shared leaf nodes are then read-only.
template <class S>
class Node {
  public:
    Tensor<S> value;
    bool requires_grad = false;
    const char* op = "leaf";
    std::string name; // set for parameters; empty for intermediates
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_rule; // accumulates into parents' grads

    Tensor<S>& grad() {
        if (grad_.empty() && !value.empty()) grad_ = Tensor<S>::zeros(value.shape());
        return grad_;
    }
    bool grad_allocated() const { return !grad_.empty(); }

    void zero_grad() {
        if (!grad_.empty()) grad_.fill(S(0));
    }

    /// Elementwise grad accumulation; shape must match value.
    void accumulate(const Tensor<S>& g) {
        auto& dst = grad();
        for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
    }

  private:
    Tensor<S> grad_;
};

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

template <class S>
NodePtr<S> make_leaf(Tensor<S> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

template <class S>
NodePtr<S> make_constant(Tensor<S> value) {
    return make_leaf(std::move(value), false);
}

/// Builds an op node. Parent links and the backward rule are only kept when
/// some parent needs gradients, so inference graphs stay shallow.
template <class S>
NodePtr<S> make_op(Tensor<S> value, std::vector<NodePtr<S>> parents, const char* op,
                   std::function<void(Node<S>&)> backward_rule) {
    check_finite(value, op);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_rule = std::move(backward_rule);
    }
    return n;
}

/// Reverse topological order from `root` (root first). Each reachable node
/// appears exactly once.
template <class S>
std::vector<Node<S>*> reverse_topo_order(const NodePtr<S>& root) {
    std::vector<Node<S>*> order;
    std::unordered_set<const Node<S>*> visited;
    // iterative post-order DFS
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    if (visited.insert(root.get()).second) stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            Node<S>* parent = node->parents[next_parent].get();
            ++next_parent;
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

/// Reverse-mode sweep from a scalar root: seeds dRoot/dRoot = 1 and applies
/// each node's backward rule exactly once in reverse topological order.
template <class S>
void backward(const NodePtr<S>& root) {
    if (root->value.numel() != 1)
        throw std::logic_error("backward() requires a scalar root, got " + shape_str(root->value.shape()));
    if (!root->requires_grad) return;
    root->grad().fill(S(0));
    root->grad()[0] = S(1);
    for (Node<S>* n : reverse_topo_order(root)) {
        if (n->requires_grad && n->backward_rule) n->backward_rule(*n);
    }
}

} // namespace rra
