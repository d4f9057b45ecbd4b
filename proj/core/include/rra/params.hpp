#pragma once

#include <string>
#include <vector>

#include "rra/graph.hpp"

namespace rra {

/// A named trainable leaf. `frozen` reflects the owning module's freeze state
/// at the time the list was assembled; frozen entries still receive
/// gradients, the optimizer just skips their update.
template <class S>
struct ParamRef {
    std::string name;
    NodePtr<S> node;
    bool frozen = false;
};

template <class S>
using ParamList = std::vector<ParamRef<S>>;

template <class S>
void zero_grads(const ParamList<S>& params) {
    for (const auto& p : params) p.node->zero_grad();
}

} // namespace rra
