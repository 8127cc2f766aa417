#pragma once

#include <memory>
#include <string>
#include <vector>

#include "powergan/autograd.hpp"
#include "powergan/errors.hpp"

namespace powergan::ad::detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw Error(ErrorCode::InvalidShape, what);
}

// Wraps a computed value as a graph node. Parents and the backward rule are
// kept only when recording is on and some parent requires a gradient.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, typename Node<T>::BackwardFn fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool track = false;
    if (grad_enabled())
        for (const auto& p : parents) track = track || p.requires_grad();
    if (track) {
        node->parents = std::move(parents);
        node->backward = std::move(fn);
        node->requires_grad = true;
    }
    return Var<T>(std::move(node));
}

}  // namespace powergan::ad::detail
