#include "powergan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "powergan/errors.hpp"
#include "autograd_internal.hpp"

namespace powergan::ad {

using detail::make_op;
using detail::require;

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != ad::numel(shape))
        throw Error(ErrorCode::InvalidShape, "tensor data size does not match shape " + shape_str(shape));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var<T>(std::move(node));
}

template <class T>
T Var<T>::item() const {
    if (numel() != 1) throw Error(ErrorCode::InvalidShape, "item() on tensor of shape " + shape_str(shape()));
    return node_->value.data[0];
}

template <class T>
Var<T> constant(Tensor<T> value) {
    return Var<T>::leaf(std::move(value), false);
}

template <class T>
Var<T> zeros(const Shape& shape) {
    return constant(Tensor<T>(shape));
}

template <class T>
Var<T> detach(const Var<T>& x) {
    return constant(x.value());
}

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
    require(a.size() == b.size(), "broadcast needs equal rank: " + shape_str(a) + " vs " + shape_str(b));
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) out[i] = a[i];
        else if (a[i] == 1) out[i] = b[i];
        else throw Error(ErrorCode::InvalidShape, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    return out;
}

// Walks `out_shape` in row-major order while tracking the flat offset into a
// tensor of `src_shape` broadcast along its size-1 dims.
template <class F>
void for_each_broadcast(const Shape& out_shape, const Shape& src_shape, F&& f) {
    const std::size_t r = out_shape.size();
    std::vector<std::int64_t> stride(r, 0);
    std::int64_t s = 1;
    for (std::size_t d = r; d-- > 0;) {
        stride[d] = src_shape[d] == 1 ? 0 : s;
        s *= src_shape[d];
    }
    const std::int64_t n = numel(out_shape);
    if (r == 0) {
        if (n == 1) f(0, 0);
        return;
    }
    const std::int64_t inner = out_shape[r - 1];
    const std::int64_t inner_stride = stride[r - 1];
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    for (std::int64_t flat = 0; flat < n; flat += inner) {
        for (std::int64_t t = 0; t < inner; ++t) f(flat + t, src + t * inner_stride);
        for (std::size_t d = r - 1; d-- > 0;) {
            src += stride[d];
            if (++idx[d] < out_shape[d]) break;
            src -= stride[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

template <class T, class F>
Tensor<T> map_unary(const Tensor<T>& a, F&& f) {
    Tensor<T> out;
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return add(broadcast_to(a, s), broadcast_to(b, s));
    }
    Tensor<T> out(a.shape());
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av[i] + bv[i];
    return make_op<T>(std::move(out), {a, b}, [](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{g, g};
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return mul(broadcast_to(a, s), broadcast_to(b, s));
    }
    Tensor<T> out(a.shape());
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av[i] * bv[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g, const std::vector<bool>& needs) {
        std::vector<Var<T>> r(2);
        if (needs[0]) r[0] = mul(g, b);
        if (needs[1]) r[1] = mul(g, a);
        return r;
    });
}

template <class T>
Var<T> scale(const Var<T>& a, double s) {
    const T k = static_cast<T>(s);
    return make_op<T>(map_unary(a.value(), [k](T v) { return v * k; }), {a},
                      [s](const Var<T>& g, const std::vector<bool>&) {
                          return std::vector<Var<T>>{scale(g, s)};
                      });
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return scale(a, -1.0);
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return add(a, neg(b));
}

template <class T>
Var<T> add_scalar(const Var<T>& a, double s) {
    const T k = static_cast<T>(s);
    return make_op<T>(map_unary(a.value(), [k](T v) { return v + k; }), {a},
                      [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{g}; });
}

template <class T>
Var<T> pow_pos(const Var<T>& a, double p) {
    const T pp = static_cast<T>(p);
    return make_op<T>(map_unary(a.value(), [pp](T v) { return v > T(0) ? std::pow(v, pp) : T(0); }), {a},
                      [a, p](const Var<T>& g, const std::vector<bool>&) {
                          return std::vector<Var<T>>{mul(g, scale(pow_pos(a, p - 1.0), p))};
                      });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    return make_op<T>(map_unary(a.value(), [](T v) { return std::exp(v); }), {a},
                      [a](const Var<T>& g, const std::vector<bool>&) {
                          return std::vector<Var<T>>{mul(g, exp(a))};
                      });
}

template <class T>
Var<T> log(const Var<T>& a) {
    return make_op<T>(map_unary(a.value(), [](T v) { return std::log(v); }), {a},
                      [a](const Var<T>& g, const std::vector<bool>&) {
                          return std::vector<Var<T>>{mul(g, pow_pos(a, -1.0))};
                      });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, double slope) {
    const T k = static_cast<T>(slope);
    return make_op<T>(map_unary(a.value(), [k](T v) { return v > T(0) ? v : v * k; }), {a},
                      [a, k](const Var<T>& g, const std::vector<bool>&) {
                          // The mask is piecewise constant in a, so its own derivative is zero.
                          auto mask = map_unary(a.value(), [k](T v) { return v > T(0) ? T(1) : k; });
                          return std::vector<Var<T>>{mul(g, constant(std::move(mask)))};
                      });
}

// ---------------------------------------------------------------------------
// Shapes and reductions

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    require(numel(shape) == static_cast<std::int64_t>(a.numel()),
            "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor<T> out;
    out.shape = std::move(shape);
    out.data = a.value().data;
    const Shape original = a.shape();
    return make_op<T>(std::move(out), {a}, [original](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{reshape(g, original)};
    });
}

template <class T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    require(a.shape().size() == shape.size(), "broadcast_to rank mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    for (std::size_t d = 0; d < shape.size(); ++d)
        require(a.shape()[d] == shape[d] || a.shape()[d] == 1,
                "broadcast_to " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor<T> out(shape);
    const auto& src = a.value().data;
    for_each_broadcast(shape, a.shape(), [&](std::int64_t o, std::int64_t s) { out.data[o] = src[s]; });
    const Shape original = a.shape();
    return make_op<T>(std::move(out), {a}, [original](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{sum_to(g, original)};
    });
}

template <class T>
Var<T> sum_to(const Var<T>& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    require(a.shape().size() == shape.size(), "sum_to rank mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
    for (std::size_t d = 0; d < shape.size(); ++d)
        require(a.shape()[d] == shape[d] || shape[d] == 1, "sum_to " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<double> acc(static_cast<std::size_t>(numel(shape)), 0.0);
    const auto& src = a.value().data;
    for_each_broadcast(a.shape(), shape, [&](std::int64_t o, std::int64_t s) { acc[s] += src[o]; });
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<T>(acc[i]);
    const Shape original = a.shape();
    return make_op<T>(std::move(out), {a}, [original](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{broadcast_to(g, original)};
    });
}

template <class T>
Var<T> sum_all(const Var<T>& a) {
    return sum_to(reshape(a, Shape{static_cast<std::int64_t>(a.numel())}), Shape{1});
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

template <class T>
Var<T> expand_scalar(const Var<T>& a, const Shape& shape) {
    require(a.numel() == 1, "expand_scalar needs a single element");
    return broadcast_to(reshape(a, Shape(shape.size(), 1)), shape);
}

template <class T>
Var<T> mean_last(const Var<T>& x) {
    require(x.shape().size() == 3, "mean_last expects [B, C, L]");
    const auto b = x.dim(0), c = x.dim(1), l = x.dim(2);
    return scale(reshape(sum_to(x, Shape{b, c, 1}), Shape{b, c}), 1.0 / static_cast<double>(l));
}

template <class T>
Var<T> log_softmax(const Var<T>& x) {
    require(x.shape().size() == 2, "log_softmax expects [B, C]");
    const auto b = x.dim(0), c = x.dim(1);
    // Row max as a constant shift; log-sum-exp is invariant to it.
    Tensor<T> m(Shape{b, 1});
    for (std::int64_t i = 0; i < b; ++i)
        m.data[i] = *std::max_element(x.value().data.begin() + i * c, x.value().data.begin() + (i + 1) * c);
    auto shifted = sub(x, constant(std::move(m)));
    auto lse = log(sum_to(exp(shifted), Shape{b, 1}));
    return sub(shifted, lse);
}

// ---------------------------------------------------------------------------
// Graph traversal

template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph,
                         const Var<T>& grad_output) {
    std::vector<Var<T>> result(inputs.size());
    auto fill_zeros = [&] {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            if (!result[i].defined()) result[i] = zeros<T>(inputs[i].shape());
    };
    if (!output.requires_grad()) {
        fill_zeros();
        return result;
    }
    if (!grad_output.defined() && output.numel() != 1)
        throw Error(ErrorCode::InvalidShape, "grad() of a non-scalar output needs grad_output");

    // Post-order DFS: parents precede children in `order`.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].node();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_set<Node<T>*> targets;
    for (const auto& in : inputs) targets.insert(in.node());
    std::unordered_map<Node<T>*, bool> relevant;
    for (Node<T>* node : order) {
        bool r = targets.count(node) > 0;
        for (const auto& p : node->parents) {
            auto it = relevant.find(p.node());
            r = r || (it != relevant.end() && it->second);
        }
        relevant[node] = r;
    }

    EnableGradGuard mode(create_graph);
    std::unordered_map<Node<T>*, Var<T>> grads;
    if (grad_output.defined()) {
        grads[output.node()] = grad_output;
    } else {
        grads[output.node()] = constant(Tensor<T>(output.shape(), T(1)));
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (!relevant[node] || !node->backward) continue;
        auto git = grads.find(node);
        if (git == grads.end()) continue;
        std::vector<bool> needs(node->parents.size());
        for (std::size_t i = 0; i < needs.size(); ++i) {
            auto rit = relevant.find(node->parents[i].node());
            needs[i] = rit != relevant.end() && rit->second;
        }
        const Var<T> g = git->second;
        auto parent_grads = node->backward(g, needs);
        for (std::size_t i = 0; i < needs.size(); ++i) {
            if (!needs[i] || !parent_grads[i].defined()) continue;
            Node<T>* p = node->parents[i].node();
            auto existing = grads.find(p);
            if (existing == grads.end()) grads.emplace(p, parent_grads[i]);
            else existing->second = add(existing->second, parent_grads[i]);
        }
        // Non-target intermediate gradients are no longer needed.
        if (!targets.count(node)) grads.erase(node);
    }

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto it = grads.find(inputs[i].node());
        if (it != grads.end()) result[i] = it->second;
    }
    fill_zeros();
    return result;
}

#define POWERGAN_INSTANTIATE(T)                                                                         \
    template struct Tensor<T>;                                                                          \
    template class Var<T>;                                                                              \
    template Var<T> constant<T>(Tensor<T>);                                                             \
    template Var<T> zeros<T>(const Shape&);                                                             \
    template Var<T> detach<T>(const Var<T>&);                                                           \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                               \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                               \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                               \
    template Var<T> neg<T>(const Var<T>&);                                                              \
    template Var<T> scale<T>(const Var<T>&, double);                                                    \
    template Var<T> add_scalar<T>(const Var<T>&, double);                                               \
    template Var<T> pow_pos<T>(const Var<T>&, double);                                                  \
    template Var<T> exp<T>(const Var<T>&);                                                              \
    template Var<T> log<T>(const Var<T>&);                                                              \
    template Var<T> leaky_relu<T>(const Var<T>&, double);                                               \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                   \
    template Var<T> broadcast_to<T>(const Var<T>&, const Shape&);                                       \
    template Var<T> sum_to<T>(const Var<T>&, const Shape&);                                             \
    template Var<T> sum_all<T>(const Var<T>&);                                                          \
    template Var<T> mean_all<T>(const Var<T>&);                                                         \
    template Var<T> expand_scalar<T>(const Var<T>&, const Shape&);                                      \
    template Var<T> mean_last<T>(const Var<T>&);                                                        \
    template Var<T> log_softmax<T>(const Var<T>&);                                                      \
    template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool, const Var<T>&);

POWERGAN_INSTANTIATE(float)
POWERGAN_INSTANTIATE(double)

#undef POWERGAN_INSTANTIATE

}  // namespace powergan::ad
