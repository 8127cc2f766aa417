#pragma once

// Minimal reverse-mode differentiation engine over dense row-major tensors.
//
// Every backward rule is itself written in terms of differentiable ops, so a
// gradient computed with create_graph = true is a graph node like any other
// and can be differentiated again. The gradient penalty relies on this
// (d/dparams of a norm of d/dinput).
//
// Templated on the scalar type; float and double are instantiated. Training
// runs in float, gradient verification tests run in double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace powergan::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(ad::numel(shape)), fill) {}
    Tensor(Shape s, std::vector<T> d);

    std::size_t size() const { return data.size(); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }
};

template <class T>
class Var;

template <class T>
struct Node {
    // Returns one gradient per parent; entries for parents with needs[i] == false may be empty.
    using BackwardFn =
        std::function<std::vector<Var<T>>(const Var<T>& grad, const std::vector<bool>& needs)>;

    Tensor<T> value;
    std::vector<Var<T>> parents;
    BackwardFn backward;
    bool requires_grad = false;
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    // Mutable access for optimizers and loaders; never call on a node inside a live graph.
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::int64_t dim(std::size_t i) const { return node_->value.shape.at(i); }
    std::size_t numel() const { return node_->value.data.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    T item() const;
    Node<T>* node() const { return node_.get(); }

private:
    std::shared_ptr<Node<T>> node_;
};

// Graph recording switch. Thread-local.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class EnableGradGuard {
public:
    explicit EnableGradGuard(bool enabled);
    ~EnableGradGuard();
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

// Gradients of `output` (a single-element tensor unless grad_output is given)
// with respect to each of `inputs`. Inputs that do not influence the output
// receive zeros. With create_graph the returned gradients are differentiable.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph = false, const Var<T>& grad_output = Var<T>());

template <class T>
Var<T> constant(Tensor<T> value);
template <class T>
Var<T> zeros(const Shape& shape);
template <class T>
Var<T> detach(const Var<T>& x);

// Elementwise; operands of different shapes broadcast over size-1 dims (equal rank required).
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> neg(const Var<T>& a);
template <class T> Var<T> scale(const Var<T>& a, double s);
template <class T> Var<T> add_scalar(const Var<T>& a, double s);
// x^p where x > 0, zero elsewhere. Smooth away from 0, so sqrt at 0 has zero gradient.
template <class T> Var<T> pow_pos(const Var<T>& a, double p);
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> log(const Var<T>& a);
template <class T> Var<T> leaky_relu(const Var<T>& a, double slope);
template <class T> Var<T> relu(const Var<T>& a) { return leaky_relu(a, 0.0); }
template <class T> Var<T> square(const Var<T>& a) { return mul(a, a); }

// Shape manipulation and reductions.
template <class T> Var<T> reshape(const Var<T>& a, Shape shape);
template <class T> Var<T> broadcast_to(const Var<T>& a, const Shape& shape);
// Sum over the dims where `shape` has extent 1 (same rank as a).
template <class T> Var<T> sum_to(const Var<T>& a, const Shape& shape);
template <class T> Var<T> sum_all(const Var<T>& a);
template <class T> Var<T> mean_all(const Var<T>& a);
// Broadcast a single-element tensor to `shape`.
template <class T> Var<T> expand_scalar(const Var<T>& a, const Shape& shape);

// Linear algebra on rank-2 tensors.
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> transpose(const Var<T>& a);

// 1-D convolution, stride 1, zero "same" padding. x: [B, Cin, L], w: [Cout, Cin, K], K odd.
template <class T> Var<T> conv1d(const Var<T>& x, const Var<T>& w);
// d(conv1d)/dw contracted with upstream g: [B, Cout, L] -> [Cout, Cin, K].
template <class T> Var<T> conv1d_weight_grad(const Var<T>& x, const Var<T>& g, std::int64_t kernel);
// [Cout, Cin, K] -> [Cin, Cout, K] with the kernel axis reversed.
template <class T> Var<T> flip_transpose(const Var<T>& w);

// Resampling along the last axis of a [B, C, L] tensor.
template <class T> Var<T> upsample2(const Var<T>& x);   // L -> 2L, nearest neighbour
template <class T> Var<T> pair_sum(const Var<T>& x);    // 2L -> L, sums adjacent pairs
template <class T> Var<T> avgpool2(const Var<T>& x) { return scale(pair_sum(x), 0.5); }
template <class T> Var<T> maxpool2(const Var<T>& x);    // 2L -> L, windowed maximum

// Channel-axis (dim 1) operations on [B, C, L].
template <class T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <class T> Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count);
template <class T> Var<T> pad_channels(const Var<T>& x, std::int64_t before, std::int64_t after);
// Mean over the last axis: [B, C, L] -> [B, C].
template <class T> Var<T> mean_last(const Var<T>& x);

// Row-wise log-softmax on [B, C].
template <class T> Var<T> log_softmax(const Var<T>& x);

template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <class T> Var<T> operator-(const Var<T>& a) { return neg(a); }

// Cast values between precisions (no graph).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
    Tensor<To> out;
    out.shape = t.shape;
    out.data.assign(t.data.begin(), t.data.end());
    return out;
}

}  // namespace powergan::ad
