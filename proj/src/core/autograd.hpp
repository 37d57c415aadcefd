// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Operations on Vars compute their value
// eagerly and, when any input requires a gradient, record a backward closure.
// backward() walks the graph once in reverse topological order and
// accumulates into the grad buffers of leaf parameters. Leaf gradients are
// never zeroed implicitly; callers reset them between steps.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace podar::ad {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    bool is_leaf() const noexcept { return parents.empty(); }
    Tensor<T>& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    T item() const { return node_->value.item(); }

    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T(0));
    }

private:
    std::shared_ptr<Node<T>> node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

/// While alive on a thread, ops record no graph: results are constants.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active() noexcept;

private:
    bool previous_;
};

/// Constant copy of a Var's value, cut from the graph.
template <class T>
Var<T> detach(const Var<T>& v);

template <class T>
Var<T> constant(Tensor<T> value);
template <class T>
Var<T> parameter(Tensor<T> value);

/// Builds an op node. `backward` receives the node; its grad is populated and
/// it should accumulate into parents that require gradients.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
               const char* name);

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Intermediate gradients are released afterwards.
template <class T>
void backward(const Var<T>& loss);

// Elementwise binary ops. `b` broadcasts against `a`: after left-padding
// b's shape with ones, every dim must be 1 or equal to a's.
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> add_scalar(const Var<T>& a, T s);

// Unary elementwise.
template <class T> Var<T> tanh(const Var<T>& a);
template <class T> Var<T> elu(const Var<T>& a, T alpha = T(1));
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> log(const Var<T>& a);
template <class T> Var<T> sqrt(const Var<T>& a);
template <class T> Var<T> abs(const Var<T>& a);
template <class T> Var<T> square(const Var<T>& a);
template <class T> Var<T> pow10(const Var<T>& a);

// Reductions.
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
template <class T> Var<T> sum_axis(const Var<T>& a, std::size_t axis);
template <class T> Var<T> mean_axis(const Var<T>& a, std::size_t axis);

/// (..., M, K) x (K, N) or (..., M, K) x (..., K, N) with equal batch dims.
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <class T> Var<T> reshape(const Var<T>& a, Shape shape);
template <class T> Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& perm);
template <class T> Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <class T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
/// Rows of a (V, D) table, one per index.
template <class T> Var<T> gather_rows(const Var<T>& table, const std::vector<std::size_t>& indices);

/// Softmax over the last axis.
template <class T> Var<T> softmax(const Var<T>& a);
/// Zero-mean, unit-variance normalization over the last axis (no affine).
template <class T> Var<T> layer_norm(const Var<T>& a, T eps = T(1e-5));

/// x: (B, Cin, N), w: (Cout, Cin, K), bias: (Cout) or undefined.
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t padding);
/// x: (B, Cin, N), w: (Cin, Cout, K), bias: (Cout) or undefined.
/// Output length (N - 1) * stride - 2 * padding + K.
template <class T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride,
                        std::size_t padding);

template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace podar::ad
