// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <unordered_set>

namespace podar::ad {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
bool any_requires(const std::vector<Var<T>>& vs) {
    for (const auto& v : vs)
        if (v.defined() && v.requires_grad()) return true;
    return false;
}

template <class T>
Tensor<T>& gbuf(const Var<T>& v) {
    return v.node()->grad_buffer();
}

template <class T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
    auto& dst = gbuf(v);
    T* d = dst.data();
    const T* s = g.data();
    for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// Maps each flat index of `out` to the flat index of a right-hand operand
// broadcast against it.
struct Broadcast {
    bool same = false;
    bool scalar = false;
    Shape out_shape;
    std::vector<std::size_t> rhs_strides;  // per out dim, 0 where broadcast

    Broadcast(const Shape& a, const Shape& b, const char* op) : out_shape(a) {
        if (a == b) {
            same = true;
            return;
        }
        if (numel(b) == 1) {
            scalar = true;
            return;
        }
        if (b.size() > a.size())
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " to " + shape_str(a));
        Shape bp(a.size() - b.size(), 1);
        bp.insert(bp.end(), b.begin(), b.end());
        rhs_strides.assign(a.size(), 0);
        std::size_t stride = 1;
        for (std::size_t i = a.size(); i-- > 0;) {
            if (bp[i] == a[i]) {
                rhs_strides[i] = stride;
            } else if (bp[i] != 1) {
                throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
            }
            stride *= bp[i];
        }
    }

    template <class F>
    void for_each(F&& f) const {
        const std::size_t n = numel(out_shape);
        if (same) {
            for (std::size_t i = 0; i < n; ++i) f(i, i);
            return;
        }
        if (scalar) {
            for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0});
            return;
        }
        const std::size_t rank = out_shape.size();
        // The innermost dim is handled in a tight loop.
        const std::size_t inner = out_shape[rank - 1];
        const std::size_t inner_stride = rhs_strides[rank - 1];
        std::vector<std::size_t> idx(rank, 0);
        std::size_t rhs_base = 0;
        for (std::size_t base = 0; base < n; base += inner) {
            for (std::size_t j = 0; j < inner; ++j) f(base + j, rhs_base + j * inner_stride);
            for (std::size_t d = rank - 1; d-- > 0;) {
                ++idx[d];
                rhs_base += rhs_strides[d];
                if (idx[d] < out_shape[d]) break;
                rhs_base -= rhs_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
};

template <class T, class Fwd, class Bwd>
Var<T> unary(const Var<T>& a, const char* name, Fwd fwd, Bwd dfdx) {
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    T* y = out.data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) y[i] = fwd(x[i]);
    return make_op<T>(
        std::move(out), {a},
        [a, dfdx](Node<T>& self) {
            if (!a.requires_grad()) return;
            auto& ga = gbuf(a);
            const T* x = a.value().data();
            const T* y = self.value.data();
            const T* g = self.grad.data();
            for (std::size_t i = 0, n = ga.size(); i < n; ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
        },
        name);
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
}

// outer = prod(dims before axis), inner = prod(dims after axis).
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}

// cols[(ci*K + k), t] = x[ci, t*stride - pad + k]
template <class T>
void im2col(const T* x, std::size_t cin, std::size_t n, std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t nout, T* cols) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xr = x + ci * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            T* row = cols + (ci * k + kk) * nout;
            for (std::size_t t = 0; t < nout; ++t) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
                row[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(n)) ? xr[pos] : T(0);
            }
        }
    }
}

template <class T>
void col2im(const T* cols, std::size_t cin, std::size_t n, std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t nout, T* x) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
        T* xr = x + ci * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* row = cols + (ci * k + kk) * nout;
            for (std::size_t t = 0; t < nout; ++t) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
                if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(n)) xr[pos] += row[t];
            }
        }
    }
}

thread_local bool g_no_grad = false;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() noexcept { return g_no_grad; }

template <class T>
Var<T> detach(const Var<T>& v) {
    return constant(v.value());
}

template <class T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var<T>(std::move(n));
}

template <class T>
Var<T> parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var<T>(std::move(n));
}

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
               const char* name) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = name;
    if (!g_no_grad && any_requires(parents)) {
        n->requires_grad = true;
        for (auto& p : parents)
            if (p.defined()) n->parents.push_back(p.ptr());
        n->backward_fn = std::move(backward);
    }
    return Var<T>(std::move(n));
}

template <class T>
void backward(const Var<T>& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
    if (loss.value().size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order; each node once.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
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

    loss.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->is_leaf()) continue;
        if (!node->grad.empty() && node->backward_fn) node->backward_fn(*node);
        node->grad = Tensor<T>();
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    Broadcast bc(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    const T* y = b.value().data();
    T* o = out.data();
    bc.for_each([&](std::size_t i, std::size_t j) { o[i] = x[i] + y[j]; });
    return make_op<T>(
        std::move(out), {a, b},
        [a, b, bc](Node<T>& self) {
            const T* g = self.grad.data();
            if (a.requires_grad()) accumulate(a, self.grad);
            if (b.requires_grad()) {
                T* gb = gbuf(b).data();
                bc.for_each([&](std::size_t i, std::size_t j) { gb[j] += g[i]; });
            }
        },
        "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    Broadcast bc(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    const T* y = b.value().data();
    T* o = out.data();
    bc.for_each([&](std::size_t i, std::size_t j) { o[i] = x[i] - y[j]; });
    return make_op<T>(
        std::move(out), {a, b},
        [a, b, bc](Node<T>& self) {
            const T* g = self.grad.data();
            if (a.requires_grad()) accumulate(a, self.grad);
            if (b.requires_grad()) {
                T* gb = gbuf(b).data();
                bc.for_each([&](std::size_t i, std::size_t j) { gb[j] -= g[i]; });
            }
        },
        "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    Broadcast bc(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    const T* y = b.value().data();
    T* o = out.data();
    bc.for_each([&](std::size_t i, std::size_t j) { o[i] = x[i] * y[j]; });
    return make_op<T>(
        std::move(out), {a, b},
        [a, b, bc](Node<T>& self) {
            const T* g = self.grad.data();
            const T* x = a.value().data();
            const T* y = b.value().data();
            if (a.requires_grad()) {
                T* ga = gbuf(a).data();
                bc.for_each([&](std::size_t i, std::size_t j) { ga[i] += g[i] * y[j]; });
            }
            if (b.requires_grad()) {
                T* gb = gbuf(b).data();
                bc.for_each([&](std::size_t i, std::size_t j) { gb[j] += g[i] * x[i]; });
            }
        },
        "mul");
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    Broadcast bc(a.shape(), b.shape(), "div");
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    const T* y = b.value().data();
    T* o = out.data();
    bc.for_each([&](std::size_t i, std::size_t j) { o[i] = x[i] / y[j]; });
    return make_op<T>(
        std::move(out), {a, b},
        [a, b, bc](Node<T>& self) {
            const T* g = self.grad.data();
            const T* y = b.value().data();
            const T* o = self.value.data();
            if (a.requires_grad()) {
                T* ga = gbuf(a).data();
                bc.for_each([&](std::size_t i, std::size_t j) { ga[i] += g[i] / y[j]; });
            }
            if (b.requires_grad()) {
                T* gb = gbuf(b).data();
                bc.for_each([&](std::size_t i, std::size_t j) { gb[j] -= g[i] * o[i] / y[j]; });
            }
        },
        "div");
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    return unary<T>(a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    return unary<T>(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Unary

template <class T>
Var<T> tanh(const Var<T>& a) {
    return unary<T>(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> elu(const Var<T>& a, T alpha) {
    return unary<T>(
        a, "elu", [alpha](T x) { return x > T(0) ? x : alpha * std::expm1(x); },
        [alpha](T x, T y) { return x > T(0) ? T(1) : y + alpha; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    return unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
    return unary<T>(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> sqrt(const Var<T>& a) {
    return unary<T>(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <class T>
Var<T> abs(const Var<T>& a) {
    return unary<T>(
        a, "abs", [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> square(const Var<T>& a) {
    return unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> pow10(const Var<T>& a) {
    static const T ln10 = std::log(T(10));
    return unary<T>(a, "pow10", [](T x) { return std::pow(T(10), x); }, [](T, T y) { return ln10 * y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& a) {
    T acc = 0;
    for (T v : a.value().values()) acc += v;
    return make_op<T>(
        Tensor<T>::scalar(acc), {a},
        [a](Node<T>& self) {
            if (!a.requires_grad()) return;
            const T g = self.grad[0];
            for (auto& v : gbuf(a).values()) v += g;
        },
        "sum");
}

template <class T>
Var<T> mean(const Var<T>& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    T acc = 0;
    for (T v : a.value().values()) acc += v;
    return make_op<T>(
        Tensor<T>::scalar(acc / static_cast<T>(n)), {a},
        [a, n](Node<T>& self) {
            if (!a.requires_grad()) return;
            const T g = self.grad[0] / static_cast<T>(n);
            for (auto& v : gbuf(a).values()) v += g;
        },
        "mean");
}

template <class T>
Var<T> sum_axis(const Var<T>& a, std::size_t axis) {
    check_axis(a.shape(), axis, "sum_axis");
    auto [outer, inner] = outer_inner(a.shape(), axis);
    const std::size_t len = a.shape()[axis];
    Shape os = a.shape();
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor<T> out(os);
    const T* x = a.value().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
    return make_op<T>(
        std::move(out), {a},
        [a, outer, inner, len](Node<T>& self) {
            if (!a.requires_grad()) return;
            T* ga = gbuf(a).data();
            const T* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t i = 0; i < inner; ++i) ga[(o * len + l) * inner + i] += g[o * inner + i];
        },
        "sum_axis");
}

template <class T>
Var<T> mean_axis(const Var<T>& a, std::size_t axis) {
    check_axis(a.shape(), axis, "mean_axis");
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as[as.size() - 1];
    const std::size_t kb = bs[bs.size() - 2];
    const std::size_t n = bs[bs.size() - 1];
    if (k != kb) throw ShapeError("matmul: inner dims differ, " + shape_str(as) + " x " + shape_str(bs));

    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    const bool shared_b = bs.size() == 2;
    if (!shared_b) {
        if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))
            throw ShapeError("matmul: batch dims differ, " + shape_str(as) + " x " + shape_str(bs));
    }

    Shape os(as.begin(), as.end() - 1);
    os.push_back(n);
    Tensor<T> out(os);
    if (shared_b) {
        MapMat<T>(out.data(), batch * m, n).noalias() =
            CMapMat<T>(a.value().data(), batch * m, k) * CMapMat<T>(b.value().data(), k, n);
    } else {
        for (std::size_t bi = 0; bi < batch; ++bi)
            MapMat<T>(out.data() + bi * m * n, m, n).noalias() =
                CMapMat<T>(a.value().data() + bi * m * k, m, k) * CMapMat<T>(b.value().data() + bi * k * n, k, n);
    }

    return make_op<T>(
        std::move(out), {a, b},
        [a, b, batch, m, k, n, shared_b](Node<T>& self) {
            const T* g = self.grad.data();
            if (shared_b) {
                CMapMat<T> G(g, batch * m, n);
                if (a.requires_grad())
                    MapMat<T>(gbuf(a).data(), batch * m, k).noalias() += G * CMapMat<T>(b.value().data(), k, n).transpose();
                if (b.requires_grad())
                    MapMat<T>(gbuf(b).data(), k, n).noalias() +=
                        CMapMat<T>(a.value().data(), batch * m, k).transpose() * G;
                return;
            }
            for (std::size_t bi = 0; bi < batch; ++bi) {
                CMapMat<T> G(g + bi * m * n, m, n);
                if (a.requires_grad())
                    MapMat<T>(gbuf(a).data() + bi * m * k, m, k).noalias() +=
                        G * CMapMat<T>(b.value().data() + bi * k * n, k, n).transpose();
                if (b.requires_grad())
                    MapMat<T>(gbuf(b).data() + bi * k * n, k, n).noalias() +=
                        CMapMat<T>(a.value().data() + bi * m * k, m, k).transpose() * G;
            }
        },
        "matmul");
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (numel(shape) != a.value().size())
        throw ShapeError("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    return make_op<T>(
        a.value().reshaped(std::move(shape)), {a},
        [a](Node<T>& self) {
            if (!a.requires_grad()) return;
            auto& ga = gbuf(a);
            for (std::size_t i = 0, n = ga.size(); i < n; ++i) ga[i] += self.grad[i];
        },
        "reshape");
}

template <class T>
Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& perm) {
    const Shape& s = a.shape();
    const std::size_t rank = s.size();
    if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch for " + shape_str(s));
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation for " + shape_str(s));
        seen[p] = true;
    }
    Shape os(rank);
    for (std::size_t i = 0; i < rank; ++i) os[i] = s[perm[i]];
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
    // src_index[j] for every output flat index j
    const std::size_t n = a.value().size();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    {
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t off = 0;
            for (std::size_t d = 0; d < rank; ++d) off += idx[d] * in_strides[perm[d]];
            (*src)[j] = off;
            for (std::size_t d = rank; d-- > 0;) {
                if (++idx[d] < os[d]) break;
                idx[d] = 0;
            }
        }
    }
    Tensor<T> out(os);
    const T* x = a.value().data();
    for (std::size_t j = 0; j < n; ++j) out[j] = x[(*src)[j]];
    return make_op<T>(
        std::move(out), {a},
        [a, src](Node<T>& self) {
            if (!a.requires_grad()) return;
            T* ga = gbuf(a).data();
            const T* g = self.grad.data();
            for (std::size_t j = 0, n = src->size(); j < n; ++j) ga[(*src)[j]] += g[j];
        },
        "permute");
}

template <class T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    check_axis(a.shape(), axis, "slice");
    const std::size_t len = a.shape()[axis];
    if (begin >= end || end > len)
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(a.shape()));
    auto [outer, inner] = outer_inner(a.shape(), axis);
    Shape os = a.shape();
    os[axis] = end - begin;
    Tensor<T> out(os);
    const std::size_t w = (end - begin) * inner;
    const T* x = a.value().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x + (o * len + begin) * inner, w, out.data() + o * w);
    return make_op<T>(
        std::move(out), {a},
        [a, outer, inner, len, begin, w](Node<T>& self) {
            if (!a.requires_grad()) return;
            T* ga = gbuf(a).data();
            const T* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                T* dst = ga + (o * len + begin) * inner;
                for (std::size_t i = 0; i < w; ++i) dst[i] += g[o * w + i];
            }
        },
        "slice");
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    check_axis(s0, axis, "concat");
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d)
            if (d != axis && s[d] != s0[d]) ok = false;
        if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
        total += s[axis];
    }
    auto [outer, inner] = outer_inner(s0, axis);
    Shape os = s0;
    os[axis] = total;
    Tensor<T> out(os);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t w = p.shape()[axis] * inner;
        const T* x = p.value().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x + o * w, w, out.data() + (o * total + off) * inner);
        off += p.shape()[axis];
    }
    return make_op<T>(
        std::move(out), parts,
        [parts, offsets, outer, inner, total](Node<T>& self) {
            const T* g = self.grad.data();
            for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                const auto& p = parts[pi];
                if (!p.requires_grad()) continue;
                const std::size_t w = p.value().size() / outer;
                T* gp = gbuf(p).data();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = g + (o * total + offsets[pi]) * inner;
                    for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += src[i];
                }
            }
        },
        "concat");
}

template <class T>
Var<T> gather_rows(const Var<T>& table, const std::vector<std::size_t>& indices) {
    if (table.shape().size() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t rows = table.shape()[0];
    const std::size_t d = table.shape()[1];
    Tensor<T> out(Shape{indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                             shape_str(table.shape()));
        std::copy_n(table.value().data() + indices[i] * d, d, out.data() + i * d);
    }
    return make_op<T>(
        std::move(out), {table},
        [table, indices, d](Node<T>& self) {
            if (!table.requires_grad()) return;
            T* gt = gbuf(table).data();
            const T* g = self.grad.data();
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) gt[indices[i] * d + j] += g[i * d + j];
        },
        "gather_rows");
}

template <class T>
Var<T> softmax(const Var<T>& a) {
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("softmax: scalar input");
    const std::size_t d = s.back();
    const std::size_t rows = a.value().size() / d;
    Tensor<T> out(s);
    const T* x = a.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T* yr = out.data() + r * d;
        T mx = xr[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T z = 0;
        for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
    }
    return make_op<T>(
        std::move(out), {a},
        [a, rows, d](Node<T>& self) {
            if (!a.requires_grad()) return;
            T* ga = gbuf(a).data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * d;
                const T* g = self.grad.data() + r * d;
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[j] * (g[j] - dot);
            }
        },
        "softmax");
}

template <class T>
Var<T> layer_norm(const Var<T>& a, T eps) {
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = s.back();
    const std::size_t rows = a.value().size() / d;
    Tensor<T> out(s);
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* x = a.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * is;
    }
    return make_op<T>(
        std::move(out), {a},
        [a, rows, d, inv_std](Node<T>& self) {
            if (!a.requires_grad()) return;
            T* ga = gbuf(a).data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * d;
                const T* g = self.grad.data() + r * d;
                T mg = 0, mgy = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    mg += g[j];
                    mgy += g[j] * y[j];
                }
                mg /= static_cast<T>(d);
                mgy /= static_cast<T>(d);
                const T is = (*inv_std)[r];
                for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += is * (g[j] - mg - y[j] * mgy);
            }
        },
        "layer_norm");
}

// ---------------------------------------------------------------------------
// Convolutions

template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[1] || stride == 0)
        throw ShapeError("conv1d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
    const std::size_t batch = xs[0], cin = xs[1], n = xs[2];
    const std::size_t cout = ws[0], k = ws[2];
    if (bias.defined() && bias.shape() != Shape{cout})
        throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(ws));
    if (n + 2 * padding < k)
        throw ShapeError("conv1d: input " + shape_str(xs) + " shorter than kernel " + shape_str(ws));
    const std::size_t nout = (n + 2 * padding - k) / stride + 1;

    Tensor<T> out(Shape{batch, cout, nout});
    AlignedVector<T> cols(cin * k * nout);
    CMapMat<T> W(w.value().data(), cout, cin * k);
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(x.value().data() + b * cin * n, cin, n, k, stride, padding, nout, cols.data());
        MapMat<T> O(out.data() + b * cout * nout, cout, nout);
        O.noalias() = W * CMapMat<T>(cols.data(), cin * k, nout);
        if (bias.defined())
            for (std::size_t c = 0; c < cout; ++c) O.row(c).array() += bias.value()[c];
    }
    return make_op<T>(
        std::move(out), {x, w, bias},
        [x, w, bias, batch, cin, n, cout, k, stride, padding, nout](Node<T>& self) {
            AlignedVector<T> cols(cin * k * nout);
            CMapMat<T> W(w.value().data(), cout, cin * k);
            for (std::size_t b = 0; b < batch; ++b) {
                CMapMat<T> G(self.grad.data() + b * cout * nout, cout, nout);
                if (w.requires_grad()) {
                    im2col(x.value().data() + b * cin * n, cin, n, k, stride, padding, nout, cols.data());
                    MapMat<T>(gbuf(w).data(), cout, cin * k).noalias() +=
                        G * CMapMat<T>(cols.data(), cin * k, nout).transpose();
                }
                if (x.requires_grad()) {
                    MapMat<T>(cols.data(), cin * k, nout).noalias() = W.transpose() * G;
                    col2im(cols.data(), cin, n, k, stride, padding, nout, gbuf(x).data() + b * cin * n);
                }
                if (bias.defined() && bias.requires_grad()) {
                    T* gb = gbuf(bias).data();
                    for (std::size_t c = 0; c < cout; ++c) gb[c] += G.row(c).sum();
                }
            }
        },
        "conv1d");
}

template <class T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride,
                        std::size_t padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[0] || stride == 0)
        throw ShapeError("conv_transpose1d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
    const std::size_t batch = xs[0], cin = xs[1], n = xs[2];
    const std::size_t cout = ws[1], k = ws[2];
    if (bias.defined() && bias.shape() != Shape{cout})
        throw ShapeError("conv_transpose1d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(ws));
    if ((n - 1) * stride + k < 2 * padding + 1)
        throw ShapeError("conv_transpose1d: padding too large for input " + shape_str(xs));
    const std::size_t nout = (n - 1) * stride + k - 2 * padding;

    // Adjoint of conv1d with the same geometry: cols = W^T x, then col2im.
    Tensor<T> out(Shape{batch, cout, nout});
    AlignedVector<T> cols(cout * k * n);
    CMapMat<T> W(w.value().data(), cin, cout * k);
    for (std::size_t b = 0; b < batch; ++b) {
        MapMat<T>(cols.data(), cout * k, n).noalias() =
            W.transpose() * CMapMat<T>(x.value().data() + b * cin * n, cin, n);
        col2im(cols.data(), cout, nout, k, stride, padding, n, out.data() + b * cout * nout);
        if (bias.defined()) {
            MapMat<T> O(out.data() + b * cout * nout, cout, nout);
            for (std::size_t c = 0; c < cout; ++c) O.row(c).array() += bias.value()[c];
        }
    }
    return make_op<T>(
        std::move(out), {x, w, bias},
        [x, w, bias, batch, cin, n, cout, k, stride, padding, nout](Node<T>& self) {
            AlignedVector<T> cols(cout * k * n);
            CMapMat<T> W(w.value().data(), cin, cout * k);
            for (std::size_t b = 0; b < batch; ++b) {
                const T* g = self.grad.data() + b * cout * nout;
                im2col(g, cout, nout, k, stride, padding, n, cols.data());
                CMapMat<T> C(cols.data(), cout * k, n);
                if (x.requires_grad())
                    MapMat<T>(gbuf(x).data() + b * cin * n, cin, n).noalias() += W * C;
                if (w.requires_grad())
                    MapMat<T>(gbuf(w).data(), cin, cout * k).noalias() +=
                        CMapMat<T>(x.value().data() + b * cin * n, cin, n) * C.transpose();
                if (bias.defined() && bias.requires_grad()) {
                    T* gb = gbuf(bias).data();
                    CMapMat<T> G(g, cout, nout);
                    for (std::size_t c = 0; c < cout; ++c) gb[c] += G.row(c).sum();
                }
            }
        },
        "conv_transpose1d");
}

#define PODAR_INSTANTIATE(T)                                                                                    \
    template Var<T> detach(const Var<T>&);                                                                      \
    template Var<T> constant(Tensor<T>);                                                                        \
    template Var<T> parameter(Tensor<T>);                                                                       \
    template Var<T> make_op(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>, const char*);         \
    template void backward(const Var<T>&);                                                                      \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> div(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> scale(const Var<T>&, T);                                                                    \
    template Var<T> add_scalar(const Var<T>&, T);                                                               \
    template Var<T> tanh(const Var<T>&);                                                                        \
    template Var<T> elu(const Var<T>&, T);                                                                      \
    template Var<T> exp(const Var<T>&);                                                                         \
    template Var<T> log(const Var<T>&);                                                                         \
    template Var<T> sqrt(const Var<T>&);                                                                        \
    template Var<T> abs(const Var<T>&);                                                                         \
    template Var<T> square(const Var<T>&);                                                                      \
    template Var<T> pow10(const Var<T>&);                                                                       \
    template Var<T> sum(const Var<T>&);                                                                         \
    template Var<T> mean(const Var<T>&);                                                                        \
    template Var<T> sum_axis(const Var<T>&, std::size_t);                                                       \
    template Var<T> mean_axis(const Var<T>&, std::size_t);                                                      \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> reshape(const Var<T>&, Shape);                                                              \
    template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                                    \
    template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                                \
    template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                            \
    template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&);                                \
    template Var<T> softmax(const Var<T>&);                                                                     \
    template Var<T> layer_norm(const Var<T>&, T);                                                               \
    template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);              \
    template Var<T> conv_transpose1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);

PODAR_INSTANTIATE(float)
PODAR_INSTANTIATE(double)

#undef PODAR_INSTANTIATE

}  // namespace podar::ad
