#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dufal/common.hpp"

namespace dufal {

namespace autograd {

/// Reverse-mode graph recording is on by default; NoGradGuard disables it
/// for inference paths so no tape is built.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }

  private:
    bool prev_;
};

}  // namespace autograd

template <class T>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on first use, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return data.size(); }

    T* grad_ptr() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

/// Dense n-d array, row-major with the last axis fastest, carrying an
/// optional gradient accumulator. Copies are shallow (shared node), which
/// is what the tape needs; use clone() for a deep copy.
template <class T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->shape = std::move(shape);
        node_->data.assign(count(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> data,
                            bool requires_grad = false) {
        if (count(shape) != data.size()) {
            std::ostringstream os;
            os << "tensor: data length " << data.size() << " does not match shape product "
               << count(shape);
            throw ShapeError(os.str());
        }
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t size() const { return node_->data.size(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T* ptr() { return node_->data.data(); }
    const T* ptr() const { return node_->data.data(); }
    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }

    T& at(std::initializer_list<std::size_t> idx) { return node_->data[offset(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return node_->data[offset(idx)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    std::vector<T>& grad() {
        node_->grad_ptr();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        node_->grad_ptr();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

    T item() const {
        if (size() != 1) throw ShapeError("item(): tensor is not a scalar");
        return node_->data[0];
    }

    /// Deep copy detached from the graph.
    Tensor clone() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    /// Same storage viewed under a new shape (element count must match).
    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    /// Runs reverse-mode accumulation from this (scalar) tensor. Gradients
    /// add into .grad() of every reachable tensor with requires_grad. The
    /// recorded tape is released afterwards.
    void backward() {
        if (size() != 1) throw ShapeError("backward(): root must be a scalar");
        std::vector<TensorNode<T>*> order;
        topo_order(order);
        node_->grad_ptr()[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<T>* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
        for (TensorNode<T>* n : order) {
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }

  private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        std::size_t off = 0, d = 0;
        for (auto i : idx) off = off * node_->shape[d] + i, ++d;
        return off;
    }

    void topo_order(std::vector<TensorNode<T>*>& order) const {
        std::unordered_set<TensorNode<T>*> seen;
        // Iterative post-order DFS; graphs can be thousands of nodes deep.
        std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                TensorNode<T>* p = n->parents[next++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

/// Builds a graph node for an op result. `backward` receives the output
/// node (its grad is already populated) and is responsible for pushing
/// gradients into the parents captured by the closure.
template <class T>
Tensor<T> make_op(std::vector<std::size_t> shape, std::vector<T> data,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward) {
    Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(data));
    if (!autograd::grad_mode()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.set_requires_grad(true);
    auto node = out.node();
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
    return out;
}

template <class T>
void accumulate(TensorNode<T>& dst, const std::vector<T>& delta) {
    T* g = dst.grad_ptr();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

template <class T>
Tensor<T> Tensor<T>::reshaped(std::vector<std::size_t> new_shape) const {
    if (count(new_shape) != size()) throw ShapeError("reshape: element count mismatch");
    Tensor<T> self = *this;
    return detail::make_op<T>(
        std::move(new_shape), std::vector<T>(node_->data), {self},
        [a = node_](TensorNode<T>& out) {
            T* g = a->grad_ptr();
            for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
        });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        std::ostringstream os;
        os << op << ": shape mismatch (";
        for (auto s : a.shape()) os << s << " ";
        os << "vs ";
        for (auto s : b.shape()) os << s << " ";
        os << ")";
        throw ShapeError(os.str());
    }
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_op<T>(
        std::vector<std::size_t>(a.shape()), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](TensorNode<T>& o) {
            if (an->requires_grad) detail::accumulate(*an, o.grad);
            if (bn->requires_grad) detail::accumulate(*bn, o.grad);
        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_op<T>(
        std::vector<std::size_t>(a.shape()), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](TensorNode<T>& o) {
            if (an->requires_grad) detail::accumulate(*an, o.grad);
            if (bn->requires_grad) {
                T* g = bn->grad_ptr();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
            }
        });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_op<T>(
        std::vector<std::size_t>(a.shape()), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](TensorNode<T>& o) {
            if (an->requires_grad) {
                T* g = an->grad_ptr();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                T* g = bn->grad_ptr();
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * an->data[i];
            }
        });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return detail::make_op<T>(
        std::vector<std::size_t>(a.shape()), std::move(out), {a},
        [an = a.node(), s](TensorNode<T>& o) {
            T* g = an->grad_ptr();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
        });
}

/// Elementwise max; ties route the gradient to the first argument.
template <class T>
Tensor<T> max_pair(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "max_pair");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
    return detail::make_op<T>(
        std::vector<std::size_t>(a.shape()), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](TensorNode<T>& o) {
            T* ga = an->requires_grad ? an->grad_ptr() : nullptr;
            T* gb = bn->requires_grad ? bn->grad_ptr() : nullptr;
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                if (an->data[i] >= bn->data[i]) {
                    if (ga) ga[i] += o.grad[i];
                } else if (gb) {
                    gb[i] += o.grad[i];
                }
            }
        });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    return detail::make_op<T>(
        {1}, {acc}, {a}, [an = a.node()](TensorNode<T>& o) {
            T* g = an->grad_ptr();
            const T go = o.grad[0];
            for (std::size_t i = 0; i < an->data.size(); ++i) g[i] += go;
        });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// Finiteness contract

template <class T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

template <class T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!all_finite(t)) throw ValueError(what + ": non-finite value encountered");
}

}  // namespace dufal
