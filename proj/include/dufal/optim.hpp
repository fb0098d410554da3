#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dufal/tensor.hpp"

namespace dufal {

/// Named trainable tensor. Names are stable and used as checkpoint keys.
template <class T>
struct Parameter {
    Tensor<T> tensor;
    std::string name;
};

/// Adam moments for a parameter list, in parameter order.
template <class T>
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<T>> m, v;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <class T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>*>& params) {
    AdamState<T> st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto* p : params) {
        st.m.emplace_back(p->tensor.size(), T(0));
        st.v.emplace_back(p->tensor.size(), T(0));
    }
    return st;
}

/// One bias-corrected Adam update from the gradients currently stored on
/// the parameters. Throws on non-finite gradients so training can abort
/// with a diagnostic instead of silently corrupting the model.
template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, T lr) {
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state does not match parameter list");
    state.step += 1;
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<T>& p = *params[pi];
        std::vector<T>& g = p.tensor.grad();
        std::vector<T>& m = state.m[pi];
        std::vector<T>& v = state.v[pi];
        if (m.size() != g.size()) throw ShapeError("adam_step: moment shape mismatch for " + p.name);
        T* w = p.tensor.ptr();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(static_cast<double>(g[i])))
                throw ValueError("adam_step: non-finite gradient in " + p.name);
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

/// base_lr * (1 + cos(pi * step / total_steps)) / 2.
inline double cosine_annealing_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
    if (total_steps <= 0) throw ValueError("cosine_annealing_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw ValueError("cosine_annealing_lr: step out of range");
    return base_lr * (1.0 + std::cos(3.14159265358979323846 * double(step) / double(total_steps))) / 2.0;
}

template <class T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
    for (auto* p : params) p->tensor.zero_grad();
}

}  // namespace dufal
