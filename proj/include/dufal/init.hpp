#pragma once

#include <cmath>

#include "dufal/rng.hpp"
#include "dufal/tensor.hpp"

namespace dufal {

/// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <class T>
Tensor<T> kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::vector<T> data(Tensor<T>::count(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

/// U(-s, s) per component; used for complex spectral weights with the
/// FNO-style scale s = 1 / C_in.
template <class T>
Tensor<T> uniform_init(std::vector<std::size_t> shape, double s, Rng& rng) {
    std::vector<T> data(Tensor<T>::count(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-s, s));
    return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

template <class T>
Tensor<T> zeros_param(std::vector<std::size_t> shape) {
    Tensor<T> t(std::move(shape), T(0), true);
    return t;
}

template <class T>
Tensor<T> const_param(std::vector<std::size_t> shape, T value) {
    Tensor<T> t(std::move(shape), value, true);
    return t;
}

}  // namespace dufal
