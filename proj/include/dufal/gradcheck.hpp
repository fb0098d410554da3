#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dufal/rng.hpp"
#include "dufal/tensor.hpp"

namespace dufal {

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences (fp64, h = 1e-5) and returns the maximum
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
///
/// When max_coords > 0 only that many coordinates (seeded choice) are
/// perturbed, which keeps whole-model checks tractable.
inline double check_gradient(const std::function<Tensor<double>(Tensor<double>&)>& fn,
                             Tensor<double>& input, double h = 1e-5,
                             std::size_t max_coords = 0, std::uint64_t seed = 17) {
    input.set_requires_grad(true);
    input.zero_grad();
    Tensor<double> loss = fn(input);
    loss.backward();
    std::vector<double> analytic = input.grad();

    std::vector<std::size_t> coords;
    if (max_coords == 0 || max_coords >= input.size()) {
        coords.resize(input.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_coords; ++i)
            coords.push_back(rng.uniform_index(input.size()));
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    double max_rel = 0.0;
    autograd::NoGradGuard no_grad;
    for (std::size_t i : coords) {
        const double saved = input[i];
        input[i] = saved + h;
        const double fp = fn(input).item();
        input[i] = saved - h;
        const double fm = fn(input).item();
        input[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace dufal
