#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "dufal/common.hpp"

namespace dufal::fft {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Twiddle factors and bit-reversal permutation for a radix-2 transform of
/// length n. Tables are computed once per length and shared.
template <class T>
struct Plan {
    std::size_t n = 0;
    std::vector<T> cos_tab, sin_tab;   // e^{-2*pi*i*k/n}, k < n/2
    std::vector<std::uint32_t> rev;

    explicit Plan(std::size_t len) : n(len) {
        cos_tab.resize(n / 2);
        sin_tab.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double ang = -2.0 * 3.14159265358979323846 * double(k) / double(n);
            cos_tab[k] = static_cast<T>(std::cos(ang));
            sin_tab[k] = static_cast<T>(std::sin(ang));
        }
        rev.resize(n);
        std::size_t bits = 0;
        while ((std::size_t(1) << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t(1) << b)) r |= std::size_t(1) << (bits - 1 - b);
            rev[i] = static_cast<std::uint32_t>(r);
        }
    }
};

template <class T>
std::shared_ptr<const Plan<T>> plan_for(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::shared_ptr<const Plan<T>>> cache;
    std::lock_guard lk(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto p = std::make_shared<const Plan<T>>(n);
    cache.emplace(n, p);
    return p;
}

/// In-place radix-2 transform of split-complex data with unit stride.
/// inverse=true conjugates the twiddles; no scaling in either direction.
template <class T>
void transform(T* re, T* im, const Plan<T>& plan, bool inverse) {
    const std::size_t n = plan.n;
    if (n <= 1) return;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = plan.rev[i];
        if (j > i) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2, step = n / len;
        for (std::size_t base = 0; base < n; base += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const T wr = plan.cos_tab[k * step];
                const T wi = inverse ? -plan.sin_tab[k * step] : plan.sin_tab[k * step];
                const std::size_t a = base + k, b = base + k + half;
                const T tr = re[b] * wr - im[b] * wi;
                const T ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

/// 2D transform of one [H,W] split-complex plane, rows then columns.
/// Unnormalized; callers apply 1/(H*W) for the inverse.
template <class T>
void transform_2d(T* re, T* im, std::size_t h, std::size_t w, bool inverse) {
    auto row_plan = plan_for<T>(w);
    auto col_plan = plan_for<T>(h);
    for (std::size_t y = 0; y < h; ++y) transform(re + y * w, im + y * w, *row_plan, inverse);
    std::vector<T> cr(h), ci(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        transform(cr.data(), ci.data(), *col_plan, inverse);
        for (std::size_t y = 0; y < h; ++y) {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
}

}  // namespace dufal::fft
