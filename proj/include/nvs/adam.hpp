#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace nvs {

// One Adam update on a parameter slice against moment slices of equal size.
// The caller owns the step counter `t` (already incremented for this step).
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 std::int64_t t, T beta1, T beta2, T eps, T lr) {
    if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
        throw std::invalid_argument("adam: parameter/gradient/state size mismatch");
    const T bc1 = T(1) - T(std::pow(double(beta1), double(t)));
    const T bc2 = T(1) - T(std::pow(double(beta2), double(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * grads[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * grads[i] * grads[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Moments plus step counter for one parameter group. Rows may be dropped or
// appended when anchors are pruned or grown; the step counter is per group.
template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-15);

    static AdamState zeros(std::size_t n) {
        AdamState s;
        s.m.assign(n, T(0));
        s.v.assign(n, T(0));
        return s;
    }

    void step(std::span<T> params, std::span<const T> grads, T lr) {
        if (params.size() != m.size())
            throw std::invalid_argument("adam: parameter count does not match state");
        ++t;
        adam_update<T>(params, grads, std::span<T>(m), std::span<T>(v), t, beta1, beta2, eps, lr);
    }

    // Advances the step counter without touching moments; used when a group is
    // updated slice-by-slice via adam_update.
    std::int64_t begin_step() { return ++t; }

    void keep_rows(std::size_t row_size, const std::vector<char>& keep) {
        std::size_t dst = 0;
        for (std::size_t r = 0; r < keep.size(); ++r) {
            if (!keep[r]) continue;
            for (std::size_t i = 0; i < row_size; ++i) {
                m[dst * row_size + i] = m[r * row_size + i];
                v[dst * row_size + i] = v[r * row_size + i];
            }
            ++dst;
        }
        m.resize(dst * row_size);
        v.resize(dst * row_size);
    }

    void append_rows(std::size_t row_size, std::size_t count) {
        m.resize(m.size() + row_size * count, T(0));
        v.resize(v.size() + row_size * count, T(0));
    }
};

}  // namespace nvs
