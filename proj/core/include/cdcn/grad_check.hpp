#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>

#include "cdcn/tensor.hpp"

namespace cdcn {

template <typename T>
struct GradCheckResult {
    T max_err = T(0);       // |analytic - numeric| / max(|analytic|, |numeric|, 1)
    int64_t worst_coord = -1;
    T worst_analytic = T(0);
    T worst_numeric = T(0);

    bool passed(T tol) const { return max_err <= tol; }
};

namespace detail {

template <typename T>
T default_fd_step();

template <>
inline float default_fd_step<float>() { return 1e-2f; }

template <>
inline double default_fd_step<double>() { return 1e-5; }

}  // namespace detail

// Compares the reverse-mode gradient of `eval()` w.r.t. `target` against central
// finite differences at the given coordinates (all coordinates when empty).
// `eval` must return a scalar tensor whose graph reaches `target`, and must be
// deterministic: it is invoked twice up front and must reproduce bitwise.
template <typename T>
GradCheckResult<T> grad_check_at(const std::function<TensorT<T>()>& eval, TensorT<T>& target,
                                 std::vector<int64_t> coords = {},
                                 T step = detail::default_fd_step<T>()) {
    if (!target.defined()) throw ValueError("grad_check: undefined target tensor");
    if (!target.requires_grad()) throw ValueError("grad_check: target does not require grad");

    TensorT<T> first = eval();
    if (first.numel() != 1) throw ShapeError("grad_check: eval() must return a scalar");
    {
        TensorT<T> second = eval();
        if (std::memcmp(first.data(), second.data(), sizeof(T)) != 0) {
            throw ValueError("grad_check: eval() is not deterministic");
        }
    }

    target.zero_grad();
    first.backward();
    if (!target.has_grad()) throw ValueError("grad_check: eval() does not reach the target");
    std::vector<T> analytic = target.grad();

    if (coords.empty()) {
        coords.resize(static_cast<size_t>(target.numel()));
        for (int64_t i = 0; i < target.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    }

    GradCheckResult<T> result;
    auto& data = target.impl()->data;
    NoGradGuard guard;
    for (int64_t c : coords) {
        if (c < 0 || c >= target.numel()) throw ValueError("grad_check: coordinate out of range");
        const T saved = data[c];
        const T h = step * std::max(T(1), std::abs(saved));
        data[c] = saved + h;
        const T up = eval().item();
        data[c] = saved - h;
        const T down = eval().item();
        data[c] = saved;
        const T numeric = (up - down) / (T(2) * h);
        const T a = analytic[c];
        const T err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), T(1)});
        if (err > result.max_err) {
            result.max_err = err;
            result.worst_coord = c;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

// Convenience wrapper for a function of one tensor input.
template <typename T>
GradCheckResult<T> grad_check(const std::function<TensorT<T>(const TensorT<T>&)>& f, TensorT<T> x,
                              std::vector<int64_t> coords = {},
                              T step = detail::default_fd_step<T>()) {
    x.set_requires_grad(true);
    return grad_check_at<T>([&f, &x]() { return f(x); }, x, std::move(coords), step);
}

}  // namespace cdcn
