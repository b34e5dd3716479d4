#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cdcn/error.hpp"

namespace cdcn {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor storage plus the autodiff graph node that produced
// it. Op results hold their parents and a backward rule; leaves hold neither.
template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::function<void(TensorImpl<T>&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

// Disables graph recording on this thread while in scope (nesting allowed).
// Forward passes under the guard produce plain leaves.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool active();
};

template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape);
    TensorT(Shape shape, std::vector<T> values, bool requires_grad = false);

    static TensorT zeros(Shape shape, bool requires_grad = false);
    static TensorT full(Shape shape, T value, bool requires_grad = false);
    static TensorT from_values(Shape shape, std::initializer_list<T> values,
                               bool requires_grad = false);
    static TensorT rand_uniform(Shape shape, T lo, T hi, std::mt19937& rng,
                                bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int axis) const;
    int64_t numel() const;

    T* data();
    const T* data() const;
    T at(std::initializer_list<int> index) const;
    T item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool value);  // leaves only

    bool has_grad() const;
    const std::vector<T>& grad() const;  // throws if no grad populated
    void zero_grad();

    // Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    // repeated calls; intermediate gradients are reset per sweep.
    void backward() const;

    // Value copy detached from the graph.
    TensorT detach() const;

    // Same storage viewed under a new shape (element count must match).
    TensorT reshape(Shape new_shape) const;

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    static TensorT from_impl(std::shared_ptr<TensorImpl<T>> impl);

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Ordered operation list for one backward sweep: every node appears after
// all of its parents; the root is last. Exposed for tape-invariant tests.
template <typename T>
std::vector<TensorImpl<T>*> build_tape(const TensorT<T>& root);

namespace detail {

template <typename T>
void accumulate_grad(TensorImpl<T>& node, const T* values, int64_t n) {
    node.ensure_grad();
    for (int64_t i = 0; i < n; ++i) node.grad[i] += values[i];
}

}  // namespace detail

}  // namespace cdcn
