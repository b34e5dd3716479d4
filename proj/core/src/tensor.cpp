#include "cdcn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cdcn {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool NoGradGuard::active() { return g_no_grad_depth > 0; }

template <typename T>
TensorT<T>::TensorT(Shape shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), T(0));
}

template <typename T>
TensorT<T>::TensorT(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
    TensorT t(std::move(shape));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value, bool requires_grad) {
    TensorT t(std::move(shape));
    if (requires_grad) t.set_requires_grad(true);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_values(Shape shape, std::initializer_list<T> values,
                                   bool requires_grad) {
    return TensorT(std::move(shape), std::vector<T>(values), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::rand_uniform(Shape shape, T lo, T hi, std::mt19937& rng,
                                    bool requires_grad) {
    TensorT t(std::move(shape));
    if (requires_grad) t.set_requires_grad(true);
    std::uniform_real_distribution<T> dist(lo, hi);
    for (T& v : t.impl_->data) v = dist(rng);
    return t;
}

template <typename T>
const Shape& TensorT<T>::shape() const {
    if (!impl_) throw ValueError("use of undefined tensor");
    return impl_->shape;
}

template <typename T>
int TensorT<T>::rank() const {
    return static_cast<int>(shape().size());
}

template <typename T>
int TensorT<T>::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

template <typename T>
int64_t TensorT<T>::numel() const {
    if (!impl_) return 0;
    return impl_->numel();
}

template <typename T>
T* TensorT<T>::data() {
    if (!impl_) throw ValueError("use of undefined tensor");
    return impl_->data.data();
}

template <typename T>
const T* TensorT<T>::data() const {
    if (!impl_) throw ValueError("use of undefined tensor");
    return impl_->data.data();
}

template <typename T>
T TensorT<T>::at(std::initializer_list<int> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("index rank " + std::to_string(index.size()) +
                         " does not match tensor rank " + std::to_string(s.size()));
    }
    int64_t flat = 0;
    int axis = 0;
    for (int i : index) {
        if (i < 0 || i >= s[axis]) throw ShapeError("index out of range at axis " + std::to_string(axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->data[static_cast<size_t>(flat)];
}

template <typename T>
T TensorT<T>::item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
bool TensorT<T>::requires_grad() const {
    return impl_ && impl_->requires_grad;
}

template <typename T>
void TensorT<T>::set_requires_grad(bool value) {
    if (!impl_) throw ValueError("use of undefined tensor");
    if (!impl_->is_leaf()) throw ValueError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = value;
}

template <typename T>
bool TensorT<T>::has_grad() const {
    return impl_ && !impl_->grad.empty();
}

template <typename T>
const std::vector<T>& TensorT<T>::grad() const {
    if (!has_grad()) throw ValueError("tensor has no populated gradient");
    return impl_->grad;
}

template <typename T>
void TensorT<T>::zero_grad() {
    if (impl_) impl_->grad.clear();
}

template <typename T>
std::vector<TensorImpl<T>*> build_tape(const TensorT<T>& root) {
    std::vector<TensorImpl<T>*> order;
    if (!root.defined()) return order;

    // Iterative post-order DFS over parent edges: each node is emitted after
    // every node it depends on, so `order` is a valid tape.
    struct Frame {
        TensorImpl<T>* node;
        size_t next_parent;
    };
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<Frame> stack;
    stack.push_back({root.impl().get(), 0});
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            TensorImpl<T>* parent = top.node->parents[top.next_parent++].get();
            if (visited.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
    return order;
}

template <typename T>
void TensorT<T>::backward() const {
    if (!impl_) throw ValueError("use of undefined tensor");
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));

    std::vector<TensorImpl<T>*> tape = build_tape(*this);

    // Intermediate grads are scratch for this sweep; leaf grads persist and
    // accumulate across sweeps.
    for (TensorImpl<T>* node : tape) {
        if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
    }
    impl_->ensure_grad();
    impl_->grad[0] += T(1);

    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
    if (!impl_) return {};
    return TensorT(impl_->shape, impl_->data, false);
}

template <typename T>
TensorT<T> TensorT<T>::reshape(Shape new_shape) const {
    if (!impl_) throw ValueError("use of undefined tensor");
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(impl_->shape) + " to " + shape_str(new_shape));
    }
    auto out = std::make_shared<TensorImpl<T>>();
    out->shape = std::move(new_shape);
    out->data = impl_->data;
    out->requires_grad = impl_->requires_grad;
    if (impl_->requires_grad && !NoGradGuard::active()) {
        out->parents = {impl_};
        auto parent = impl_;
        out->backward_fn = [parent](TensorImpl<T>& self) {
            detail::accumulate_grad(*parent, self.grad.data(), self.numel());
        };
    }
    return from_impl(std::move(out));
}

template <typename T>
TensorT<T> TensorT<T>::from_impl(std::shared_ptr<TensorImpl<T>> impl) {
    TensorT t;
    t.impl_ = std::move(impl);
    return t;
}

template class TensorT<float>;
template class TensorT<double>;
template std::vector<TensorImpl<float>*> build_tape(const TensorT<float>&);
template std::vector<TensorImpl<double>*> build_tape(const TensorT<double>&);

}  // namespace cdcn
