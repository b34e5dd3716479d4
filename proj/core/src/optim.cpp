#include "cdcn/optim.hpp"

#include <cmath>

#include "cdcn/error.hpp"

namespace cdcn {

template <typename T>
AdamT<T>::AdamT(std::vector<ParamRefT<T>> params, AdamConfigT<T> config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr <= T(0)) throw ValueError("adam: lr must be positive");
    if (config_.beta1 < T(0) || config_.beta1 >= T(1) || config_.beta2 < T(0) ||
        config_.beta2 >= T(1)) {
        throw ValueError("adam: betas must lie in [0, 1)");
    }
    if (params_.empty()) throw ValueError("adam: no parameters to optimize");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamRefT<T>& p : params_) {
        if (!p.tensor || !p.tensor->defined())
            throw ValueError("adam: undefined parameter '" + p.name + "'");
        m_.emplace_back(size_t(p.tensor->numel()), T(0));
        v_.emplace_back(size_t(p.tensor->numel()), T(0));
    }
}

template <typename T>
void AdamT<T>::step(T lr_t) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(config_.beta1), double(t_));
    const double bc2 = 1.0 - std::pow(double(config_.beta2), double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        ParamRefT<T>& ref = params_[i];
        TensorT<T>& p = *ref.tensor;
        const int64_t n = p.numel();
        const T* g = nullptr;
        if (p.has_grad()) {
            g = p.grad().data();
            for (int64_t k = 0; k < n; ++k) {
                if (!std::isfinite(double(g[k])))
                    throw TrainError("non-finite gradient in parameter '" + ref.name + "'");
            }
        }
        T* w = p.data();
        std::vector<T>& m = m_[i];
        std::vector<T>& v = v_[i];
        for (int64_t k = 0; k < n; ++k) {
            T grad = (g ? g[k] : T(0)) + config_.weight_decay * w[k];
            m[k] = config_.beta1 * m[k] + (T(1) - config_.beta1) * grad;
            v[k] = config_.beta2 * v[k] + (T(1) - config_.beta2) * grad * grad;
            T m_hat = T(double(m[k]) / bc1);
            T v_hat = T(double(v[k]) / bc2);
            w[k] -= lr_t * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (ParamRefT<T>& ref : params_) ref.tensor->zero_grad();
}

double lr_at_epoch(double base_lr, int epoch, int halve_every) {
    if (epoch < 0) throw ValueError("lr_at_epoch: negative epoch");
    if (halve_every <= 0) return base_lr;
    return base_lr * std::pow(0.5, double(epoch / halve_every));
}

template class AdamT<float>;
template class AdamT<double>;

}  // namespace cdcn
