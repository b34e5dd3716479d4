#pragma once

#include <vector>

#include "cdcn/model.hpp"

namespace cdcn {

template <typename T>
struct AdamConfigT {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T weight_decay = T(5e-5);  // L2 term folded into the gradient
};

using AdamConfig = AdamConfigT<float>;

// Adam with bias correction. step() consumes the gradients accumulated on the
// registered parameters; callers zero them between steps.
template <typename T>
class AdamT {
  public:
    AdamT(std::vector<ParamRefT<T>> params, AdamConfigT<T> config);

    // One update at the given effective learning rate. Parameters without an
    // accumulated gradient are treated as zero-gradient. Non-finite gradients
    // raise TrainError naming the parameter.
    void step(T lr_t);

    void zero_grad();
    long step_count() const { return t_; }

  private:
    std::vector<ParamRefT<T>> params_;
    AdamConfigT<T> config_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    long t_ = 0;
};

using Adam = AdamT<float>;

// base_lr * 0.5^floor(epoch / halve_every)
double lr_at_epoch(double base_lr, int epoch, int halve_every);

}  // namespace cdcn
