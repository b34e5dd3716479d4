#pragma once

#include <array>

#include "cdcn/ops.hpp"

namespace cdcn {

// Eight fixed 3x3 contrast kernels: -1 at the center, +1 at the n-th of the
// 8 neighbors in row-major order. Non-learnable.
template <typename T>
struct CdlKernelBankT {
    std::array<TensorT<T>, 8> kernels;  // each (1,1,3,3)
    TensorT<T> stacked;                 // (8,1,3,3), same kernels as one filter bank

    CdlKernelBankT();
};

using CdlKernelBank = CdlKernelBankT<float>;
using CdlKernelBankD = CdlKernelBankT<double>;

template <typename T>
struct LossReportT {
    T mse = T(0);
    T cdl = T(0);
    T overall = T(0);
    TensorT<T> total;  // differentiable scalar; overall == total.item()
};

using LossReport = LossReportT<float>;
using LossReportD = LossReportT<double>;

// Mean squared error over every mask pixel (and over the batch, when batched).
// Accepts (H,W), (N,H,W) or (N,1,H,W) masks; shapes must match exactly.
template <typename T>
TensorT<T> mse_loss(const TensorT<T>& predicted, const TensorT<T>& target);

// Contrastive depth loss: each bank kernel is convolved over both masks
// (stride 1, zero padding 1), responses are compared by squared difference,
// and the total is averaged over H*W*8 positions and the batch.
template <typename T>
TensorT<T> cdl_loss(const TensorT<T>& predicted, const TensorT<T>& target,
                    const CdlKernelBankT<T>& bank);

// overall = mse + cdl; `total` is the scalar to call backward() on.
template <typename T>
LossReportT<T> overall_loss(const TensorT<T>& predicted, const TensorT<T>& target);

}  // namespace cdcn
