#pragma once

#include "cdcn/ops.hpp"

namespace cdcn {

// One convolutional layer blending plain aggregation with central-difference
// aggregation: y = theta * central_diff + (1 - theta) * vanilla, bias added once.
template <typename T>
struct CdcLayerT {
    TensorT<T> weight;  // (O, I, K, K), K odd and square
    TensorT<T> bias;    // (O) or undefined
    T theta = T(0.7);
    int stride = 1;
    int padding = 1;
};

using CdcLayer = CdcLayerT<float>;
using CdcLayerD = CdcLayerT<double>;

template <typename T>
void validate_cdc_layer(const CdcLayerT<T>& layer);

// Plain convolution view of the layer (theta ignored, bias applied).
template <typename T>
TensorT<T> vanilla_conv(const TensorT<T>& x, const CdcLayerT<T>& layer);

// Pure central-difference term, no bias: y(p0) = sum_n w(p_n) * (x(p0+p_n) - x(p0)).
// Direct summation; serves as the reference for the decomposed path.
template <typename T>
TensorT<T> central_diff_conv(const TensorT<T>& x, const CdcLayerT<T>& layer);

// Reference blend: theta * central_diff_conv + (1 - theta) * plain conv, then bias.
template <typename T>
TensorT<T> cdc(const TensorT<T>& x, const CdcLayerT<T>& layer);

// Production path: one dense convolution minus theta * (1x1 conv of the
// center-pixel map with the per-(O,I) kernel sums). Equal to cdc() within fp error.
template <typename T>
TensorT<T> cdc_decomposed(const TensorT<T>& x, const CdcLayerT<T>& layer);

}  // namespace cdcn
