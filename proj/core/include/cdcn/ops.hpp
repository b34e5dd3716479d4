#pragma once

#include <vector>

#include "cdcn/tensor.hpp"

// Differentiable primitives over NCHW tensors. Every op validates shapes,
// computes the forward value, and (when any input requires grad and no
// NoGradGuard is active) records a backward rule on the result.

namespace cdcn {

template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, T factor);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T offset);

template <typename T> TensorT<T> relu(const TensorT<T>& x);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& x);

template <typename T> TensorT<T> sum(const TensorT<T>& x);
template <typename T> TensorT<T> mean(const TensorT<T>& x);

// x: (N,I,H,W), w: (O,I,K,K) with square kernel, optional bias: (O).
// Zero padding, output size floor((H + 2*padding - K)/stride) + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int padding);

// Max over k x k windows; gradient routes to the first occurrence of the
// maximum in row-major window order. When k == stride the spatial size must
// be divisible by stride.
template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& x, int k, int stride);

enum class ResizeMode { kNearest, kBilinear };

// Bilinear uses the align-corners-false convention.
template <typename T>
TensorT<T> resize(const TensorT<T>& x, int out_h, int out_w, ResizeMode mode);

// Per-channel batch normalization over (N,H,W). Training mode normalizes
// with batch statistics and, if update_running_stats, folds them into the
// running buffers with the given momentum. Eval mode uses the running
// buffers. gamma/beta shape (C).
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var,
                       bool training, bool update_running_stats,
                       T momentum = T(0.1), T eps = T(1e-5));

template <typename T> TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs);
template <typename T> TensorT<T> channel_mean(const TensorT<T>& x);  // (N,1,H,W)
template <typename T> TensorT<T> channel_max(const TensorT<T>& x);   // (N,1,H,W)

// x: (N,C,H,W) times a: (N,1,H,W), broadcast over channels.
template <typename T>
TensorT<T> mul_channel_broadcast(const TensorT<T>& x, const TensorT<T>& a);

// y(n,c,h,w) = x(n,c,h,w) + bias(c)
template <typename T>
TensorT<T> bias_add_channel(const TensorT<T>& x, const TensorT<T>& bias);

// The receptive-field center map of a convolution with the given geometry:
// out(n,c,i,j) = x(n,c, i*stride - padding + (k-1)/2, j*stride - padding + (k-1)/2),
// zero where the center falls in the padding. k must be odd.
template <typename T>
TensorT<T> center_sample(const TensorT<T>& x, int kernel, int stride, int padding);

// (O,I,K,K) -> (O,I,1,1), summing each kernel's spatial taps.
template <typename T>
TensorT<T> kernel_hw_sum(const TensorT<T>& w);

// Non-graph utilities (results are leaves).
template <typename T> TensorT<T> flip_horizontal(const TensorT<T>& x);
template <typename T> TensorT<T> stack_batch(const std::vector<TensorT<T>>& samples);

}  // namespace cdcn
