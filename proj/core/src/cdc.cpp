#include "cdcn/cdc.hpp"

#include <cmath>
#include <functional>

namespace cdcn {

template <typename T>
void validate_cdc_layer(const CdcLayerT<T>& layer) {
    if (!layer.weight.defined() || layer.weight.rank() != 4) {
        throw ShapeError("cdc layer: weight must be (O,I,K,K)");
    }
    if (layer.weight.dim(2) != layer.weight.dim(3)) {
        throw ShapeError("cdc layer: kernel must be square, got " + shape_str(layer.weight.shape()));
    }
    if (layer.weight.dim(2) % 2 == 0) {
        throw ValueError("cdc layer: kernel size must be odd, got " + std::to_string(layer.weight.dim(2)));
    }
    if (!(layer.theta >= T(0) && layer.theta <= T(1))) {
        throw ValueError("cdc layer: theta must lie in [0,1]");
    }
    if (layer.stride < 1) throw ValueError("cdc layer: stride must be >= 1");
    if (layer.padding < 0) throw ValueError("cdc layer: padding must be >= 0");
    if (layer.bias.defined() &&
        (layer.bias.rank() != 1 || layer.bias.dim(0) != layer.weight.dim(0))) {
        throw ShapeError("cdc layer: bias must have shape (" + std::to_string(layer.weight.dim(0)) +
                         "), got " + shape_str(layer.bias.shape()));
    }
}

template <typename T>
TensorT<T> vanilla_conv(const TensorT<T>& x, const CdcLayerT<T>& layer) {
    validate_cdc_layer(layer);
    return conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding);
}

namespace {

template <typename T>
T padded_at(const T* plane, int h, int w, int y, int x) {
    return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<int64_t>(y) * w + x] : T(0);
}

}  // namespace

template <typename T>
TensorT<T> central_diff_conv(const TensorT<T>& x, const CdcLayerT<T>& layer) {
    validate_cdc_layer(layer);
    if (!x.defined() || x.rank() != 4) throw ShapeError("central_diff_conv: expected NCHW input");
    const TensorT<T>& w = layer.weight;
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("central_diff_conv: input channels " + std::to_string(x.dim(1)) +
                         " do not match kernel channels " + std::to_string(w.dim(1)));
    }
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int co = w.dim(0), k = w.dim(2);
    const int s = layer.stride, p = layer.padding;
    const int oh = (h + 2 * p - k) / s + 1;
    const int ow = (ww + 2 * p - k) / s + 1;
    if (h + 2 * p < k || ww + 2 * p < k) {
        throw ShapeError("central_diff_conv: kernel larger than padded input");
    }
    const int ctr = (k - 1) / 2;

    std::vector<T> out(static_cast<size_t>(n) * co * oh * ow, T(0));
    const T* px = x.data();
    const T* pw = w.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int o = 0; o < co; ++o) {
            T* dst = out.data() + (static_cast<int64_t>(ni) * co + o) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    const int yc = oy * s - p + ctr;
                    const int xc = ox * s - p + ctr;
                    for (int c = 0; c < ci; ++c) {
                        const T* plane = px + (static_cast<int64_t>(ni) * ci + c) * h * ww;
                        const T center = padded_at(plane, h, ww, yc, xc);
                        const T* wk = pw + (static_cast<int64_t>(o) * ci + c) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const T v = padded_at(plane, h, ww, oy * s - p + ky, ox * s - p + kx);
                                acc += static_cast<double>(wk[static_cast<int64_t>(ky) * k + kx]) * (v - center);
                            }
                        }
                    }
                    dst[static_cast<int64_t>(oy) * ow + ox] = static_cast<T>(acc);
                }
            }
        }
    }

    std::function<void(TensorImpl<T>&)> fn;
    const bool record = !NoGradGuard::active() &&
                        ((x.defined() && x.requires_grad()) || w.requires_grad());
    if (record) {
        auto ix = x.impl();
        auto iw = w.impl();
        fn = [ix, iw, n, ci, h, ww, co, k, s, p, oh, ow, ctr](TensorImpl<T>& self) {
            const T* gy = self.grad.data();
            const bool need_x = ix->requires_grad;
            const bool need_w = iw->requires_grad;
            std::vector<T> gx(need_x ? ix->data.size() : 0, T(0));
            std::vector<T> gw(need_w ? iw->data.size() : 0, T(0));
            for (int ni = 0; ni < n; ++ni) {
                for (int o = 0; o < co; ++o) {
                    const T* gplane = gy + (static_cast<int64_t>(ni) * co + o) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        for (int ox = 0; ox < ow; ++ox) {
                            const T g = gplane[static_cast<int64_t>(oy) * ow + ox];
                            if (g == T(0)) continue;
                            const int yc = oy * s - p + ctr;
                            const int xc = ox * s - p + ctr;
                            const bool center_in = yc >= 0 && yc < h && xc >= 0 && xc < ww;
                            for (int c = 0; c < ci; ++c) {
                                const T* plane = ix->data.data() + (static_cast<int64_t>(ni) * ci + c) * h * ww;
                                const T center = center_in ? plane[static_cast<int64_t>(yc) * ww + xc] : T(0);
                                const int64_t wbase = (static_cast<int64_t>(o) * ci + c) * k * k;
                                T* gxp = need_x ? gx.data() + (static_cast<int64_t>(ni) * ci + c) * h * ww : nullptr;
                                for (int ky = 0; ky < k; ++ky) {
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int iy = oy * s - p + ky;
                                        const int ixx = ox * s - p + kx;
                                        const bool in = iy >= 0 && iy < h && ixx >= 0 && ixx < ww;
                                        const T wv = iw->data[wbase + static_cast<int64_t>(ky) * k + kx];
                                        if (need_w) {
                                            const T v = in ? plane[static_cast<int64_t>(iy) * ww + ixx] : T(0);
                                            gw[wbase + static_cast<int64_t>(ky) * k + kx] += g * (v - center);
                                        }
                                        if (need_x) {
                                            if (in) gxp[static_cast<int64_t>(iy) * ww + ixx] += g * wv;
                                            if (center_in) gxp[static_cast<int64_t>(yc) * ww + xc] -= g * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (need_x) detail::accumulate_grad(*ix, gx.data(), static_cast<int64_t>(gx.size()));
            if (need_w) detail::accumulate_grad(*iw, gw.data(), static_cast<int64_t>(gw.size()));
        };
    }

    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = {n, co, oh, ow};
    impl->data = std::move(out);
    if (fn) {
        impl->requires_grad = true;
        impl->parents = {x.impl(), w.impl()};
        impl->backward_fn = std::move(fn);
    }
    return TensorT<T>::from_impl(std::move(impl));
}

template <typename T>
TensorT<T> cdc(const TensorT<T>& x, const CdcLayerT<T>& layer) {
    validate_cdc_layer(layer);
    TensorT<T> plain = conv2d(x, layer.weight, TensorT<T>(), layer.stride, layer.padding);
    TensorT<T> diff = central_diff_conv(x, layer);
    TensorT<T> y = add(scale(diff, layer.theta), scale(plain, T(1) - layer.theta));
    if (layer.bias.defined()) y = bias_add_channel(y, layer.bias);
    return y;
}

template <typename T>
TensorT<T> cdc_decomposed(const TensorT<T>& x, const CdcLayerT<T>& layer) {
    validate_cdc_layer(layer);
    TensorT<T> main = conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding);
    if (layer.theta == T(0)) return main;
    TensorT<T> centers = center_sample(x, layer.weight.dim(2), layer.stride, layer.padding);
    TensorT<T> correction = conv2d(centers, kernel_hw_sum(layer.weight), TensorT<T>(), 1, 0);
    return sub(main, scale(correction, layer.theta));
}

#define CDCN_INSTANTIATE_CDC(T)                                            \
    template void validate_cdc_layer(const CdcLayerT<T>&);                 \
    template TensorT<T> vanilla_conv(const TensorT<T>&, const CdcLayerT<T>&); \
    template TensorT<T> central_diff_conv(const TensorT<T>&, const CdcLayerT<T>&); \
    template TensorT<T> cdc(const TensorT<T>&, const CdcLayerT<T>&);       \
    template TensorT<T> cdc_decomposed(const TensorT<T>&, const CdcLayerT<T>&);

CDCN_INSTANTIATE_CDC(float)
CDCN_INSTANTIATE_CDC(double)

#undef CDCN_INSTANTIATE_CDC

}  // namespace cdcn
