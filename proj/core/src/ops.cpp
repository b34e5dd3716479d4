#include "cdcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

namespace cdcn {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
bool wants_grad(const TensorT<T>& t) {
    return t.defined() && t.requires_grad();
}

template <typename T>
TensorT<T> make_result(Shape shape, std::vector<T> data,
                       std::vector<ImplPtr<T>> parents,
                       std::function<void(TensorImpl<T>&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (backward_fn) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward_fn);
    }
    return TensorT<T>::from_impl(std::move(impl));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void check_rank4(const TensorT<T>& x, const char* op) {
    if (!x.defined() || x.rank() != 4) {
        throw ShapeError(std::string(op) + ": expected NCHW tensor, got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
    }
}

struct ConvGeom {
    int n, ci, h, w;
    int co, k;
    int stride, pad;
    int oh, ow;
};

template <typename T>
ConvGeom conv_geometry(const TensorT<T>& x, const TensorT<T>& w, int stride, int padding,
                       const char* op) {
    check_rank4(x, op);
    check_rank4(w, op);
    if (w.dim(2) != w.dim(3)) {
        throw ShapeError(std::string(op) + ": kernel must be square, got " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError(std::string(op) + ": input channels " + std::to_string(x.dim(1)) +
                         " do not match kernel channels " + std::to_string(w.dim(1)));
    }
    if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw ValueError(std::string(op) + ": padding must be >= 0");
    ConvGeom g;
    g.n = x.dim(0);
    g.ci = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.co = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    g.pad = padding;
    g.oh = (g.h + 2 * padding - g.k) / stride + 1;
    g.ow = (g.w + 2 * padding - g.k) / stride + 1;
    if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
        throw ShapeError(std::string(op) + ": kernel " + std::to_string(g.k) +
                         " larger than padded input " + shape_str(x.shape()));
    }
    return g;
}

// One sample: x (CI,H,W) -> col [CI*K*K][OH*OW], zero-padded sampling.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
    const int64_t span = static_cast<int64_t>(g.oh) * g.ow;
    for (int ci = 0; ci < g.ci; ++ci) {
        const T* plane = x + static_cast<int64_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                T* row = col + ((static_cast<int64_t>(ci) * g.k + ky) * g.k + kx) * span;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* out = row + static_cast<int64_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out, out + g.ow, T(0));
                        continue;
                    }
                    const T* in = plane + static_cast<int64_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a col buffer back onto one sample's input gradient.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* gx) {
    const int64_t span = static_cast<int64_t>(g.oh) * g.ow;
    for (int ci = 0; ci < g.ci; ++ci) {
        T* plane = gx + static_cast<int64_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const T* row = col + ((static_cast<int64_t>(ci) * g.k + ky) * g.k + kx) * span;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* in = row + static_cast<int64_t>(oy) * g.ow;
                    T* out = plane + static_cast<int64_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) out[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[i];

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(a) || wants_grad(b))) {
        auto ia = a.impl();
        auto ib = b.impl();
        fn = [ia, ib](TensorImpl<T>& self) {
            if (ia->requires_grad) detail::accumulate_grad(*ia, self.grad.data(), self.numel());
            if (ib->requires_grad) detail::accumulate_grad(*ib, self.grad.data(), self.numel());
        };
    }
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] - pb[i];

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(a) || wants_grad(b))) {
        auto ia = a.impl();
        auto ib = b.impl();
        fn = [ia, ib](TensorImpl<T>& self) {
            if (ia->requires_grad) detail::accumulate_grad(*ia, self.grad.data(), self.numel());
            if (ib->requires_grad) {
                ib->ensure_grad();
                for (int64_t i = 0; i < self.numel(); ++i) ib->grad[i] -= self.grad[i];
            }
        };
    }
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * pb[i];

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(a) || wants_grad(b))) {
        auto ia = a.impl();
        auto ib = b.impl();
        fn = [ia, ib](TensorImpl<T>& self) {
            if (ia->requires_grad) {
                ia->ensure_grad();
                for (int64_t i = 0; i < self.numel(); ++i) ia->grad[i] += self.grad[i] * ib->data[i];
            }
            if (ib->requires_grad) {
                ib->ensure_grad();
                for (int64_t i = 0; i < self.numel(); ++i) ib->grad[i] += self.grad[i] * ia->data[i];
            }
        };
    }
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * factor;

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(a)) {
        auto ia = a.impl();
        fn = [ia, factor](TensorImpl<T>& self) {
            ia->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ia->grad[i] += self.grad[i] * factor;
        };
    }
    return make_result(a.shape(), std::move(out), {a.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T offset) {
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + offset;

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(a)) {
        auto ia = a.impl();
        fn = [ia](TensorImpl<T>& self) {
            detail::accumulate_grad(*ia, self.grad.data(), self.numel());
        };
    }
    return make_result(a.shape(), std::move(out), {a.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = px[i] > T(0) ? px[i] : T(0);

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) {
                if (ix->data[i] > T(0)) ix->grad[i] += self.grad[i];
            }
        };
    }
    return make_result(x.shape(), std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-px[i]));

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) {
                const T y = self.data[i];
                ix->grad[i] += self.grad[i] * y * (T(1) - y);
            }
        };
    }
    return make_result(x.shape(), std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    double acc = 0.0;
    const T* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(px[i]);

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix](TensorImpl<T>& self) {
            ix->ensure_grad();
            const T g = self.grad[0];
            for (T& v : ix->grad) v += g;
        };
    }
    return make_result({1}, {static_cast<T>(acc)}, {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
    double acc = 0.0;
    const T* px = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, n](TensorImpl<T>& self) {
            ix->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(n);
            for (T& v : ix->grad) v += g;
        };
    }
    return make_result({1}, {static_cast<T>(acc / static_cast<double>(n))}, {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int padding) {
    const ConvGeom g = conv_geometry(x, w, stride, padding, "conv2d");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.co)) {
        throw ShapeError("conv2d: bias must have shape (" + std::to_string(g.co) + "), got " +
                         shape_str(bias.shape()));
    }

    const int64_t span = static_cast<int64_t>(g.oh) * g.ow;
    const int64_t ikk = static_cast<int64_t>(g.ci) * g.k * g.k;
    std::vector<T> out(static_cast<size_t>(g.n) * g.co * span);
    std::vector<T> col(static_cast<size_t>(ikk) * span);

    for (int n = 0; n < g.n; ++n) {
        im2col(x.data() + static_cast<int64_t>(n) * g.ci * g.h * g.w, g, col.data());
        detail::gemm_nn(g.co, static_cast<int>(span), static_cast<int>(ikk), T(1),
                        w.data(), col.data(), T(0), out.data() + static_cast<int64_t>(n) * g.co * span);
    }
    if (bias.defined()) {
        const T* pb = bias.data();
        for (int n = 0; n < g.n; ++n) {
            for (int o = 0; o < g.co; ++o) {
                T* dst = out.data() + (static_cast<int64_t>(n) * g.co + o) * span;
                for (int64_t i = 0; i < span; ++i) dst[i] += pb[o];
            }
        }
    }

    std::function<void(TensorImpl<T>&)> fn;
    std::vector<ImplPtr<T>> parents = {x.impl(), w.impl()};
    if (bias.defined()) parents.push_back(bias.impl());
    if (!NoGradGuard::active() && (wants_grad(x) || wants_grad(w) || wants_grad(bias))) {
        auto ix = x.impl();
        auto iw = w.impl();
        ImplPtr<T> ib = bias.defined() ? bias.impl() : nullptr;
        fn = [ix, iw, ib, g, span, ikk](TensorImpl<T>& self) {
            const T* gy = self.grad.data();
            if (ib && ib->requires_grad) {
                std::vector<T> gb(static_cast<size_t>(g.co), T(0));
                for (int n = 0; n < g.n; ++n) {
                    for (int o = 0; o < g.co; ++o) {
                        const T* src = gy + (static_cast<int64_t>(n) * g.co + o) * span;
                        double acc = 0.0;
                        for (int64_t i = 0; i < span; ++i) acc += static_cast<double>(src[i]);
                        gb[o] += static_cast<T>(acc);
                    }
                }
                detail::accumulate_grad(*ib, gb.data(), g.co);
            }
            std::vector<T> col(static_cast<size_t>(ikk) * span);
            if (iw->requires_grad) {
                std::vector<T> gw(iw->data.size(), T(0));
                for (int n = 0; n < g.n; ++n) {
                    im2col(ix->data.data() + static_cast<int64_t>(n) * g.ci * g.h * g.w, g, col.data());
                    detail::gemm_nt(g.co, static_cast<int>(ikk), static_cast<int>(span), T(1),
                                    gy + static_cast<int64_t>(n) * g.co * span, col.data(), T(1), gw.data());
                }
                detail::accumulate_grad(*iw, gw.data(), static_cast<int64_t>(gw.size()));
            }
            if (ix->requires_grad) {
                std::vector<T> gx(ix->data.size(), T(0));
                for (int n = 0; n < g.n; ++n) {
                    detail::gemm_tn(static_cast<int>(ikk), static_cast<int>(span), g.co, T(1),
                                    iw->data.data(), gy + static_cast<int64_t>(n) * g.co * span,
                                    T(0), col.data());
                    col2im_add(col.data(), g, gx.data() + static_cast<int64_t>(n) * g.ci * g.h * g.w);
                }
                detail::accumulate_grad(*ix, gx.data(), static_cast<int64_t>(gx.size()));
            }
        };
    }
    return make_result({g.n, g.co, g.oh, g.ow}, std::move(out), std::move(parents), std::move(fn));
}

template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& x, int k, int stride) {
    check_rank4(x, "maxpool2d");
    if (k < 1 || stride < 1) throw ValueError("maxpool2d: k and stride must be >= 1");
    const int h = x.dim(2);
    const int w = x.dim(3);
    if (k == stride && (h % stride != 0 || w % stride != 0)) {
        throw ShapeError("maxpool2d: spatial size " + shape_str(x.shape()) +
                         " not divisible by stride " + std::to_string(stride));
    }
    if (k > h || k > w) throw ShapeError("maxpool2d: window larger than input");
    const int n = x.dim(0);
    const int c = x.dim(1);
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;

    std::vector<T> out(static_cast<size_t>(n) * c * oh * ow);
    std::vector<int64_t> argmax(out.size());
    const T* px = x.data();
    int64_t oi = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = px + (static_cast<int64_t>(ni) * c + ci) * h * w;
            const int64_t plane_base = (static_cast<int64_t>(ni) * c + ci) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    T best = plane[static_cast<int64_t>(oy * stride) * w + ox * stride];
                    int64_t best_idx = static_cast<int64_t>(oy * stride) * w + ox * stride;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int64_t idx = static_cast<int64_t>(oy * stride + ky) * w + ox * stride + kx;
                            if (plane[idx] > best) {  // strict: first occurrence wins ties
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = plane_base + best_idx;
                }
            }
        }
    }

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, argmax = std::move(argmax)](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int64_t i = 0; i < self.numel(); ++i) ix->grad[argmax[i]] += self.grad[i];
        };
    }
    return make_result({n, c, oh, ow}, std::move(out), {x.impl()}, std::move(fn));
}

namespace {

struct BilinearAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

BilinearAxis bilinear_axis(int in, int out) {
    BilinearAxis ax;
    ax.lo.resize(out);
    ax.hi.resize(out);
    ax.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        ax.lo[i] = lo;
        ax.hi[i] = std::min(lo + 1, in - 1);
        ax.frac[i] = src - lo;
    }
    return ax;
}

}  // namespace

template <typename T>
TensorT<T> resize(const TensorT<T>& x, int out_h, int out_w, ResizeMode mode) {
    check_rank4(x, "resize");
    if (out_h < 1 || out_w < 1) throw ValueError("resize: output size must be >= 1");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t planes = static_cast<int64_t>(n) * c;
    std::vector<T> out(planes * out_h * out_w);
    const T* px = x.data();

    if (mode == ResizeMode::kNearest) {
        std::vector<int> ys(out_h), xs(out_w);
        for (int i = 0; i < out_h; ++i) ys[i] = std::min(h - 1, static_cast<int>(i * static_cast<double>(h) / out_h));
        for (int j = 0; j < out_w; ++j) xs[j] = std::min(w - 1, static_cast<int>(j * static_cast<double>(w) / out_w));
        for (int64_t p = 0; p < planes; ++p) {
            const T* in = px + p * h * w;
            T* dst = out.data() + p * out_h * out_w;
            for (int i = 0; i < out_h; ++i)
                for (int j = 0; j < out_w; ++j) dst[static_cast<int64_t>(i) * out_w + j] = in[static_cast<int64_t>(ys[i]) * w + xs[j]];
        }
        std::function<void(TensorImpl<T>&)> fn;
        if (!NoGradGuard::active() && wants_grad(x)) {
            auto ix = x.impl();
            fn = [ix, ys, xs, h, w, out_h, out_w, planes](TensorImpl<T>& self) {
                ix->ensure_grad();
                for (int64_t p = 0; p < planes; ++p) {
                    T* gx = ix->grad.data() + p * h * w;
                    const T* gy = self.grad.data() + p * out_h * out_w;
                    for (int i = 0; i < out_h; ++i)
                        for (int j = 0; j < out_w; ++j) gx[static_cast<int64_t>(ys[i]) * w + xs[j]] += gy[static_cast<int64_t>(i) * out_w + j];
                }
            };
        }
        return make_result({n, c, out_h, out_w}, std::move(out), {x.impl()}, std::move(fn));
    }

    const BilinearAxis ay = bilinear_axis(h, out_h);
    const BilinearAxis axx = bilinear_axis(w, out_w);
    for (int64_t p = 0; p < planes; ++p) {
        const T* in = px + p * h * w;
        T* dst = out.data() + p * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const double fy = ay.frac[i];
            const int y0 = ay.lo[i], y1 = ay.hi[i];
            for (int j = 0; j < out_w; ++j) {
                const double fx = axx.frac[j];
                const int x0 = axx.lo[j], x1 = axx.hi[j];
                const double v = (1 - fy) * ((1 - fx) * in[static_cast<int64_t>(y0) * w + x0] + fx * in[static_cast<int64_t>(y0) * w + x1]) +
                                 fy * ((1 - fx) * in[static_cast<int64_t>(y1) * w + x0] + fx * in[static_cast<int64_t>(y1) * w + x1]);
                dst[static_cast<int64_t>(i) * out_w + j] = static_cast<T>(v);
            }
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, ay, axx, h, w, out_h, out_w, planes](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int64_t p = 0; p < planes; ++p) {
                T* gx = ix->grad.data() + p * h * w;
                const T* gy = self.grad.data() + p * out_h * out_w;
                for (int i = 0; i < out_h; ++i) {
                    const double fy = ay.frac[i];
                    const int y0 = ay.lo[i], y1 = ay.hi[i];
                    for (int j = 0; j < out_w; ++j) {
                        const double fx = axx.frac[j];
                        const int x0 = axx.lo[j], x1 = axx.hi[j];
                        const T g = gy[static_cast<int64_t>(i) * out_w + j];
                        gx[static_cast<int64_t>(y0) * w + x0] += static_cast<T>((1 - fy) * (1 - fx)) * g;
                        gx[static_cast<int64_t>(y0) * w + x1] += static_cast<T>((1 - fy) * fx) * g;
                        gx[static_cast<int64_t>(y1) * w + x0] += static_cast<T>(fy * (1 - fx)) * g;
                        gx[static_cast<int64_t>(y1) * w + x1] += static_cast<T>(fy * fx) * g;
                    }
                }
            }
        };
    }
    return make_result({n, c, out_h, out_w}, std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var,
                       bool training, bool update_running_stats, T momentum, T eps) {
    check_rank4(x, "batchnorm2d");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
        throw ShapeError("batchnorm2d: gamma/beta must have shape (" + std::to_string(c) + ")");
    }
    if (static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c) {
        throw ShapeError("batchnorm2d: running stats size mismatch");
    }
    const int64_t m = static_cast<int64_t>(n) * h * w;  // reduction count per channel
    if (m < 1) throw ValueError("batchnorm2d: empty batch");

    std::vector<T> mu(c), inv_std(c);
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0, s2 = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* plane = x.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
                for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
                    s += plane[i];
                    s2 += static_cast<double>(plane[i]) * plane[i];
                }
            }
            const double mean_c = s / static_cast<double>(m);
            const double var_c = std::max(0.0, s2 / static_cast<double>(m) - mean_c * mean_c);
            mu[ci] = static_cast<T>(mean_c);
            inv_std[ci] = static_cast<T>(1.0 / std::sqrt(var_c + static_cast<double>(eps)));
            if (update_running_stats) {
                const double unbiased = m > 1 ? var_c * static_cast<double>(m) / static_cast<double>(m - 1) : var_c;
                running_mean[ci] = static_cast<T>((1 - momentum) * running_mean[ci] + momentum * mean_c);
                running_var[ci] = static_cast<T>((1 - momentum) * running_var[ci] + momentum * unbiased);
            }
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            mu[ci] = running_mean[ci];
            inv_std[ci] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ci]) + static_cast<double>(eps)));
        }
    }

    std::vector<T> out(x.numel());
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const int64_t base = (static_cast<int64_t>(ni) * c + ci) * h * w;
            const T a = pg[ci] * inv_std[ci];
            const T b = pb[ci] - mu[ci] * a;
            for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) out[base + i] = a * px[base + i] + b;
        }
    }

    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(x) || wants_grad(gamma) || wants_grad(beta))) {
        auto ix = x.impl();
        auto ig = gamma.impl();
        auto ib = beta.impl();
        fn = [ix, ig, ib, mu, inv_std, n, c, h, w, m, training](TensorImpl<T>& self) {
            const T* gy = self.grad.data();
            const int64_t hw = static_cast<int64_t>(h) * w;
            std::vector<T> dgamma(c, T(0)), dbeta(c, T(0));
            std::vector<double> sum_gy(c, 0.0), sum_gy_xhat(c, 0.0);
            for (int ci = 0; ci < c; ++ci) {
                double sg = 0.0, sgx = 0.0;
                for (int ni = 0; ni < n; ++ni) {
                    const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        const double g = gy[base + i];
                        const double xhat = (ix->data[base + i] - mu[ci]) * inv_std[ci];
                        sg += g;
                        sgx += g * xhat;
                    }
                }
                sum_gy[ci] = sg;
                sum_gy_xhat[ci] = sgx;
                dbeta[ci] = static_cast<T>(sg);
                dgamma[ci] = static_cast<T>(sgx);
            }
            if (ig->requires_grad) detail::accumulate_grad(*ig, dgamma.data(), c);
            if (ib->requires_grad) detail::accumulate_grad(*ib, dbeta.data(), c);
            if (ix->requires_grad) {
                ix->ensure_grad();
                for (int ci = 0; ci < c; ++ci) {
                    const T a = ig->data[ci] * inv_std[ci];
                    const T mean_gy = static_cast<T>(sum_gy[ci] / static_cast<double>(m));
                    const T mean_gy_xhat = static_cast<T>(sum_gy_xhat[ci] / static_cast<double>(m));
                    for (int ni = 0; ni < n; ++ni) {
                        const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            if (training) {
                                const T xhat = (ix->data[base + i] - mu[ci]) * inv_std[ci];
                                ix->grad[base + i] += a * (gy[base + i] - mean_gy - xhat * mean_gy_xhat);
                            } else {
                                ix->grad[base + i] += a * gy[base + i];
                            }
                        }
                    }
                }
            }
        };
    }
    return make_result(x.shape(), std::move(out), {x.impl(), gamma.impl(), beta.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
    if (xs.empty()) throw ValueError("concat_channels: no inputs");
    check_rank4(xs[0], "concat_channels");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int c_total = 0;
    for (const auto& x : xs) {
        check_rank4(x, "concat_channels");
        if (x.dim(0) != n || x.dim(2) != h || x.dim(3) != w) {
            throw ShapeError("concat_channels: incompatible shapes " + shape_str(xs[0].shape()) +
                             " vs " + shape_str(x.shape()));
        }
        c_total += x.dim(1);
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<T> out(static_cast<size_t>(n) * c_total * hw);
    int c_off = 0;
    for (const auto& x : xs) {
        const int ci = x.dim(1);
        for (int ni = 0; ni < n; ++ni) {
            std::memcpy(out.data() + (static_cast<int64_t>(ni) * c_total + c_off) * hw,
                        x.data() + static_cast<int64_t>(ni) * ci * hw,
                        static_cast<size_t>(ci) * hw * sizeof(T));
        }
        c_off += ci;
    }

    std::function<void(TensorImpl<T>&)> fn;
    std::vector<ImplPtr<T>> parents;
    bool any = false;
    for (const auto& x : xs) {
        parents.push_back(x.impl());
        any = any || wants_grad(x);
    }
    if (!NoGradGuard::active() && any) {
        std::vector<int> channels;
        for (const auto& x : xs) channels.push_back(x.dim(1));
        auto saved = parents;
        fn = [saved, channels, n, c_total, hw](TensorImpl<T>& self) {
            int c_off = 0;
            for (size_t k = 0; k < saved.size(); ++k) {
                const int ci = channels[k];
                if (saved[k]->requires_grad) {
                    saved[k]->ensure_grad();
                    for (int ni = 0; ni < n; ++ni) {
                        const T* src = self.grad.data() + (static_cast<int64_t>(ni) * c_total + c_off) * hw;
                        T* dst = saved[k]->grad.data() + static_cast<int64_t>(ni) * ci * hw;
                        for (int64_t i = 0; i < static_cast<int64_t>(ci) * hw; ++i) dst[i] += src[i];
                    }
                }
                c_off += ci;
            }
        };
    }
    return make_result({n, c_total, h, w}, std::move(out), std::move(parents), std::move(fn));
}

template <typename T>
TensorT<T> channel_mean(const TensorT<T>& x) {
    check_rank4(x, "channel_mean");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<T> out(static_cast<size_t>(n) * hw);
    const T* px = x.data();
    for (int ni = 0; ni < n; ++ni) {
        T* dst = out.data() + static_cast<int64_t>(ni) * hw;
        for (int64_t i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (int ci = 0; ci < c; ++ci) acc += px[(static_cast<int64_t>(ni) * c + ci) * hw + i];
            dst[i] = static_cast<T>(acc / c);
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, n, c, hw](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int ni = 0; ni < n; ++ni) {
                const T* gy = self.grad.data() + static_cast<int64_t>(ni) * hw;
                for (int ci = 0; ci < c; ++ci) {
                    T* dst = ix->grad.data() + (static_cast<int64_t>(ni) * c + ci) * hw;
                    for (int64_t i = 0; i < hw; ++i) dst[i] += gy[i] / static_cast<T>(c);
                }
            }
        };
    }
    return make_result({n, 1, h, w}, std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> channel_max(const TensorT<T>& x) {
    check_rank4(x, "channel_max");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<T> out(static_cast<size_t>(n) * hw);
    std::vector<int> argmax(out.size());
    const T* px = x.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int64_t i = 0; i < hw; ++i) {
            T best = px[static_cast<int64_t>(ni) * c * hw + i];
            int best_c = 0;
            for (int ci = 1; ci < c; ++ci) {
                const T v = px[(static_cast<int64_t>(ni) * c + ci) * hw + i];
                if (v > best) {
                    best = v;
                    best_c = ci;
                }
            }
            out[static_cast<int64_t>(ni) * hw + i] = best;
            argmax[static_cast<int64_t>(ni) * hw + i] = best_c;
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, argmax = std::move(argmax), n, c, hw](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int ni = 0; ni < n; ++ni) {
                for (int64_t i = 0; i < hw; ++i) {
                    const int ci = argmax[static_cast<int64_t>(ni) * hw + i];
                    ix->grad[(static_cast<int64_t>(ni) * c + ci) * hw + i] += self.grad[static_cast<int64_t>(ni) * hw + i];
                }
            }
        };
    }
    return make_result({n, 1, h, w}, std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> mul_channel_broadcast(const TensorT<T>& x, const TensorT<T>& a) {
    check_rank4(x, "mul_channel_broadcast");
    check_rank4(a, "mul_channel_broadcast");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (a.dim(0) != n || a.dim(1) != 1 || a.dim(2) != h || a.dim(3) != w) {
        throw ShapeError("mul_channel_broadcast: attention map must be (N,1,H,W), got " +
                         shape_str(a.shape()));
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<T> out(x.numel());
    const T* px = x.data();
    const T* pa = a.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
            const T* amap = pa + static_cast<int64_t>(ni) * hw;
            for (int64_t i = 0; i < hw; ++i) out[base + i] = px[base + i] * amap[i];
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(x) || wants_grad(a))) {
        auto ix = x.impl();
        auto ia = a.impl();
        fn = [ix, ia, n, c, hw](TensorImpl<T>& self) {
            if (ix->requires_grad) {
                ix->ensure_grad();
                for (int ni = 0; ni < n; ++ni) {
                    const T* amap = ia->data.data() + static_cast<int64_t>(ni) * hw;
                    for (int ci = 0; ci < c; ++ci) {
                        const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                        for (int64_t i = 0; i < hw; ++i) ix->grad[base + i] += self.grad[base + i] * amap[i];
                    }
                }
            }
            if (ia->requires_grad) {
                ia->ensure_grad();
                for (int ni = 0; ni < n; ++ni) {
                    T* dst = ia->grad.data() + static_cast<int64_t>(ni) * hw;
                    for (int ci = 0; ci < c; ++ci) {
                        const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                        for (int64_t i = 0; i < hw; ++i) dst[i] += self.grad[base + i] * ix->data[base + i];
                    }
                }
            }
        };
    }
    return make_result(x.shape(), std::move(out), {x.impl(), a.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> bias_add_channel(const TensorT<T>& x, const TensorT<T>& bias) {
    check_rank4(x, "bias_add_channel");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (bias.rank() != 1 || bias.dim(0) != c) {
        throw ShapeError("bias_add_channel: bias must have shape (" + std::to_string(c) + ")");
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<T> out(x.numel());
    const T* px = x.data();
    const T* pb = bias.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) out[base + i] = px[base + i] + pb[ci];
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && (wants_grad(x) || wants_grad(bias))) {
        auto ix = x.impl();
        auto ib = bias.impl();
        fn = [ix, ib, n, c, hw](TensorImpl<T>& self) {
            if (ix->requires_grad) detail::accumulate_grad(*ix, self.grad.data(), self.numel());
            if (ib->requires_grad) {
                ib->ensure_grad();
                for (int ni = 0; ni < n; ++ni) {
                    for (int ci = 0; ci < c; ++ci) {
                        const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                        double acc = 0.0;
                        for (int64_t i = 0; i < hw; ++i) acc += self.grad[base + i];
                        ib->grad[ci] += static_cast<T>(acc);
                    }
                }
            }
        };
    }
    return make_result(x.shape(), std::move(out), {x.impl(), bias.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> center_sample(const TensorT<T>& x, int kernel, int stride, int padding) {
    check_rank4(x, "center_sample");
    if (kernel % 2 == 0) throw ValueError("center_sample: kernel size must be odd");
    if (stride < 1 || padding < 0) throw ValueError("center_sample: invalid stride/padding");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = (h + 2 * padding - kernel) / stride + 1;
    const int ow = (w + 2 * padding - kernel) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("center_sample: empty output");
    const int ctr = (kernel - 1) / 2;

    std::vector<T> out(static_cast<size_t>(n) * c * oh * ow, T(0));
    const T* px = x.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = px + (static_cast<int64_t>(ni) * c + ci) * h * w;
            T* dst = out.data() + (static_cast<int64_t>(ni) * c + ci) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride - padding + ctr;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - padding + ctr;
                    if (ix >= 0 && ix < w) dst[static_cast<int64_t>(oy) * ow + ox] = plane[static_cast<int64_t>(iy) * w + ix];
                }
            }
        }
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(x)) {
        auto ix = x.impl();
        fn = [ix, n, c, h, w, oh, ow, stride, padding, ctr](TensorImpl<T>& self) {
            ix->ensure_grad();
            for (int ni = 0; ni < n; ++ni) {
                for (int ci = 0; ci < c; ++ci) {
                    T* gx = ix->grad.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
                    const T* gy = self.grad.data() + (static_cast<int64_t>(ni) * c + ci) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ctr;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix2 = ox * stride - padding + ctr;
                            if (ix2 >= 0 && ix2 < w) gx[static_cast<int64_t>(iy) * w + ix2] += gy[static_cast<int64_t>(oy) * ow + ox];
                        }
                    }
                }
            }
        };
    }
    return make_result({n, c, oh, ow}, std::move(out), {x.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> kernel_hw_sum(const TensorT<T>& w) {
    check_rank4(w, "kernel_hw_sum");
    const int o = w.dim(0), i = w.dim(1);
    const int64_t kk = static_cast<int64_t>(w.dim(2)) * w.dim(3);
    std::vector<T> out(static_cast<size_t>(o) * i);
    const T* pw = w.data();
    for (int64_t oi = 0; oi < static_cast<int64_t>(o) * i; ++oi) {
        double acc = 0.0;
        for (int64_t j = 0; j < kk; ++j) acc += pw[oi * kk + j];
        out[oi] = static_cast<T>(acc);
    }
    std::function<void(TensorImpl<T>&)> fn;
    if (!NoGradGuard::active() && wants_grad(w)) {
        auto iw = w.impl();
        fn = [iw, o, i, kk](TensorImpl<T>& self) {
            iw->ensure_grad();
            for (int64_t oi = 0; oi < static_cast<int64_t>(o) * i; ++oi) {
                const T g = self.grad[oi];
                for (int64_t j = 0; j < kk; ++j) iw->grad[oi * kk + j] += g;
            }
        };
    }
    return make_result({o, i, 1, 1}, std::move(out), {w.impl()}, std::move(fn));
}

template <typename T>
TensorT<T> flip_horizontal(const TensorT<T>& x) {
    if (!x.defined() || x.rank() < 1) throw ShapeError("flip_horizontal: undefined or rank-0 tensor");
    const Shape& s = x.shape();
    const int last = s.back();
    const int64_t rows = x.numel() / last;
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < last; ++j) out[r * last + j] = px[r * last + (last - 1 - j)];
    }
    return TensorT<T>(s, std::move(out));
}

template <typename T>
TensorT<T> stack_batch(const std::vector<TensorT<T>>& samples) {
    if (samples.empty()) throw ValueError("stack_batch: no samples");
    const Shape& s = samples[0].shape();
    for (const auto& t : samples) {
        if (t.shape() != s) {
            throw ShapeError("stack_batch: inconsistent sample shapes " + shape_str(s) + " vs " +
                             shape_str(t.shape()));
        }
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int>(samples.size()));
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    std::vector<T> out(static_cast<size_t>(samples.size()) * samples[0].numel());
    for (size_t i = 0; i < samples.size(); ++i) {
        std::memcpy(out.data() + i * samples[0].numel(), samples[i].data(),
                    static_cast<size_t>(samples[0].numel()) * sizeof(T));
    }
    return TensorT<T>(std::move(out_shape), std::move(out));
}

#define CDCN_INSTANTIATE_OPS(T)                                                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                              \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                              \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                              \
    template TensorT<T> scale(const TensorT<T>&, T);                                            \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                                       \
    template TensorT<T> relu(const TensorT<T>&);                                                \
    template TensorT<T> sigmoid(const TensorT<T>&);                                             \
    template TensorT<T> sum(const TensorT<T>&);                                                 \
    template TensorT<T> mean(const TensorT<T>&);                                                \
    template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, int); \
    template TensorT<T> maxpool2d(const TensorT<T>&, int, int);                                 \
    template TensorT<T> resize(const TensorT<T>&, int, int, ResizeMode);                        \
    template TensorT<T> batchnorm2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                    std::vector<T>&, std::vector<T>&, bool, bool, T, T);        \
    template TensorT<T> concat_channels(const std::vector<TensorT<T>>&);                        \
    template TensorT<T> channel_mean(const TensorT<T>&);                                        \
    template TensorT<T> channel_max(const TensorT<T>&);                                         \
    template TensorT<T> mul_channel_broadcast(const TensorT<T>&, const TensorT<T>&);            \
    template TensorT<T> bias_add_channel(const TensorT<T>&, const TensorT<T>&);                 \
    template TensorT<T> center_sample(const TensorT<T>&, int, int, int);                        \
    template TensorT<T> kernel_hw_sum(const TensorT<T>&);                                       \
    template TensorT<T> flip_horizontal(const TensorT<T>&);                                     \
    template TensorT<T> stack_batch(const std::vector<TensorT<T>>&);

CDCN_INSTANTIATE_OPS(float)
CDCN_INSTANTIATE_OPS(double)

#undef CDCN_INSTANTIATE_OPS

}  // namespace cdcn
