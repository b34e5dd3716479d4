#include "cdcn/losses.hpp"

namespace cdcn {

namespace {

constexpr int kNeighborOffsets[8][2] = {
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
};

// Reshape any accepted mask layout to (N,1,H,W) without copying data.
template <typename T>
TensorT<T> as_mask_batch(const TensorT<T>& t, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined mask");
    switch (t.rank()) {
        case 2:
            return t.reshape({1, 1, t.dim(0), t.dim(1)});
        case 3:
            return t.reshape({t.dim(0), 1, t.dim(1), t.dim(2)});
        case 4:
            if (t.dim(1) == 1) return t;
            break;
        default:
            break;
    }
    throw ShapeError(std::string(op) + ": expected (H,W), (N,H,W) or (N,1,H,W) mask, got " +
                     shape_str(t.shape()));
}

}  // namespace

template <typename T>
CdlKernelBankT<T>::CdlKernelBankT() {
    std::vector<T> all(8 * 9, T(0));
    for (int n = 0; n < 8; ++n) {
        std::vector<T> k(9, T(0));
        k[4] = T(-1);
        const int y = kNeighborOffsets[n][0] + 1;
        const int x = kNeighborOffsets[n][1] + 1;
        k[y * 3 + x] = T(1);
        kernels[n] = TensorT<T>({1, 1, 3, 3}, k);
        for (int i = 0; i < 9; ++i) all[n * 9 + i] = k[i];
    }
    stacked = TensorT<T>({8, 1, 3, 3}, std::move(all));
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& predicted, const TensorT<T>& target) {
    if (!predicted.defined() || !target.defined() || predicted.shape() != target.shape()) {
        throw ShapeError("mse_loss: mask shapes must match");
    }
    TensorT<T> d = sub(predicted, target);
    return mean(mul(d, d));
}

template <typename T>
TensorT<T> cdl_loss(const TensorT<T>& predicted, const TensorT<T>& target,
                    const CdlKernelBankT<T>& bank) {
    if (!predicted.defined() || !target.defined() || predicted.shape() != target.shape()) {
        throw ShapeError("cdl_loss: mask shapes must match");
    }
    TensorT<T> p = as_mask_batch(predicted, "cdl_loss");
    TensorT<T> g = as_mask_batch(target, "cdl_loss");
    TensorT<T> rp = conv2d(p, bank.stacked, TensorT<T>(), 1, 1);
    TensorT<T> rg = conv2d(g, bank.stacked, TensorT<T>(), 1, 1);
    TensorT<T> d = sub(rp, rg);
    TensorT<T> total = sum(mul(d, d));
    const int64_t batch = p.dim(0);
    const int64_t denom = static_cast<int64_t>(p.dim(2)) * p.dim(3) * 8 * batch;
    return scale(total, T(1) / static_cast<T>(denom));
}

template <typename T>
LossReportT<T> overall_loss(const TensorT<T>& predicted, const TensorT<T>& target) {
    static const CdlKernelBankT<T> bank{};
    LossReportT<T> report;
    TensorT<T> m = mse_loss(predicted, target);
    TensorT<T> c = cdl_loss(predicted, target, bank);
    report.total = add(m, c);
    report.mse = m.item();
    report.cdl = c.item();
    report.overall = report.total.item();
    return report;
}

#define CDCN_INSTANTIATE_LOSSES(T)                                          \
    template struct CdlKernelBankT<T>;                                      \
    template TensorT<T> mse_loss(const TensorT<T>&, const TensorT<T>&);     \
    template TensorT<T> cdl_loss(const TensorT<T>&, const TensorT<T>&,      \
                                 const CdlKernelBankT<T>&);                 \
    template LossReportT<T> overall_loss(const TensorT<T>&, const TensorT<T>&);

CDCN_INSTANTIATE_LOSSES(float)
CDCN_INSTANTIATE_LOSSES(double)

#undef CDCN_INSTANTIATE_LOSSES

}  // namespace cdcn
