#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mea/grid.hpp"
#include "mea/rng.hpp"
#include "mea/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mea::nn {

/// Worker count for batch-parallel layer kernels. Results are run-to-run
/// identical for every thread count: reductions accumulate in fixed chunk
/// order, never per-thread. Eigen's own GEMM threading is pinned to one
/// thread; the narrow products these layers emit get slower when Eigen splits
/// them, and the coarse parallelism here is over samples instead.
inline int& num_threads() {
    static int t = [] {
        Eigen::setNbThreads(1);
        return 1;
    }();
    return t;
}

enum class Act { Linear, ReLU, Swish };

template <typename S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Parameter store + Adam
// ---------------------------------------------------------------------------

template <typename S>
struct ParamEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    AlignedVector<S> value, grad, m, v;
    bool trainable = true;

    std::size_t size() const { return value.size(); }
};

template <typename S>
class ParamStore {
public:
    ParamEntry<S>& add(const std::string& name, std::vector<std::uint32_t> dims,
                       bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        std::size_t count = 1;
        for (auto d : dims) count *= d;
        ParamEntry<S> e;
        e.name = name;
        e.dims = std::move(dims);
        e.value.assign(count, S(0));
        e.grad.assign(count, S(0));
        e.m.assign(count, S(0));
        e.v.assign(count, S(0));
        e.trainable = trainable;
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
        return entries_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    ParamEntry<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return entries_[it->second];
    }
    const ParamEntry<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return entries_[it->second];
    }

    std::deque<ParamEntry<S>>& entries() { return entries_; }
    const std::deque<ParamEntry<S>>& entries() const { return entries_; }

    void zero_grad() {
        for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), S(0));
    }

    long long step_count() const { return step_; }
    long long& step_count() { return step_; }

private:
    std::deque<ParamEntry<S>> entries_;
    std::map<std::string, std::size_t> index_;
    long long step_ = 0;
};

/// Trainable parameter elements (weights, biases, batchnorm affine); running
/// statistics and other buffers are excluded.
template <typename S>
std::size_t count_params(const ParamStore<S>& store) {
    std::size_t total = 0;
    for (const auto& e : store.entries())
        if (e.trainable) total += e.size();
    return total;
}

/// Bias-corrected Adam update over all trainable entries; increments the
/// store's step counter.
template <typename S>
void adam_step(ParamStore<S>& store, S lr, S beta1 = S(0.9), S beta2 = S(0.999),
               S eps = S(1e-8)) {
    const long long t = ++store.step_count();
    const S bc1 = S(1) - S(std::pow(double(beta1), double(t)));
    const S bc2 = S(1) - S(std::pow(double(beta2), double(t)));
    for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        if (e.grad.size() != e.value.size())
            throw std::invalid_argument("gradient missing for parameter: " + e.name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const S gi = e.grad[i];
            e.m[i] = beta1 * e.m[i] + (S(1) - beta1) * gi;
            e.v[i] = beta2 * e.v[i] + (S(1) - beta2) * gi * gi;
            const S mhat = e.m[i] / bc1;
            const S vhat = e.v[i] / bc2;
            e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution (3x3 kernels, stride 1 or 2, padding 0 or 1)
// ---------------------------------------------------------------------------

inline int conv_out_size(int in, int stride, int padding) {
    return (in + 2 * padding - 3) / stride + 1;
}

namespace detail_conv {

template <typename S>
using RM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grow-only scratch buffers, one set per thread.
template <typename S>
AlignedVector<S>& scratch(int which) {
    static thread_local AlignedVector<S> bufs[4];
    return bufs[which];
}

/// Repacks a (C_out, C_in, 3, 3) weight into nine (C_in x C_out) tap
/// matrices, tap index ky*3+kx.
template <typename S>
void repack_taps(const ParamEntry<S>& weight, AlignedVector<S>& taps) {
    const int c_out = int(weight.dims[0]);
    const int c_in = int(weight.dims[1]);
    taps.resize(std::size_t(9) * c_in * c_out);
    for (int co = 0; co < c_out; ++co)
        for (int ci = 0; ci < c_in; ++ci)
            for (int t = 0; t < 9; ++t)
                taps[(std::size_t(t) * c_in + ci) * c_out + co] =
                    weight.value[(std::size_t(co) * c_in + ci) * 9 + t];
}

/// Scatter-adds per-tap weight gradients back into the external layout.
template <typename S>
void unpack_tap_grads(const AlignedVector<S>& tap_grads, ParamEntry<S>& weight) {
    const int c_out = int(weight.dims[0]);
    const int c_in = int(weight.dims[1]);
    for (int co = 0; co < c_out; ++co)
        for (int ci = 0; ci < c_in; ++ci)
            for (int t = 0; t < 9; ++t)
                weight.grad[(std::size_t(co) * c_in + ci) * 9 + t] +=
                    tap_grads[(std::size_t(t) * c_in + ci) * c_out + co];
}

/// Copies the batch into a zero-padded channels-last buffer with one pixel of
/// border per side plus guard pixels at both ends of the whole buffer. Source
/// is `values` when use_grad is false, the gradient buffer otherwise.
template <typename S>
void build_padded(const Tensor4<S>& x, bool use_grad, AlignedVector<S>& pad, int nt) {
    const int hp = x.h + 2, wp = x.w + 2;
    const std::size_t guard = std::size_t(wp + 1) * x.c;
    const std::size_t per_sample = std::size_t(hp) * wp * x.c;
    pad.assign(2 * guard + std::size_t(x.b) * per_sample, S(0));
    const S* src_base = use_grad ? x.g.data() : x.v.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int bb = 0; bb < x.b; ++bb) {
        const S* src = src_base + x.offset(bb);
        S* dst = pad.data() + guard + std::size_t(bb) * per_sample;
        for (int row = 0; row < x.h; ++row)
            std::memcpy(dst + (std::size_t(row + 1) * wp + 1) * x.c,
                        src + std::size_t(row) * x.w * x.c,
                        std::size_t(x.w) * x.c * sizeof(S));
    }
}

inline std::size_t padded_pixels(int b, int h, int w) {
    return std::size_t(b) * (h + 2) * (w + 2);
}

/// Builds the (pixels x C_in*9) patch matrix for one sample of x (columns
/// grouped by tap, channels contiguous within a tap).
template <typename S>
void im2row(const Tensor4<S>& x, int bb, int stride, int padding, int h_out, int w_out,
            S* rows) {
    const int k_cols = x.c * 9;
    const S* src = x.v.data() + x.offset(bb);
    for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
            S* dst = rows + (std::size_t(oy) * w_out + ox) * k_cols;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride - padding + ky;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride - padding + kx;
                    S* cell = dst + (ky * 3 + kx) * x.c;
                    if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
                        std::fill(cell, cell + x.c, S(0));
                    else
                        std::memcpy(cell, src + (std::size_t(iy) * x.w + ix) * x.c,
                                    std::size_t(x.c) * sizeof(S));
                }
            }
        }
    }
}

/// Scatter-adds one sample's patch-gradient matrix back onto x.g.
template <typename S>
void row2im_add(const S* rows, Tensor4<S>& x, int bb, int stride, int padding, int h_out,
                int w_out) {
    const int k_cols = x.c * 9;
    S* dst_base = x.g.data() + x.offset(bb);
    for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
            const S* src = rows + (std::size_t(oy) * w_out + ox) * k_cols;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= x.h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= x.w) continue;
                    S* cell = dst_base + (std::size_t(iy) * x.w + ix) * x.c;
                    const S* val = src + (ky * 3 + kx) * x.c;
                    for (int cc = 0; cc < x.c; ++cc) cell[cc] += val[cc];
                }
            }
        }
    }
}

constexpr std::size_t kPixelChunk = 1 << 16;  // GEMM rows per chunk, cache-sized

}  // namespace detail_conv

/// Cross-correlation with a (C_out, C_in, 3, 3) kernel. Stride-1/padding-1
/// convolutions run as nine constant-offset GEMMs over a zero-padded
/// channels-last buffer; the strided and unpadded variants fall back to a
/// patch-matrix GEMM.
template <typename S>
void conv2d_forward(const Tensor4<S>& x, const ParamEntry<S>& weight, const ParamEntry<S>& bias,
                    int stride, int padding, Tensor4<S>& out) {
    using Mat = detail_conv::RM<S>;
    if (weight.dims.size() != 4 || weight.dims[2] != 3 || weight.dims[3] != 3)
        throw std::invalid_argument("conv weight must be (C_out, C_in, 3, 3)");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv stride must be 1 or 2");
    if (padding != 0 && padding != 1) throw std::invalid_argument("conv padding must be 0 or 1");
    const int c_out = int(weight.dims[0]);
    const int c_in = int(weight.dims[1]);
    if (x.c != c_in) throw std::invalid_argument("conv input channel mismatch");
    if (int(bias.dims.size()) != 1 || int(bias.dims[0]) != c_out)
        throw std::invalid_argument("conv bias shape mismatch");
    const int h_out = conv_out_size(x.h, stride, padding);
    const int w_out = conv_out_size(x.w, stride, padding);
    if (h_out < 1 || w_out < 1) throw std::invalid_argument("conv output would be empty");
    out.resize(x.b, c_out, h_out, w_out);

    const Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias.value.data(), c_out);
    const int nt = std::max(1, num_threads());

    auto& taps = detail_conv::scratch<S>(0);
    detail_conv::repack_taps(weight, taps);

    if (stride == 1 && padding == 1) {
        const int wp = x.w + 2;
        auto& xpad = detail_conv::scratch<S>(1);
        detail_conv::build_padded(x, false, xpad, nt);
        auto& ypad = detail_conv::scratch<S>(2);
        const std::size_t n_pix = detail_conv::padded_pixels(x.b, x.h, x.w);
        const std::size_t guard = std::size_t(wp + 1) * x.c;
        const std::size_t yguard = std::size_t(wp + 1) * c_out;
        ypad.resize(2 * yguard + n_pix * c_out);

        for (std::size_t q0 = 0; q0 < n_pix; q0 += detail_conv::kPixelChunk) {
            const std::size_t qn = std::min(n_pix - q0, detail_conv::kPixelChunk);
            Eigen::Map<Mat> y(ypad.data() + yguard + q0 * c_out, qn, c_out);
            for (int t = 0; t < 9; ++t) {
                const int ky = t / 3, kx = t % 3;
                const std::ptrdiff_t poff = std::ptrdiff_t(ky - 1) * wp + (kx - 1);
                const Eigen::Map<const Mat> xs(
                    xpad.data() + guard + (std::ptrdiff_t(q0) + poff) * c_in, qn, c_in);
                const Eigen::Map<const Mat> wt(taps.data() + std::size_t(t) * c_in * c_out,
                                               c_in, c_out);
                if (t == 0)
                    y.noalias() = xs * wt;
                else
                    y.noalias() += xs * wt;
            }
        }
        // copy the interior rows out and add the bias
        const std::size_t per_sample = std::size_t(x.h + 2) * wp * c_out;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
        for (int bb = 0; bb < x.b; ++bb) {
            const S* src = ypad.data() + yguard + std::size_t(bb) * per_sample;
            S* dst = out.v.data() + out.offset(bb);
            for (int row = 0; row < h_out; ++row)
                std::memcpy(dst + std::size_t(row) * w_out * c_out,
                            src + (std::size_t(row + 1) * wp + 1) * c_out,
                            std::size_t(w_out) * c_out * sizeof(S));
            out.sample(bb).rowwise() += b.transpose();
        }
        return;
    }

    // strided / unpadded fallback: per-sample patch matrix
    const int k_cols = c_in * 9;
    const std::size_t p_count = std::size_t(h_out) * w_out;
    auto& rows = detail_conv::scratch<S>(1);
    rows.resize(std::size_t(nt) * p_count * k_cols);
#ifdef _OPENMP
#pragma omp parallel num_threads(nt) if (nt > 1)
#endif
    {
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        S* local = rows.data() + std::size_t(tid) * p_count * k_cols;
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int bb = 0; bb < x.b; ++bb) {
            detail_conv::im2row(x, bb, stride, padding, h_out, w_out, local);
            const Eigen::Map<const Mat> rmat(local, p_count, k_cols);
            const Eigen::Map<const Mat> wmat(taps.data(), k_cols, c_out);
            auto y = out.sample(bb);
            y.noalias() = rmat * wmat;
            y.rowwise() += b.transpose();
        }
    }
}

/// Gradients of conv2d; accumulates into weight.grad, bias.grad and
/// (when propagate_input) x.g.
template <typename S>
void conv2d_backward(Tensor4<S>& x, ParamEntry<S>& weight, ParamEntry<S>& bias,
                     int stride, int padding, const Tensor4<S>& out, bool propagate_input) {
    using Mat = detail_conv::RM<S>;
    const int c_out = int(weight.dims[0]);
    const int c_in = int(weight.dims[1]);
    const int h_out = out.h, w_out = out.w;
    if (propagate_input) x.ensure_grad();
    const int nt = std::max(1, num_threads());

    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(bias.grad.data(), c_out);
    for (int bb = 0; bb < out.b; ++bb) db += out.grad_sample(bb).colwise().sum().transpose();

    auto& taps = detail_conv::scratch<S>(0);
    detail_conv::repack_taps(weight, taps);
    AlignedVector<S> tap_grads(taps.size(), S(0));

    if (stride == 1 && padding == 1) {
        const int wp = x.w + 2;
        auto& xpad = detail_conv::scratch<S>(1);
        detail_conv::build_padded(x, false, xpad, nt);
        auto& dypad = detail_conv::scratch<S>(2);
        detail_conv::build_padded(out, true, dypad, nt);

        const std::size_t n_pix = detail_conv::padded_pixels(x.b, x.h, x.w);
        const std::size_t xguard = std::size_t(wp + 1) * c_in;
        const std::size_t yguard = std::size_t(wp + 1) * c_out;

        auto& dxpad = detail_conv::scratch<S>(3);
        if (propagate_input) dxpad.assign(2 * xguard + n_pix * c_in, S(0));

        for (std::size_t q0 = 0; q0 < n_pix; q0 += detail_conv::kPixelChunk) {
            const std::size_t qn = std::min(n_pix - q0, detail_conv::kPixelChunk);
            const Eigen::Map<const Mat> dy(dypad.data() + yguard + q0 * c_out, qn, c_out);
            for (int t = 0; t < 9; ++t) {
                const int ky = t / 3, kx = t % 3;
                const std::ptrdiff_t poff = std::ptrdiff_t(ky - 1) * wp + (kx - 1);
                const Eigen::Map<const Mat> xs(
                    xpad.data() + xguard + (std::ptrdiff_t(q0) + poff) * c_in, qn, c_in);
                Eigen::Map<Mat> dwt(tap_grads.data() + std::size_t(t) * c_in * c_out, c_in,
                                    c_out);
                dwt.noalias() += xs.transpose() * dy;
                if (propagate_input) {
                    Eigen::Map<Mat> dxs(
                        dxpad.data() + xguard + (std::ptrdiff_t(q0) + poff) * c_in, qn, c_in);
                    const Eigen::Map<const Mat> wt(taps.data() + std::size_t(t) * c_in * c_out,
                                                   c_in, c_out);
                    dxs.noalias() += dy * wt.transpose();
                }
            }
        }
        if (propagate_input) {
            const std::size_t per_sample = std::size_t(x.h + 2) * wp * c_in;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
            for (int bb = 0; bb < x.b; ++bb) {
                const S* src = dxpad.data() + xguard + std::size_t(bb) * per_sample;
                S* dst = x.g.data() + x.offset(bb);
                for (int row = 0; row < x.h; ++row) {
                    const S* srow = src + (std::size_t(row + 1) * wp + 1) * c_in;
                    S* drow = dst + std::size_t(row) * x.w * c_in;
                    for (std::size_t i = 0; i < std::size_t(x.w) * c_in; ++i) drow[i] += srow[i];
                }
            }
        }
        detail_conv::unpack_tap_grads(tap_grads, weight);
        return;
    }

    // strided / unpadded fallback
    const int k_cols = c_in * 9;
    const std::size_t p_count = std::size_t(h_out) * w_out;
    auto& rows = detail_conv::scratch<S>(1);
    auto& drows = detail_conv::scratch<S>(2);
    rows.resize(p_count * k_cols);
    if (propagate_input) drows.resize(p_count * k_cols);
    const Eigen::Map<const Mat> wmat(taps.data(), k_cols, c_out);
    Eigen::Map<Mat> dwmat(tap_grads.data(), k_cols, c_out);
    for (int bb = 0; bb < x.b; ++bb) {  // fixed order keeps dw deterministic
        detail_conv::im2row(x, bb, stride, padding, h_out, w_out, rows.data());
        const Eigen::Map<const Mat> rmat(rows.data(), p_count, k_cols);
        const auto dy = out.grad_sample(bb);
        dwmat.noalias() += rmat.transpose() * dy;
        if (propagate_input) {
            Eigen::Map<Mat> drmat(drows.data(), p_count, k_cols);
            drmat.noalias() = dy * wmat.transpose();
            detail_conv::row2im_add(drows.data(), x, bb, stride, padding, h_out, w_out);
        }
    }
    detail_conv::unpack_tap_grads(tap_grads, weight);
}

// ---------------------------------------------------------------------------
// Dense layer with fused activation
// ---------------------------------------------------------------------------

/// z = x W^T + b, y = act(z). x is treated as (B, C*H*W); out is (B, n_out, 1, 1).
/// The pre-activation is cached in `pre` for the backward pass.
template <typename S>
void dense_forward(const Tensor4<S>& x, const ParamEntry<S>& weight, const ParamEntry<S>& bias,
                   Act act, Tensor4<S>& out, Tensor4<S>& pre) {
    if (weight.dims.size() != 2) throw std::invalid_argument("dense weight must be 2-D");
    const int n_out = int(weight.dims[0]);
    const int n_in = int(weight.dims[1]);
    if (x.c * x.h * x.w != n_in) throw std::invalid_argument("dense input width mismatch");
    if (int(bias.dims[0]) != n_out) throw std::invalid_argument("dense bias shape mismatch");
    out.resize(x.b, n_out, 1, 1);

    using CMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    const CMap w(weight.value.data(), n_out, n_in);
    const Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias.value.data(), n_out);
    auto y = out.flat();
    y.noalias() = x.flat() * w.transpose();
    y.rowwise() += b.transpose();

    if (act == Act::Linear) {
        pre.resize(1, 1, 1, 1);  // not needed
        return;
    }
    pre.resize(x.b, n_out, 1, 1);
    pre.v = out.v;
    for (auto& val : out.v) {
        if (act == Act::ReLU)
            val = val > S(0) ? val : S(0);
        else
            val = val * sigmoid(val);
    }
}

template <typename S>
void dense_backward(Tensor4<S>& x, ParamEntry<S>& weight, ParamEntry<S>& bias, Act act,
                    Tensor4<S>& out, const Tensor4<S>& pre, bool propagate_input) {
    const int n_out = int(weight.dims[0]);
    const int n_in = int(weight.dims[1]);

    // dz = dy * act'(z), computed in place on out.g
    if (act == Act::ReLU) {
        for (std::size_t i = 0; i < out.g.size(); ++i)
            if (pre.v[i] <= S(0)) out.g[i] = S(0);
    } else if (act == Act::Swish) {
        for (std::size_t i = 0; i < out.g.size(); ++i) {
            const S z = pre.v[i];
            const S sg = sigmoid(z);
            out.g[i] *= sg * (S(1) + z * (S(1) - sg));
        }
    }

    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<Mat> dw(weight.grad.data(), n_out, n_in);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(bias.grad.data(), n_out);
    const auto dz = out.grad_flat();
    dw.noalias() += dz.transpose() * x.flat();
    db += dz.colwise().sum().transpose();
    if (propagate_input) {
        x.ensure_grad();
        const Eigen::Map<const Mat> w(weight.value.data(), n_out, n_in);
        x.grad_flat().noalias() += dz * w;
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

template <typename S>
void relu_forward(const Tensor4<S>& x, Tensor4<S>& out) {
    out.resize(x.b, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) out.v[i] = x.v[i] > S(0) ? x.v[i] : S(0);
}

template <typename S>
void relu_backward(Tensor4<S>& x, const Tensor4<S>& out) {
    x.ensure_grad();
    for (std::size_t i = 0; i < x.v.size(); ++i)
        if (x.v[i] > S(0)) x.g[i] += out.g[i];
}

template <typename S>
void swish_forward(const Tensor4<S>& x, Tensor4<S>& out) {
    out.resize(x.b, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) out.v[i] = x.v[i] * sigmoid(x.v[i]);
}

template <typename S>
void swish_backward(Tensor4<S>& x, const Tensor4<S>& out) {
    x.ensure_grad();
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const S z = x.v[i];
        const S sg = sigmoid(z);
        x.g[i] += out.g[i] * sg * (S(1) + z * (S(1) - sg));
    }
}

// ---------------------------------------------------------------------------
// Batch normalization (2d, per channel over batch*H*W)
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormParams {
    ParamEntry<S>* gamma;
    ParamEntry<S>* beta;
    ParamEntry<S>* running_mean;
    ParamEntry<S>* running_var;
    ParamEntry<S>* steps;  // single value, counts training-mode forwards
};

template <typename S>
struct BatchNormCache {
    Eigen::Matrix<S, Eigen::Dynamic, 1> mean, inv_std;
};

template <typename S>
void batchnorm_forward(const Tensor4<S>& x, BatchNormParams<S>& p, bool training,
                       Tensor4<S>& out, BatchNormCache<S>& cache, S eps = S(1e-5),
                       S momentum = S(0.1)) {
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    const int channels = x.c;
    if (int(p.gamma->dims[0]) != channels)
        throw std::invalid_argument("batchnorm channel mismatch");
    out.resize(x.b, x.c, x.h, x.w);
    const std::size_t m = std::size_t(x.b) * x.pixels();

    const Eigen::Map<const Vec> gamma(p.gamma->value.data(), channels);
    const Eigen::Map<const Vec> beta(p.beta->value.data(), channels);
    Vec mu(channels), inv_std(channels);

    if (training) {
        if (m < 2) throw std::invalid_argument("batchnorm training needs batch*H*W >= 2");
        Eigen::Matrix<double, Eigen::Dynamic, 1> sum =
            Eigen::Matrix<double, Eigen::Dynamic, 1>::Zero(channels);
        Eigen::Matrix<double, Eigen::Dynamic, 1> sum_sq = sum;
        for (int bb = 0; bb < x.b; ++bb) {
            const auto s = x.sample(bb);
            sum += s.template cast<double>().colwise().sum().transpose();
            sum_sq += s.template cast<double>().array().square().colwise().sum().transpose().matrix();
        }
        for (int cc = 0; cc < channels; ++cc) {
            const double mean = sum[cc] / double(m);
            const double var = std::max(sum_sq[cc] / double(m) - mean * mean, 0.0);
            mu[cc] = S(mean);
            inv_std[cc] = S(1.0 / std::sqrt(var + double(eps)));
            const double unbiased = var * double(m) / double(m - 1);
            p.running_mean->value[cc] =
                (S(1) - momentum) * p.running_mean->value[cc] + momentum * S(mean);
            p.running_var->value[cc] =
                (S(1) - momentum) * p.running_var->value[cc] + momentum * S(unbiased);
        }
        cache.mean = mu;
        cache.inv_std = inv_std;
        p.steps->value[0] += S(1);
    } else {
        if (p.steps->value[0] <= S(0))
            throw std::logic_error("batchnorm eval mode before any training step");
        for (int cc = 0; cc < channels; ++cc) {
            mu[cc] = p.running_mean->value[cc];
            inv_std[cc] = S(1) / std::sqrt(p.running_var->value[cc] + eps);
        }
    }

    const Vec scale = (gamma.array() * inv_std.array()).matrix();
    const Vec shift = (beta.array() - mu.array() * scale.array()).matrix();
    const int nt = std::max(1, num_threads());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int bb = 0; bb < x.b; ++bb) {
        auto y = out.sample(bb);
        y = x.sample(bb) * scale.asDiagonal();
        y.rowwise() += shift.transpose();
    }
}

template <typename S>
void batchnorm_backward(Tensor4<S>& x, BatchNormParams<S>& p, const Tensor4<S>& out,
                        const BatchNormCache<S>& cache) {
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    if (cache.mean.size() == 0)
        throw std::logic_error("batchnorm backward before training-mode forward");
    x.ensure_grad();
    const int channels = x.c;
    const double m = double(std::size_t(x.b) * x.pixels());

    Eigen::Matrix<double, Eigen::Dynamic, 1> sum_dy =
        Eigen::Matrix<double, Eigen::Dynamic, 1>::Zero(channels);
    Eigen::Matrix<double, Eigen::Dynamic, 1> sum_dy_xhat = sum_dy;
    for (int bb = 0; bb < x.b; ++bb) {
        const auto xs = x.sample(bb);
        const auto dy = out.grad_sample(bb);
        sum_dy += dy.template cast<double>().colwise().sum().transpose();
        // xhat = (x - mu) * inv_std, accumulated per channel
        const auto xc = (xs.rowwise() - cache.mean.transpose()) * cache.inv_std.asDiagonal();
        sum_dy_xhat += (dy.array() * xc.array())
                           .template cast<double>()
                           .colwise()
                           .sum()
                           .transpose()
                           .matrix();
    }
    for (int cc = 0; cc < channels; ++cc) {
        p.gamma->grad[cc] += S(sum_dy_xhat[cc]);
        p.beta->grad[cc] += S(sum_dy[cc]);
    }

    const Vec mean_dy = (sum_dy / m).template cast<S>();
    const Vec mean_dy_xhat = (sum_dy_xhat / m).template cast<S>();
    const Eigen::Map<const Vec> gamma(p.gamma->value.data(), channels);
    const Vec gscale = (gamma.array() * cache.inv_std.array()).matrix();
    const int nt = std::max(1, num_threads());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int bb = 0; bb < x.b; ++bb) {
        const auto xs = x.sample(bb);
        const auto dy = out.grad_sample(bb);
        auto dx = x.grad_sample(bb);
        const auto xhat =
            ((xs.rowwise() - cache.mean.transpose()) * cache.inv_std.asDiagonal()).eval();
        auto centered = (dy.rowwise() - mean_dy.transpose()).eval();
        centered.noalias() -= xhat * mean_dy_xhat.asDiagonal();
        dx.noalias() += centered * gscale.asDiagonal();
    }
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (endpoint-aligned, same semantics as resample order 1)
// ---------------------------------------------------------------------------

template <typename S>
void upsample_forward(const Tensor4<S>& x, int target_h, int target_w, Tensor4<S>& out) {
    if (target_h < x.h || target_w < x.w)
        throw std::invalid_argument("upsample_to cannot shrink the feature map");
    out.resize(x.b, x.c, target_h, target_w);
    if (target_h == x.h && target_w == x.w) {
        out.v = x.v;
        return;
    }
    const auto row_taps = resample_taps(x.h, target_h, 1);
    const auto col_taps = resample_taps(x.w, target_w, 1);
    using Mat = detail_conv::RM<S>;
    const int c = x.c;
    const int nt = std::max(1, num_threads());

#ifdef _OPENMP
#pragma omp parallel num_threads(nt) if (nt > 1)
#endif
    {
        Mat tmp(x.h, std::size_t(target_w) * c);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int bb = 0; bb < x.b; ++bb) {
            const auto src = x.sample_rows(bb);  // h x (w*c)
            auto dst = out.sample_rows(bb);      // target_h x (target_w*c)
            for (int j = 0; j < target_w; ++j) {
                const auto& t = col_taps[j];
                tmp.middleCols(std::size_t(j) * c, c) =
                    S(t.weight[0]) * src.middleCols(std::size_t(t.index[0]) * c, c) +
                    S(t.weight[1]) * src.middleCols(std::size_t(t.index[1]) * c, c);
            }
            for (int i = 0; i < target_h; ++i) {
                const auto& t = row_taps[i];
                dst.row(i) = S(t.weight[0]) * tmp.row(t.index[0]) +
                             S(t.weight[1]) * tmp.row(t.index[1]);
            }
        }
    }
}

template <typename S>
void upsample_backward(Tensor4<S>& x, const Tensor4<S>& out) {
    x.ensure_grad();
    if (out.h == x.h && out.w == x.w) {
        for (std::size_t i = 0; i < x.g.size(); ++i) x.g[i] += out.g[i];
        return;
    }
    const auto row_taps = resample_taps(x.h, out.h, 1);
    const auto col_taps = resample_taps(x.w, out.w, 1);
    using Mat = detail_conv::RM<S>;
    const int c = x.c;
    const int nt = std::max(1, num_threads());

#ifdef _OPENMP
#pragma omp parallel num_threads(nt) if (nt > 1)
#endif
    {
        Mat tmp(x.h, std::size_t(out.w) * c);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int bb = 0; bb < x.b; ++bb) {
            const auto dy = out.grad_sample_rows(bb);
            auto dx = x.grad_sample_rows(bb);
            tmp.setZero();
            for (int i = 0; i < out.h; ++i) {
                const auto& t = row_taps[i];
                tmp.row(t.index[0]) += S(t.weight[0]) * dy.row(i);
                tmp.row(t.index[1]) += S(t.weight[1]) * dy.row(i);
            }
            for (int j = 0; j < out.w; ++j) {
                const auto& t = col_taps[j];
                dx.middleCols(std::size_t(t.index[0]) * c, c) +=
                    S(t.weight[0]) * tmp.middleCols(std::size_t(j) * c, c);
                dx.middleCols(std::size_t(t.index[1]) * c, c) +=
                    S(t.weight[1]) * tmp.middleCols(std::size_t(j) * c, c);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

template <typename S>
void concat_forward(const Tensor4<S>& a, const Tensor4<S>& b, Tensor4<S>& out) {
    if (a.b != b.b || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels spatial/batch mismatch");
    out.resize(a.b, a.c + b.c, a.h, a.w);
    for (int bb = 0; bb < a.b; ++bb) {
        auto y = out.sample(bb);
        y.leftCols(a.c) = a.sample(bb);
        y.rightCols(b.c) = b.sample(bb);
    }
}

template <typename S>
void concat_backward(Tensor4<S>& a, Tensor4<S>& b, const Tensor4<S>& out) {
    a.ensure_grad();
    b.ensure_grad();
    for (int bb = 0; bb < a.b; ++bb) {
        const auto dy = out.grad_sample(bb);
        a.grad_sample(bb) += dy.leftCols(a.c);
        b.grad_sample(bb) += dy.rightCols(b.c);
    }
}

// ---------------------------------------------------------------------------
// MSE loss
// ---------------------------------------------------------------------------

/// Mean squared error; fills pred.g with dL/dpred when with_grad is set.
template <typename S>
double mse_loss(Tensor4<S>& pred, const Tensor4<S>& target, bool with_grad = true) {
    if (!pred.same_shape(target)) throw std::invalid_argument("mse shape mismatch");
    const double inv_n = 1.0 / double(pred.count());
    double loss = 0.0;
    if (with_grad) pred.ensure_grad();
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double d = double(pred.v[i]) - double(target.v[i]);
        loss += d * d;
        if (with_grad) pred.g[i] = S(2.0 * d * inv_n);
    }
    return loss * inv_n;
}

}  // namespace mea::nn
