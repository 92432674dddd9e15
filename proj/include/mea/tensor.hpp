#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mea::nn {

/// 64-byte-aligned storage keeps Eigen's vectorized kernels on the same code
/// path for every allocation, which makes training bitwise reproducible.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Batched feature map with (batch, channels, height, width) shape and
/// channels-last storage: index (b, h, w, c) with c fastest. The layout keeps
/// every convolution and normalization kernel on contiguous memory. The
/// gradient buffer is allocated on demand.
template <typename S>
struct Tensor4 {
    using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatrixMap = Eigen::Map<Matrix>;
    using ConstMatrixMap = Eigen::Map<const Matrix>;
    using StridedMap = Eigen::Map<Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
    using ConstStridedMap =
        Eigen::Map<const Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

    int b = 0, c = 0, h = 0, w = 0;
    AlignedVector<S> v;
    AlignedVector<S> g;

    Tensor4() = default;
    Tensor4(int b_, int c_, int h_, int w_) {
        resize(b_, c_, h_, w_);
        std::fill(v.begin(), v.end(), S(0));
    }

    /// Reshapes the buffer; contents are unspecified afterwards (every layer
    /// kernel overwrites its full output).
    void resize(int b_, int c_, int h_, int w_) {
        if (b_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
            throw std::invalid_argument("tensor dims must be >= 1");
        b = b_;
        c = c_;
        h = h_;
        w = w_;
        v.resize(count());
        g.clear();
    }

    std::size_t count() const { return std::size_t(b) * c * h * w; }
    std::size_t pixels() const { return std::size_t(h) * w; }

    bool same_shape(const Tensor4& o) const {
        return b == o.b && c == o.c && h == o.h && w == o.w;
    }

    void ensure_grad() {
        if (g.size() != count()) g.assign(count(), S(0));
    }

    std::size_t offset(int bb) const { return std::size_t(bb) * pixels() * c; }

    std::size_t index(int bb, int cc, int hh, int ww) const {
        return ((offset(bb) + (std::size_t(hh) * w + ww) * c)) + cc;
    }

    S& at(int bb, int cc, int hh, int ww) { return v[index(bb, cc, hh, ww)]; }
    S at(int bb, int cc, int hh, int ww) const { return v[index(bb, cc, hh, ww)]; }

    /// (H*W) x C pixel-major view of one sample.
    MatrixMap sample(int bb) { return MatrixMap(v.data() + offset(bb), pixels(), c); }
    ConstMatrixMap sample(int bb) const {
        return ConstMatrixMap(v.data() + offset(bb), pixels(), c);
    }
    MatrixMap grad_sample(int bb) { return MatrixMap(g.data() + offset(bb), pixels(), c); }
    ConstMatrixMap grad_sample(int bb) const {
        return ConstMatrixMap(g.data() + offset(bb), pixels(), c);
    }

    /// H x (W*C) row-major view of one sample (rows = image rows).
    MatrixMap sample_rows(int bb) {
        return MatrixMap(v.data() + offset(bb), h, std::size_t(w) * c);
    }
    ConstMatrixMap sample_rows(int bb) const {
        return ConstMatrixMap(v.data() + offset(bb), h, std::size_t(w) * c);
    }
    MatrixMap grad_sample_rows(int bb) {
        return MatrixMap(g.data() + offset(bb), h, std::size_t(w) * c);
    }
    ConstMatrixMap grad_sample_rows(int bb) const {
        return ConstMatrixMap(g.data() + offset(bb), h, std::size_t(w) * c);
    }

    /// Strided H x W view of one (sample, channel) plane.
    ConstStridedMap plane(int bb, int cc) const {
        return ConstStridedMap(v.data() + offset(bb) + cc, h, w,
                               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(
                                   std::size_t(w) * c, c));
    }
    StridedMap plane(int bb, int cc) {
        return StridedMap(v.data() + offset(bb) + cc, h, w,
                          Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(std::size_t(w) * c, c));
    }

    /// B x (H*W*C) view (rows = samples); the flattening order is (h, w, c).
    MatrixMap flat() { return MatrixMap(v.data(), b, c * h * w); }
    ConstMatrixMap flat() const { return ConstMatrixMap(v.data(), b, c * h * w); }
    MatrixMap grad_flat() { return MatrixMap(g.data(), b, c * h * w); }
    ConstMatrixMap grad_flat() const { return ConstMatrixMap(g.data(), b, c * h * w); }

    bool all_finite() const {
        for (const S x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }
};

}  // namespace mea::nn
