#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mea {

namespace detail {
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace detail

/// Square nodal grid on the unit square. Row index = y from bottom,
/// column index = x from left, node spacing h = 1/(n-1). Values are stored
/// row-major so the memory layout matches the on-disk field format.
template <typename Scalar>
class GridT {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    GridT() = default;

    explicit GridT(int n) : values_(Matrix::Zero(n, n)) {
        detail::require(n >= 2, "grid side must be >= 2");
    }

    GridT(int n, Scalar fill) : values_(Matrix::Constant(n, n, fill)) {
        detail::require(n >= 2, "grid side must be >= 2");
    }

    explicit GridT(Matrix values) : values_(std::move(values)) {
        detail::require(values_.rows() == values_.cols(), "grid must be square");
        detail::require(values_.rows() >= 2, "grid side must be >= 2");
    }

    int n() const { return static_cast<int>(values_.rows()); }
    Scalar spacing() const { return Scalar(1) / Scalar(n() - 1); }

    Scalar& operator()(int row, int col) { return values_(row, col); }
    Scalar operator()(int row, int col) const { return values_(row, col); }

    const Matrix& values() const { return values_; }
    Matrix& values() { return values_; }

    Scalar* data() { return values_.data(); }
    const Scalar* data() const { return values_.data(); }
    std::size_t size() const { return static_cast<std::size_t>(n()) * n(); }

    /// Physical coordinate of column j (x) or row i (y).
    Scalar coord(int idx) const { return Scalar(idx) * spacing(); }

    bool all_finite() const { return values_.allFinite(); }
    bool all_positive() const { return (values_.array() > Scalar(0)).all(); }

    template <typename Other>
    GridT<Other> cast() const {
        return GridT<Other>(values_.template cast<Other>().eval());
    }

    friend bool operator==(const GridT& a, const GridT& b) {
        return a.values_.rows() == b.values_.rows() && a.values_ == b.values_;
    }

private:
    Matrix values_;
};

using Field = GridT<double>;
using Field32 = GridT<float>;

/// Block-maximum condensation with stride = window; a partial trailing block
/// is reduced like any other, so the output side is ceil(n / window).
template <typename Scalar>
GridT<Scalar> condense_max(const GridT<Scalar>& field, int window) {
    const int n = field.n();
    detail::require(window >= 1 && window <= n, "condense window out of range [1, n]");
    const int m = (n + window - 1) / window;
    typename GridT<Scalar>::Matrix out(m, m);
    for (int bi = 0; bi < m; ++bi) {
        const int r0 = bi * window;
        const int r1 = std::min(r0 + window, n);
        for (int bj = 0; bj < m; ++bj) {
            const int c0 = bj * window;
            const int c1 = std::min(c0 + window, n);
            out(bi, bj) = field.values().block(r0, c0, r1 - r0, c1 - c0).maxCoeff();
        }
    }
    return GridT<Scalar>(std::move(out));
}

/// Conductivity pyramid: the 101-node field plus its max-pooled versions at
/// sides 51, 26, 13 and 11 (pool windows 2, 4, 8, 10).
struct MultiResStack {
    std::map<int, Field> levels;
    std::string source_id;

    static constexpr int kSides[5] = {101, 51, 26, 13, 11};

    const Field& at(int side) const {
        auto it = levels.find(side);
        detail::require(it != levels.end(), "stack level missing: " + std::to_string(side));
        return it->second;
    }
};

inline MultiResStack build_stack(const Field& field101, std::string source_id = {}) {
    detail::require(field101.n() == 101, "build_stack expects a 101-node field");
    MultiResStack stack;
    stack.source_id = std::move(source_id);
    stack.levels.emplace(101, field101);
    stack.levels.emplace(51, condense_max(field101, 2));
    stack.levels.emplace(26, condense_max(field101, 4));
    stack.levels.emplace(13, condense_max(field101, 8));
    stack.levels.emplace(11, condense_max(field101, 10));
    return stack;
}

/// One output node's source taps for separable endpoint-aligned resampling.
struct ResampleTap {
    int index[4];
    double weight[4];
    int count;
};

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic_keys(double t) {
    t = std::abs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

/// Per-axis taps for resampling n_in nodes onto n_out nodes. Output node i
/// samples the continuous source coordinate i*(n_in-1)/(n_out-1); border
/// taps are clamped. order 0 = nearest, 1 = linear, 3 = cubic convolution.
inline std::vector<ResampleTap> resample_taps(int n_in, int n_out, int order) {
    detail::require(order == 0 || order == 1 || order == 3, "resample order must be 0, 1 or 3");
    detail::require(n_in >= 2 && n_out >= 2, "resample sides must be >= 2");
    const double scale = double(n_in - 1) / double(n_out - 1);
    std::vector<ResampleTap> taps(n_out);
    auto clamp_idx = [n_in](int i) { return std::min(std::max(i, 0), n_in - 1); };
    for (int i = 0; i < n_out; ++i) {
        const double s = i * scale;
        const int base = static_cast<int>(std::floor(s));
        const double f = s - base;
        ResampleTap& t = taps[i];
        switch (order) {
            case 0:
                t.count = 1;
                t.index[0] = clamp_idx(static_cast<int>(std::floor(s + 0.5)));
                t.weight[0] = 1.0;
                break;
            case 1:
                t.count = 2;
                t.index[0] = clamp_idx(base);
                t.index[1] = clamp_idx(base + 1);
                t.weight[0] = 1.0 - f;
                t.weight[1] = f;
                break;
            default:  // cubic
                t.count = 4;
                for (int k = 0; k < 4; ++k) {
                    t.index[k] = clamp_idx(base - 1 + k);
                    t.weight[k] = cubic_keys(f - double(k - 1));
                }
                break;
        }
    }
    return taps;
}

/// Endpoint-aligned separable resampling of a square field.
template <typename Scalar>
GridT<Scalar> resample(const GridT<Scalar>& field, int target_n, int order) {
    detail::require(target_n >= 2, "resample target side must be >= 2");
    const int n = field.n();
    if (target_n == n && (order == 0 || order == 1 || order == 3)) return field;
    const auto taps = resample_taps(n, target_n, order);

    using Matrix = typename GridT<Scalar>::Matrix;
    Matrix tmp(n, target_n);  // resample columns (x), then rows (y)
    for (int j = 0; j < target_n; ++j) {
        const ResampleTap& t = taps[j];
        tmp.col(j).setZero();
        for (int k = 0; k < t.count; ++k)
            tmp.col(j) += Scalar(t.weight[k]) * field.values().col(t.index[k]);
    }
    Matrix out(target_n, target_n);
    for (int i = 0; i < target_n; ++i) {
        const ResampleTap& t = taps[i];
        out.row(i).setZero();
        for (int k = 0; k < t.count; ++k)
            out.row(i) += Scalar(t.weight[k]) * tmp.row(t.index[k]);
    }
    return GridT<Scalar>(std::move(out));
}

}  // namespace mea
