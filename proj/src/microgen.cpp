#include "mea/microgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mea/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mea::microgen {

namespace {

inline bool inside(const EllipseSpec& e, double x, double y) {
    const double dx = x - e.cx;
    const double dy = y - e.cy;
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    const double ru = u / e.a_outer;
    const double rv = v / e.b_outer;
    if (ru * ru + rv * rv > 1.0) return false;
    if (e.a_inner <= 0.0 || e.b_inner <= 0.0) return true;
    const double iu = u / e.a_inner;
    const double iv = v / e.b_inner;
    return iu * iu + iv * iv >= 1.0;
}

MicrostructureSample make_sweep_sample(const SweepConfig& cfg, std::size_t index, int n_c,
                                       double a_o, double b_o, double frac, double theta) {
    Rng rng = Rng::stream(cfg.rng_seed, index);
    std::vector<EllipseSpec> ellipses;
    ellipses.reserve(n_c);
    for (int c = 0; c < n_c; ++c) {
        EllipseSpec e;
        e.cx = rng.uniform(cfg.center_lo, cfg.center_hi);
        e.cy = rng.uniform(cfg.center_lo, cfg.center_hi);
        if (c == 0) {
            e.a_outer = a_o;
            e.b_outer = b_o;
            e.theta = theta;
        } else {
            e.a_outer = a_o * rng.uniform(0.8, 1.2);
            e.b_outer = b_o * rng.uniform(0.8, 1.2);
            e.theta = rng.uniform(0.0, 3.14159265358979323846);
        }
        e.a_inner = frac * e.a_outer;
        e.b_inner = frac * e.b_outer;
        ellipses.push_back(e);
    }
    MicrostructureSample sample;
    sample.k101 = rasterize(ellipses, 101, cfg.k_in, cfg.k_out);
    sample.ellipses = std::move(ellipses);
    sample.k_in = cfg.k_in;
    sample.k_out = cfg.k_out;
    sample.phase_fraction = phase_fraction(sample.k101, cfg.k_in);
    sample.id = "sweep-" + std::to_string(index);
    return sample;
}

Field rasterize_predicate(int n, double k_in, double k_out, bool (*pred)(double, double)) {
    Field field(n, k_out);
    const double h = field.spacing();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (pred(j * h, i * h)) field(i, j) = k_in;
    return field;
}

// Small slack keeps nodes that sit exactly on a shape edge inside, no matter
// how x = j*h rounded.
constexpr double kEdgeEps = 1e-9;

bool in_triangle(double x, double y) {
    return x >= 0.1 - kEdgeEps && y >= 0.1 - kEdgeEps && x + y <= 1.0 + kEdgeEps;
}

bool in_rectangle(double x, double y) {
    return x >= 0.25 - kEdgeEps && x <= 0.75 + kEdgeEps && y >= 0.35 - kEdgeEps &&
           y <= 0.65 + kEdgeEps;
}

bool in_cross(double x, double y) {
    const bool vertical = x >= 0.4 - kEdgeEps && x <= 0.6 + kEdgeEps && y >= 0.15 - kEdgeEps &&
                          y <= 0.85 + kEdgeEps;
    const bool horizontal = y >= 0.4 - kEdgeEps && y <= 0.6 + kEdgeEps && x >= 0.15 - kEdgeEps &&
                            x <= 0.85 + kEdgeEps;
    return vertical || horizontal;
}

bool in_diagonal_bar(double x, double y) {
    const double c = std::cos(0.78539816339744830962);  // 45 degrees
    const double dx = x - 0.5, dy = y - 0.5;
    const double u = c * (dx + dy);
    const double v = c * (dy - dx);
    return std::abs(u) <= 0.4 + kEdgeEps && std::abs(v) <= 0.08 + kEdgeEps;
}

bool in_square_ring(double x, double y) {
    const bool outer = x >= 0.2 - kEdgeEps && x <= 0.8 + kEdgeEps && y >= 0.2 - kEdgeEps &&
                       y <= 0.8 + kEdgeEps;
    const bool hole = x > 0.35 + kEdgeEps && x < 0.65 - kEdgeEps && y > 0.35 + kEdgeEps &&
                      y < 0.65 - kEdgeEps;
    return outer && !hole;
}

}  // namespace

SweepConfig SweepConfig::defaults() {
    SweepConfig cfg;
    cfg.inclusion_counts = {3, 4, 5, 6, 7, 8, 9};
    cfg.a_outer_values = {0.20, 0.26, 0.32, 0.38, 0.44};
    cfg.b_outer_values = {0.14, 0.20, 0.26, 0.32, 0.38, 0.44};
    cfg.inner_fractions = {0.0, 0.45, 0.7};
    cfg.theta_values.resize(9);
    for (int i = 0; i < 9; ++i)
        cfg.theta_values[i] = i * 3.14159265358979323846 / 9.0;
    return cfg;
}

Field rasterize(const std::vector<EllipseSpec>& ellipses, int n, double k_in, double k_out) {
    detail::require(k_in > 0.0 && k_out > 0.0, "conductivities must be positive");
    detail::require(n >= 2, "grid side must be >= 2");
    for (const auto& e : ellipses) {
        detail::require(e.a_outer > 0.0 && e.b_outer > 0.0, "outer semi-axes must be positive");
        detail::require(e.a_inner >= 0.0 && e.a_inner <= e.a_outer &&
                        e.b_inner >= 0.0 && e.b_inner <= e.b_outer,
                        "inner semi-axes must lie in [0, outer]");
    }
    Field field(n, k_out);
    const double h = field.spacing();
    for (int i = 0; i < n; ++i) {
        const double y = i * h;
        for (int j = 0; j < n; ++j) {
            const double x = j * h;
            for (const auto& e : ellipses) {
                if (inside(e, x, y)) {
                    field(i, j) = k_in;
                    break;
                }
            }
        }
    }
    return field;
}

double phase_fraction(const Field& field, double k_in) {
    const double tol = 1e-9 * std::max(std::abs(k_in), 1.0);
    std::size_t count = 0;
    const double* v = field.data();
    for (std::size_t i = 0; i < field.size(); ++i)
        if (std::abs(v[i] - k_in) <= tol) ++count;
    return double(count) / double(field.size());
}

std::vector<MicrostructureSample> generate_dataset(const SweepConfig& cfg, int* discarded,
                                                   int threads) {
    detail::require(!cfg.inclusion_counts.empty() && !cfg.a_outer_values.empty() &&
                    !cfg.b_outer_values.empty() && !cfg.inner_fractions.empty() &&
                    !cfg.theta_values.empty(),
                    "sweep ranges must be non-empty");
    detail::require(cfg.k_in > 0.0 && cfg.k_out > 0.0, "conductivities must be positive");

    struct Combo {
        int n_c;
        double a_o, b_o, frac, theta;
    };
    std::vector<Combo> combos;
    combos.reserve(cfg.raw_count());
    for (int n_c : cfg.inclusion_counts)
        for (double a_o : cfg.a_outer_values)
            for (double b_o : cfg.b_outer_values)
                for (double frac : cfg.inner_fractions)
                    for (double theta : cfg.theta_values)
                        combos.push_back({n_c, a_o, b_o, frac, theta});

    std::vector<MicrostructureSample> raw(combos.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(std::max(threads, 1))
#endif
    for (long i = 0; i < static_cast<long>(combos.size()); ++i) {
        const Combo& c = combos[i];
        raw[i] = make_sweep_sample(cfg, static_cast<std::size_t>(i), c.n_c, c.a_o, c.b_o, c.frac,
                                   c.theta);
    }

    std::vector<MicrostructureSample> samples;
    samples.reserve(raw.size());
    int dropped = 0;
    for (auto& s : raw) {
        if (s.phase_fraction <= 0.0 || s.phase_fraction >= 1.0) {
            ++dropped;
            continue;
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw std::runtime_error("sweep configuration produced zero samples");
    if (discarded) *discarded = dropped;
    return samples;
}

std::vector<MicrostructureSample> generate_test_suite(double k_in, double k_out) {
    detail::require(k_in > 0.0 && k_out > 0.0, "conductivities must be positive");
    std::vector<MicrostructureSample> suite;
    suite.reserve(6);

    auto push = [&](Field field, const char* id) {
        MicrostructureSample s;
        s.k101 = std::move(field);
        s.k_in = k_in;
        s.k_out = k_out;
        s.phase_fraction = phase_fraction(s.k101, k_in);
        s.id = id;
        suite.push_back(std::move(s));
    };

    EllipseSpec ring;
    ring.cx = ring.cy = 0.5;
    ring.a_outer = ring.b_outer = 0.35;
    ring.a_inner = ring.b_inner = 0.22;
    push(rasterize({ring}, 101, k_in, k_out), "test-1-ring");
    push(rasterize_predicate(101, k_in, k_out, &in_triangle), "test-2-triangle");
    push(rasterize_predicate(101, k_in, k_out, &in_rectangle), "test-3-rectangle");
    push(rasterize_predicate(101, k_in, k_out, &in_cross), "test-4-cross");
    push(rasterize_predicate(101, k_in, k_out, &in_diagonal_bar), "test-5-diagonal-bar");
    push(rasterize_predicate(101, k_in, k_out, &in_square_ring), "test-6-square-ring");
    return suite;
}

}  // namespace mea::microgen
