#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mea/grid.hpp"

namespace mea::microgen {

/// Elliptical (optionally annular) inclusion. Inner semi-axes of zero give a
/// solid ellipse; otherwise the inclusion is the region between the inner and
/// outer boundaries.
struct EllipseSpec {
    double cx = 0.5, cy = 0.5;
    double a_outer = 0.2, b_outer = 0.2;
    double a_inner = 0.0, b_inner = 0.0;
    double theta = 0.0;  // radians
};

struct MicrostructureSample {
    Field k101;
    std::vector<EllipseSpec> ellipses;
    double k_in = 0.1;
    double k_out = 1.0;
    double phase_fraction = 0.0;
    std::string id;
};

/// Cartesian sweep over inclusion count, semi-axes, annulus ratio and
/// orientation. Inclusion centers (and the per-ellipse jitter of samples with
/// several inclusions) come from an RNG stream derived from
/// (rng_seed, sample index), so generation order and thread count do not
/// affect the result.
struct SweepConfig {
    std::vector<int> inclusion_counts;
    std::vector<double> a_outer_values;
    std::vector<double> b_outer_values;
    std::vector<double> inner_fractions;  // a_inner = f * a_outer, b_inner = f * b_outer
    std::vector<double> theta_values;
    double k_in = 0.1;
    double k_out = 1.0;
    double center_lo = 0.15;
    double center_hi = 0.85;
    std::uint64_t rng_seed = 42;

    /// Default sweep: 7 * 5 * 6 * 3 * 9 = 5670 raw combinations.
    static SweepConfig defaults();

    std::size_t raw_count() const {
        return inclusion_counts.size() * a_outer_values.size() * b_outer_values.size() *
               inner_fractions.size() * theta_values.size();
    }
};

/// Two-valued conductivity field: k_in inside any inclusion, k_out elsewhere.
Field rasterize(const std::vector<EllipseSpec>& ellipses, int n, double k_in, double k_out);

/// Share of nodes equal to k_in (relative tolerance 1e-9).
double phase_fraction(const Field& field, double k_in);

/// Generates the sweep dataset at n=101. Samples whose phase fraction is
/// exactly 0 or 1 are dropped; the number of dropped samples is reported via
/// `discarded` when non-null.
std::vector<MicrostructureSample> generate_dataset(const SweepConfig& config,
                                                   int* discarded = nullptr, int threads = 1);

/// The six fixed out-of-distribution test shapes (ring, triangle, rectangle,
/// cross, diagonal bar, square ring) at n=101.
std::vector<MicrostructureSample> generate_test_suite(double k_in = 0.1, double k_out = 1.0);

}  // namespace mea::microgen
