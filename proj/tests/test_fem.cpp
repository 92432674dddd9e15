#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mea/fem.hpp"
#include "mea/microgen.hpp"
#include "mea/rng.hpp"

using namespace mea;
using fem::BoundaryCondition;

namespace {

Field two_slab(int n, double k_left = 1.0, double k_right = 0.1) {
    Field f(n);
    const int mid = (n - 1) / 2;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) f(i, j) = j <= mid ? k_left : k_right;
    return f;
}

/// Independent 1-D series-resistance oracle for x-layered conductivity.
/// Element conductance uses the mean of its nodal values, which is what the
/// bilinear-quad element with nodally interpolated k integrates to.
std::vector<double> chain_oracle(const Field& k) {
    const int n = k.n();
    const double h = 1.0 / (n - 1);
    std::vector<double> resistance(n - 1);
    double total = 0.0;
    for (int e = 0; e < n - 1; ++e) {
        const double k_eff = 0.5 * (k(0, e) + k(0, e + 1));
        resistance[e] = h / k_eff;
        total += resistance[e];
    }
    const double q = 1.0 / total;
    std::vector<double> T(n);
    T[0] = 1.0;
    for (int j = 1; j < n; ++j) T[j] = T[j - 1] - q * resistance[j - 1];
    return T;
}

Field random_microstructure(int n, Rng& rng) {
    microgen::EllipseSpec e;
    e.cx = rng.uniform(0.25, 0.75);
    e.cy = rng.uniform(0.25, 0.75);
    e.a_outer = rng.uniform(0.1, 0.3);
    e.b_outer = rng.uniform(0.1, 0.3);
    e.theta = rng.uniform(0.0, 3.14159);
    return microgen::rasterize({e}, n, 0.1, 1.0);
}

}  // namespace

TEST_CASE("element stiffness matches the analytic bilinear-quad Laplacian") {
    const Eigen::Vector4d k = Eigen::Vector4d::Ones();
    const Eigen::Matrix4d ke = fem::element_stiffness(k, 1.0);
    // Analytic integration of B^T B over the unit square for bilinear quads:
    // diagonal 2/3, opposite corners -1/3, adjacent corners -1/6.
    Eigen::Matrix4d expected;
    expected << 2 / 3.0, -1 / 6.0, -1 / 3.0, -1 / 6.0,
                -1 / 6.0, 2 / 3.0, -1 / 6.0, -1 / 3.0,
                -1 / 3.0, -1 / 6.0, 2 / 3.0, -1 / 6.0,
                -1 / 6.0, -1 / 3.0, -1 / 6.0, 2 / 3.0;
    CHECK((ke - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("element stiffness rows sum to zero for any h and k") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::Vector4d k;
        for (int i = 0; i < 4; ++i) k[i] = rng.uniform(0.05, 3.0);
        const double h = rng.uniform(0.01, 1.0);
        const Eigen::Matrix4d ke = fem::element_stiffness(k, h);
        CHECK(ke.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-13);
        CHECK((ke - ke.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("element stiffness is linear in the conductivity") {
    const Eigen::Vector4d k(0.3, 1.1, 0.7, 2.0);
    const Eigen::Matrix4d a = fem::element_stiffness(k, 0.2);
    const Eigen::Matrix4d b = fem::element_stiffness((3.5 * k).eval(), 0.2);
    CHECK((b - 3.5 * a).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("element stiffness rejects non-positive inputs") {
    Eigen::Vector4d k = Eigen::Vector4d::Ones();
    CHECK_THROWS_AS(fem::element_stiffness(k, 0.0), std::invalid_argument);
    k[2] = -1.0;
    CHECK_THROWS_AS(fem::element_stiffness(k, 0.1), std::invalid_argument);
}

TEST_CASE("assemble: free-node count, kernel and symmetry") {
    const Field k(3, 1.0);
    const auto sys = fem::assemble(k);
    CHECK(sys.free_nodes.size() == 3);  // n*(n-2) with n=3

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(9);
    CHECK((sys.K * ones).cwiseAbs().maxCoeff() <= 1e-13);

    const Eigen::SparseMatrix<double> diff = Eigen::SparseMatrix<double>(sys.K.transpose()) - sys.K;
    CHECK(Eigen::MatrixXd(diff).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("homogeneous conductivity gives the linear ramp") {
    for (int n : {11, 101}) {
        const Field k(n, 1.0);
        const Field T = fem::solve_steady_heat(k);
        double max_err = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                max_err = std::max(max_err, std::abs(T(i, j) - (1.0 - double(j) / (n - 1))));
        CHECK(max_err <= 1e-10);
    }
}

TEST_CASE("two-slab solution matches the discrete series-resistance oracle") {
    const Field k = two_slab(101);
    const Field T = fem::solve_steady_heat(k);
    const auto oracle = chain_oracle(k);
    double max_err = 0.0;
    for (int i = 0; i < 101; ++i)
        for (int j = 0; j < 101; ++j) max_err = std::max(max_err, std::abs(T(i, j) - oracle[j]));
    CHECK(max_err <= 1e-8);

    // The continuum interface value k1/(k1+k2) = 10/11 is approached only at
    // O(h): the element straddling the jump sees the mean conductivity.
    const double continuum = 1.0 / 1.1;
    CHECK(std::abs(T(50, 50) - continuum) < 2e-3);
    CHECK(std::abs(T(50, 50) - continuum) > 1e-4);
}

TEST_CASE("mirroring the conductivity about the horizontal midline mirrors T") {
    Rng rng(19);
    Field k = random_microstructure(31, rng);
    k(4, 7) = 0.1;  // break accidental symmetry
    Field mirrored(31);
    for (int i = 0; i < 31; ++i)
        for (int j = 0; j < 31; ++j) mirrored(i, j) = k(30 - i, j);
    const Field T = fem::solve_steady_heat(k);
    const Field Tm = fem::solve_steady_heat(mirrored);
    double max_err = 0.0;
    for (int i = 0; i < 31; ++i)
        for (int j = 0; j < 31; ++j) max_err = std::max(max_err, std::abs(Tm(i, j) - T(30 - i, j)));
    CHECK(max_err <= 1e-10);
}

TEST_CASE("solver reports boundary values exactly") {
    const Field k = two_slab(11);
    const BoundaryCondition bc{0.75, -0.25};
    const Field T = fem::solve_steady_heat(k, bc);
    for (int i = 0; i < 11; ++i) {
        CHECK(T(i, 0) == 0.75);
        CHECK(T(i, 10) == -0.25);
    }
}

TEST_CASE("discrete energy of the ramp is exactly one half") {
    for (int n : {11, 51}) {
        Field T(n), k(n, 1.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) T(i, j) = 1.0 - double(j) / (n - 1);
        CHECK(fem::discrete_energy(T, k) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("discrete energy of a constant field is zero") {
    const Field T(21, 0.37);
    const Field k(21, 2.0);
    CHECK(fem::discrete_energy(T, k) <= 1e-15);
}

TEST_CASE("discrete energy rejects mismatched resolutions") {
    CHECK_THROWS_AS(fem::discrete_energy(Field(11, 1.0), Field(13, 1.0)), std::invalid_argument);
}

TEST_CASE("FEM solution minimizes the energy over admissible perturbations") {
    Rng rng(23);
    const Field k = random_microstructure(11, rng);
    const Field T = fem::solve_steady_heat(k);
    const double e_fem = fem::discrete_energy(T, k);
    for (int trial = 0; trial < 100; ++trial) {
        Field perturbed = T;
        for (int i = 0; i < 11; ++i)
            for (int j = 1; j < 10; ++j) perturbed(i, j) += rng.uniform(-0.05, 0.05);
        CHECK(fem::discrete_energy(perturbed, k) >= e_fem);
    }
}

TEST_CASE("energy gradient vanishes on the free nodes of the FEM solution") {
    Rng rng(29);
    const Field k = random_microstructure(11, rng);
    const Field T = fem::solve_steady_heat(k);
    const Field g = fem::energy_gradient(T, k);
    const double scale = fem::stiffness_diagonal_mean(k);
    double max_free = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 1; j < 10; ++j) max_free = std::max(max_free, std::abs(g(i, j)));
    CHECK(max_free <= 1e-6 * scale);
}

TEST_CASE("flux of the homogeneous ramp is unit and x-directed") {
    const int n = 21;
    Field T(n), k(n, 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) T(i, j) = 1.0 - double(j) / (n - 1);
    const auto flux = fem::compute_flux(T, k);
    CHECK((flux.qx.array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK(flux.qy.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((flux.magnitude().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("flux of a constant temperature field is zero") {
    const auto flux = fem::compute_flux(Field(15, 0.8), Field(15, 3.0));
    CHECK(flux.qx.cwiseAbs().maxCoeff() == 0.0);
    CHECK(flux.qy.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-slab interior flux matches the series-conductance oracle") {
    const Field k = two_slab(101);
    const Field T = fem::solve_steady_heat(k);
    const auto oracle = chain_oracle(k);
    const double q_chain = (oracle[0] - oracle[100]) /
                           [&] {
                               double r = 0.0;
                               for (int e = 0; e < 100; ++e)
                                   r += 0.01 / (0.5 * (k(0, e) + k(0, e + 1)));
                               return r;
                           }() /
                           1.0;
    const auto flux = fem::compute_flux(T, k);
    // away from the interface and boundaries the discrete flux equals q
    for (int j : {10, 30, 70, 90})
        CHECK(flux.magnitude()(50, j) == doctest::Approx(q_chain).epsilon(1e-8));
    // continuum reference 2*k1*k2/(k1+k2) for the half/half slab
    CHECK(flux.magnitude()(50, 70) == doctest::Approx(2.0 * 1.0 * 0.1 / 1.1).epsilon(0.02));
}

TEST_CASE("scaling the conductivity leaves the solution unchanged") {
    Rng rng(31);
    const Field k = random_microstructure(21, rng);
    Field k2 = k;
    for (std::size_t i = 0; i < k2.size(); ++i) k2.data()[i] *= 2.0;
    const Field a = fem::solve_steady_heat(k);
    const Field b = fem::solve_steady_heat(k2);
    CHECK((a.values() - b.values()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("solution energy grows monotonically toward the homogeneous limit") {
    Rng rng(37);
    const Field geometry = random_microstructure(41, rng);
    double prev = -1.0;
    for (double k_in : {0.1, 0.5, 1.0}) {
        Field k = geometry;
        for (std::size_t i = 0; i < k.size(); ++i)
            if (k.data()[i] == 0.1) k.data()[i] = k_in;
        const Field T = fem::solve_steady_heat(k);
        const double e = fem::discrete_energy(T, k);
        CHECK(e > prev);
        prev = e;
    }
    CHECK(prev == doctest::Approx(0.5).epsilon(1e-10));  // homogeneous limit
}

TEST_CASE("discrete maximum principle holds at contrast 10") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const Field k = random_microstructure(41, rng);
        const Field T = fem::solve_steady_heat(k);
        CHECK(T.values().maxCoeff() <= 1.0 + 1e-9);
        CHECK(T.values().minCoeff() >= -1e-9);
    }
}

TEST_CASE("coarse solve equals fine solve only for homogeneous conductivity") {
    const Field homog(101, 1.0);
    const Field coarse_T = fem::solve_steady_heat(condense_max(homog, 10));
    const Field fine_T = fem::solve_steady_heat(homog);
    double max_err = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j)
            max_err = std::max(max_err, std::abs(coarse_T(i, j) - fine_T(10 * i, 10 * j)));
    CHECK(max_err <= 1e-10);

    Rng rng(43);
    const Field hetero = random_microstructure(101, rng);
    const Field ct = fem::solve_steady_heat(condense_max(hetero, 10));
    const Field ft = fem::solve_steady_heat(hetero);
    double diff = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) diff = std::max(diff, std::abs(ct(i, j) - ft(10 * i, 10 * j)));
    CHECK(diff > 1e-4);  // regression guard: condensation must matter
}

TEST_CASE("assemble rejects non-positive conductivity") {
    Field k(5, 1.0);
    k(2, 2) = 0.0;
    CHECK_THROWS_AS(fem::assemble(k), std::invalid_argument);
}

TEST_CASE("batch solve preserves ordering") {
    std::vector<Field> ks;
    for (int t = 0; t < 4; ++t) {
        Field k(11, 1.0);
        k(5, 5) = 0.1 + 0.2 * t;
        ks.push_back(k);
    }
    const auto serial = fem::solve_batch(ks, {}, 1);
    const auto parallel = fem::solve_batch(ks, {}, 2);
    for (int t = 0; t < 4; ++t)
        CHECK((serial[t].values() - parallel[t].values()).cwiseAbs().maxCoeff() == 0.0);
}
