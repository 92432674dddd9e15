#include "mea/fem.hpp"

#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mea::fem {

namespace {

// Local node order: counter-clockwise from lower-left, parent coords
// (-1,-1), (1,-1), (1,1), (-1,1).
constexpr double kXi[4] = {-1.0, 1.0, 1.0, -1.0};
constexpr double kEta[4] = {-1.0, -1.0, 1.0, 1.0};

ElementQuadrature make_quadrature() {
    ElementQuadrature q;
    const double g = 1.0 / std::sqrt(3.0);
    const double gp[4][2] = {{-g, -g}, {g, -g}, {g, g}, {-g, g}};
    for (int p = 0; p < 4; ++p) {
        const double xi = gp[p][0], eta = gp[p][1];
        for (int a = 0; a < 4; ++a) {
            q.N(p, a) = 0.25 * (1.0 + kXi[a] * xi) * (1.0 + kEta[a] * eta);
            q.dNdxi(p, a) = 0.25 * kXi[a] * (1.0 + kEta[a] * eta);
            q.dNdeta(p, a) = 0.25 * kEta[a] * (1.0 + kXi[a] * xi);
        }
    }
    return q;
}

// Node indices of element (ei, ej), counter-clockwise from lower-left.
inline void element_nodes(int ei, int ej, int n, int out[4]) {
    out[0] = ei * n + ej;
    out[1] = ei * n + ej + 1;
    out[2] = (ei + 1) * n + ej + 1;
    out[3] = (ei + 1) * n + ej;
}

}  // namespace

const ElementQuadrature& ElementQuadrature::instance() {
    static const ElementQuadrature q = make_quadrature();
    return q;
}

Eigen::Matrix4d element_stiffness(const Eigen::Vector4d& k_nodal, double h) {
    detail::require((k_nodal.array() > 0.0).all(), "element conductivities must be positive");
    detail::require(h > 0.0, "element side must be positive");
    const auto& q = ElementQuadrature::instance();
    const double det_j = h * h / 4.0;
    const double scale = 2.0 / h;  // parent -> physical gradient
    Eigen::Matrix4d ke = Eigen::Matrix4d::Zero();
    for (int p = 0; p < 4; ++p) {
        Eigen::Matrix<double, 2, 4> b;
        b.row(0) = scale * q.dNdxi.row(p);
        b.row(1) = scale * q.dNdeta.row(p);
        const double k_gp = q.N.row(p).dot(k_nodal);
        ke.noalias() += (k_gp * det_j) * (b.transpose() * b);
    }
    return ke;
}

FemSystem assemble(const Field& kfield, const BoundaryCondition& bc) {
    detail::require(kfield.n() >= 2, "conductivity grid too small");
    detail::require(kfield.all_positive(), "conductivity must be strictly positive");
    detail::require(std::isfinite(bc.left_T) && std::isfinite(bc.right_T),
                    "boundary temperatures must be finite");
    const int n = kfield.n();
    const int num_nodes = n * n;
    const double h = kfield.spacing();

    FemSystem sys;
    sys.n = n;
    sys.dirichlet_mask.assign(num_nodes, false);
    sys.dirichlet_values = Eigen::VectorXd::Zero(num_nodes);
    for (int i = 0; i < n; ++i) {
        sys.dirichlet_mask[i * n] = true;
        sys.dirichlet_values[i * n] = bc.left_T;
        sys.dirichlet_mask[i * n + n - 1] = true;
        sys.dirichlet_values[i * n + n - 1] = bc.right_T;
    }

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n - 1) * (n - 1) * 16);
    int nodes[4];
    Eigen::Vector4d ke_nodal;
    for (int ei = 0; ei < n - 1; ++ei) {
        for (int ej = 0; ej < n - 1; ++ej) {
            element_nodes(ei, ej, n, nodes);
            for (int a = 0; a < 4; ++a)
                ke_nodal[a] = kfield.data()[nodes[a]];
            const Eigen::Matrix4d ke = element_stiffness(ke_nodal, h);
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    trips.emplace_back(nodes[a], nodes[b], ke(a, b));
        }
    }
    sys.K.resize(num_nodes, num_nodes);
    sys.K.setFromTriplets(trips.begin(), trips.end());

    std::vector<int> free_of_node(num_nodes, -1);
    sys.free_nodes.reserve(static_cast<std::size_t>(n) * (n - 2));
    for (int node = 0; node < num_nodes; ++node) {
        if (!sys.dirichlet_mask[node]) {
            free_of_node[node] = static_cast<int>(sys.free_nodes.size());
            sys.free_nodes.push_back(node);
        }
    }
    const int num_free = static_cast<int>(sys.free_nodes.size());

    std::vector<Eigen::Triplet<double>> ff;
    ff.reserve(trips.size());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(num_free);
    for (int col = 0; col < sys.K.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(sys.K, col); it; ++it) {
            const int fr = free_of_node[it.row()];
            if (fr < 0) continue;
            const int fc = free_of_node[it.col()];
            if (fc >= 0)
                ff.emplace_back(fr, fc, it.value());
            else
                rhs[fr] -= it.value() * sys.dirichlet_values[it.col()];
        }
    }
    sys.K_ff.resize(num_free, num_free);
    sys.K_ff.setFromTriplets(ff.begin(), ff.end());
    sys.rhs = std::move(rhs);
    return sys;
}

Field solve_steady_heat(const Field& kfield, const BoundaryCondition& bc, SolveStats* stats) {
    const auto t0 = std::chrono::steady_clock::now();
    const FemSystem sys = assemble(kfield, bc);

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(sys.K_ff);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("steady heat solve: factorization failed");
    const Eigen::VectorXd tf = solver.solve(sys.rhs);

    const double rhs_norm = sys.rhs.norm();
    const double residual =
        (sys.K_ff * tf - sys.rhs).norm() / (rhs_norm > 0.0 ? rhs_norm : 1.0);
    if (!tf.allFinite() || residual > 1e-10) {
        std::ostringstream msg;
        msg << "steady heat solve: residual " << residual << " exceeds 1e-10 (n=" << sys.n << ")";
        throw std::runtime_error(msg.str());
    }

    Field out(sys.n);
    Eigen::VectorXd full = sys.dirichlet_values;
    for (std::size_t f = 0; f < sys.free_nodes.size(); ++f)
        full[sys.free_nodes[f]] = tf[static_cast<int>(f)];
    std::copy(full.data(), full.data() + full.size(), out.data());

    if (stats) {
        stats->residual = residual;
        stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return out;
}

std::vector<Field> solve_batch(const std::vector<Field>& kfields, const BoundaryCondition& bc,
                               int threads) {
    std::vector<Field> out(kfields.size());
#ifdef _OPENMP
    if (threads > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
        for (long i = 0; i < static_cast<long>(kfields.size()); ++i)
            out[i] = solve_steady_heat(kfields[i], bc);
        return out;
    }
#endif
    for (std::size_t i = 0; i < kfields.size(); ++i)
        out[i] = solve_steady_heat(kfields[i], bc);
    return out;
}

double discrete_energy(const Field& Tfield, const Field& kfield) {
    detail::require(Tfield.n() == kfield.n(), "temperature/conductivity resolution mismatch");
    const int n = Tfield.n();
    const double h = Tfield.spacing();
    const double det_j = h * h / 4.0;
    const double scale = 2.0 / h;
    const auto& q = ElementQuadrature::instance();

    double energy = 0.0;
    int nodes[4];
    Eigen::Vector4d te, ke;
    for (int ei = 0; ei < n - 1; ++ei) {
        for (int ej = 0; ej < n - 1; ++ej) {
            element_nodes(ei, ej, n, nodes);
            for (int a = 0; a < 4; ++a) {
                te[a] = Tfield.data()[nodes[a]];
                ke[a] = kfield.data()[nodes[a]];
            }
            for (int p = 0; p < 4; ++p) {
                const double gx = scale * q.dNdxi.row(p).dot(te);
                const double gy = scale * q.dNdeta.row(p).dot(te);
                const double k_gp = q.N.row(p).dot(ke);
                energy += 0.5 * det_j * k_gp * (gx * gx + gy * gy);
            }
        }
    }
    return energy;
}

Field energy_gradient(const Field& Tfield, const Field& kfield) {
    detail::require(Tfield.n() == kfield.n(), "temperature/conductivity resolution mismatch");
    const int n = Tfield.n();
    const double h = Tfield.spacing();
    const auto& q = ElementQuadrature::instance();
    const double det_j = h * h / 4.0;
    const double scale = 2.0 / h;

    Field grad(n, 0.0);
    int nodes[4];
    Eigen::Vector4d te, ke;
    for (int ei = 0; ei < n - 1; ++ei) {
        for (int ej = 0; ej < n - 1; ++ej) {
            element_nodes(ei, ej, n, nodes);
            for (int a = 0; a < 4; ++a) {
                te[a] = Tfield.data()[nodes[a]];
                ke[a] = kfield.data()[nodes[a]];
            }
            for (int p = 0; p < 4; ++p) {
                const double gx = scale * q.dNdxi.row(p).dot(te);
                const double gy = scale * q.dNdeta.row(p).dot(te);
                const double w = det_j * q.N.row(p).dot(ke);
                for (int a = 0; a < 4; ++a) {
                    grad.data()[nodes[a]] +=
                        w * (gx * scale * q.dNdxi(p, a) + gy * scale * q.dNdeta(p, a));
                }
            }
        }
    }
    return grad;
}

double stiffness_diagonal_mean(const Field& kfield) {
    const FemSystem sys = assemble(kfield);
    return sys.K.diagonal().mean();
}

VectorField compute_flux(const Field& Tfield, const Field& kfield) {
    detail::require(Tfield.n() == kfield.n(), "temperature/conductivity resolution mismatch");
    const int n = Tfield.n();
    const double h = Tfield.spacing();
    VectorField flux;
    flux.n = n;
    flux.qx.resize(n, n);
    flux.qy.resize(n, n);

    const auto& t = Tfield.values();
    auto deriv = [&](int i, int j, bool along_x) {
        auto at = [&](int d) { return along_x ? t(i, j + d) : t(i + d, j); };
        const int pos = along_x ? j : i;
        if (pos == 0) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
        if (pos == n - 1) return (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h);
        return (at(1) - at(-1)) / (2.0 * h);
    };

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double k = kfield(i, j);
            flux.qx(i, j) = -k * deriv(i, j, true);
            flux.qy(i, j) = -k * deriv(i, j, false);
        }
    }
    return flux;
}

}  // namespace mea::fem
