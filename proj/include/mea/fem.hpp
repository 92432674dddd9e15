#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mea/grid.hpp"

namespace mea::fem {

/// Fixed temperatures on the left/right edges; top and bottom edges carry
/// zero normal flux (natural, nothing to assemble).
struct BoundaryCondition {
    double left_T = 1.0;
    double right_T = 0.0;
};

/// Parent-space quadrature data for the bilinear quad: 2x2 Gauss points at
/// xi, eta = +-1/sqrt(3), unit weights. Shape-function gradients are stored
/// in parent coordinates; physical gradients scale with 2/h.
struct ElementQuadrature {
    Eigen::Matrix<double, 4, 4> N;      // gp x node
    Eigen::Matrix<double, 4, 4> dNdxi;  // gp x node
    Eigen::Matrix<double, 4, 4> dNdeta; // gp x node
    static const ElementQuadrature& instance();
};

/// Stiffness of one square element of side h with nodal conductivities
/// (counter-clockwise from lower-left). Conductivity is interpolated to the
/// Gauss points with the same bilinear shape functions as the temperature.
Eigen::Matrix4d element_stiffness(const Eigen::Vector4d& k_nodal, double h);

/// Assembled problem: full stiffness over n^2 nodes plus the reduced
/// (Dirichlet-eliminated) system. Constrained nodes are exactly the left and
/// right edge columns.
struct FemSystem {
    int n = 0;
    Eigen::SparseMatrix<double> K;       // pre-constraint, symmetric, singular
    std::vector<bool> dirichlet_mask;    // per node, row-major (row*n + col)
    Eigen::VectorXd dirichlet_values;    // full length, zero on free nodes
    std::vector<int> free_nodes;         // free index -> node index
    Eigen::SparseMatrix<double> K_ff;
    Eigen::VectorXd rhs;                 // -K_fc * T_c
};

FemSystem assemble(const Field& kfield, const BoundaryCondition& bc = {});

struct SolveStats {
    double residual = 0.0;  // ||K_ff T_f - rhs|| / ||rhs||
    double seconds = 0.0;
};

/// Direct sparse solve of the steady heat problem. Throws std::runtime_error
/// with diagnostics if the factorization fails or the residual exceeds 1e-10.
Field solve_steady_heat(const Field& kfield, const BoundaryCondition& bc = {},
                        SolveStats* stats = nullptr);

/// Batch solve with deterministic output ordering; threads <= 1 runs serial.
std::vector<Field> solve_batch(const std::vector<Field>& kfields,
                               const BoundaryCondition& bc = {}, int threads = 1);

/// Discrete energy 1/2 T^T K T evaluated element-wise:
/// sum_e det(J)/2 sum_gp (N k_e) |B T_e|^2.
double discrete_energy(const Field& Tfield, const Field& kfield);

/// Nodal gradient of the discrete energy with respect to T, i.e. K T.
Field energy_gradient(const Field& Tfield, const Field& kfield);

/// Mean diagonal entry of the pre-constraint stiffness (scale reference).
double stiffness_diagonal_mean(const Field& kfield);

struct VectorField {
    int n = 0;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> qx, qy;

    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> magnitude() const {
        return (qx.array().square() + qy.array().square()).sqrt();
    }
};

/// Heat flux q = -k grad(T); central differences on interior nodes,
/// second-order one-sided stencils on the boundary.
VectorField compute_flux(const Field& Tfield, const Field& kfield);

}  // namespace mea::fem
