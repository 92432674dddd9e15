#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mea/fem.hpp"
#include "mea/grid.hpp"
#include "mea/io.hpp"
#include "mea/net.hpp"

namespace mea::fol {

/// Coarse-stage solver contract: conductivity at the coarse grid in,
/// temperature at the coarse grid out. FEM and the trained operator network
/// both satisfy it, so the upscaling stages never care which one ran.
class CoarseSolver {
public:
    virtual ~CoarseSolver() = default;
    virtual Field solve(const Field& k_coarse) const = 0;
    virtual std::string name() const = 0;
};

class FemCoarseSolver final : public CoarseSolver {
public:
    explicit FemCoarseSolver(fem::BoundaryCondition bc = {}) : bc_(bc) {}
    Field solve(const Field& k_coarse) const override {
        return fem::solve_steady_heat(k_coarse, bc_);
    }
    std::string name() const override { return "fem"; }

private:
    fem::BoundaryCondition bc_;
};

/// Free nodes are the interior columns in row-major order; the left and right
/// edge columns carry the Dirichlet values and are never network outputs.
Field assemble_full_field(const std::vector<double>& free_values,
                          const fem::BoundaryCondition& bc = {}, int n = 11);
std::vector<double> extract_free(const Field& T);

/// Mean discrete energy of the predicted fields against their conductivity
/// fields; this is the (unsupervised) training objective.
double fol_loss(const std::vector<Field>& k_batch, const std::vector<Field>& T_batch);

struct FolConfig {
    int grid_n = 11;
    std::vector<int> hidden = {256, 256};
    double lr = 1e-4;
    int batch = 50;
    int epochs = 600;
    std::uint64_t seed = 1;
    fem::BoundaryCondition bc = {};
};

/// Dense operator network k -> T on the coarse grid with hard Dirichlet
/// boundary values built into the output assembly.
class FolModel final : public CoarseSolver {
public:
    static FolModel build(const FolConfig& config);
    static FolModel from_checkpoint(const io::Checkpoint& ckpt);

    io::Checkpoint to_checkpoint(io::Manifest extra_metadata = {}) const;

    Field solve(const Field& k_coarse) const override;
    std::string name() const override { return "fol"; }

    nn::Network<float>& net() { return *net_; }
    const FolConfig& config() const { return config_; }

    /// Batched forward; inputs and outputs at grid_n.
    std::vector<Field> solve_batch(const std::vector<Field>& k_batch) const;

private:
    FolModel(FolConfig config, std::shared_ptr<nn::Network<float>> net)
        : config_(std::move(config)), net_(std::move(net)) {}

    FolConfig config_;
    std::shared_ptr<nn::Network<float>> net_;  // shared so solve() can stay const
};

struct FolTrainResult {
    std::vector<double> train_loss;  // per epoch, mean energy
    std::vector<double> val_loss;
};

/// Raised when training diverges; carries the last finite-parameter state.
struct TrainingFailure : std::runtime_error {
    TrainingFailure(const std::string& msg, io::Checkpoint last_good_)
        : std::runtime_error(msg), last_good(std::move(last_good_)) {}
    io::Checkpoint last_good;
};

/// Unsupervised energy-minimization training on coarse conductivity fields.
FolTrainResult train_fol(FolModel& model, const std::vector<Field>& k_fields,
                         const FolConfig& config);

}  // namespace mea::fol
