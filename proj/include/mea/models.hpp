#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mea/fol.hpp"
#include "mea/grid.hpp"
#include "mea/io.hpp"
#include "mea/net.hpp"

namespace mea::models {

enum class Kind { Interp, FFNN, Mea1, Mea2, UNet };

std::string kind_name(Kind kind);
Kind kind_from_name(const std::string& name);

struct UpscalerSpec {
    Kind kind = Kind::Mea1;
    int interp_order = 3;     // interp only
    int concat_strategy = 4;  // MEA only: use the k coarsest of {13,26,51,101}
    std::uint64_t seed = 1;
};

/// Interpolation baseline: resample the coarse solution to the fine grid.
Field upscale_interp(const Field& T11, int order = 3);

/// Trainable upscaler: a network plus the bookkeeping needed to feed it.
class Upscaler {
public:
    static Upscaler build(const UpscalerSpec& spec);
    static Upscaler from_checkpoint(const io::Checkpoint& ckpt);
    io::Checkpoint to_checkpoint(io::Manifest extra_metadata = {}) const;

    Kind kind() const { return spec_.kind; }
    const UpscalerSpec& spec() const { return spec_; }
    nn::Network<float>& net() { return *net_; }
    const nn::Network<float>& net() const { return *net_; }

    std::size_t param_count() const { return nn::count_params(net_->params()); }

private:
    Upscaler(UpscalerSpec spec, std::shared_ptr<nn::Network<float>> net)
        : spec_(spec), net_(std::move(net)) {}

    UpscalerSpec spec_;
    std::shared_ptr<nn::Network<float>> net_;

    friend Field predict_high(const Upscaler&, const Field&, const MultiResStack&);
};

struct TrainConfig {
    double lr = 1e-4;
    int epochs = 500;
    int batch = 50;  // the FFNN harness default is 100
    double val_fraction = 0.2;
    std::uint64_t seed = 1;
    int limit = 0;  // take this many samples (seeded shuffle) before splitting; 0 = all

    static TrainConfig defaults_for(Kind kind) {
        TrainConfig cfg;
        if (kind == Kind::FFNN) cfg.batch = 100;
        return cfg;
    }
};

/// One supervised pair: everything any of the model kinds may consume.
/// Conductivity channels are min-max normalized from the sample's fine field.
struct TrainingPair {
    Field32 coarse_T;             // n=11, raw coarse-solver output
    Field32 k13, k26, k51, k101;  // normalized to [0,1]
    Field32 target;               // FEM temperature at n=101
};

/// Builds pairs from a labeled dataset using the given coarse-stage solver.
std::vector<TrainingPair> prepare_pairs(const io::Dataset& dataset,
                                        const fol::CoarseSolver& coarse);

struct TrainResult {
    std::vector<double> train_mse;  // per epoch
    std::vector<double> val_mse;    // per epoch
    double best_val = 0.0;
    int best_epoch = -1;
    double final_val = 0.0;
    io::Checkpoint best_ckpt;  // best-validation parameters
};

/// SGD/Adam training on MSE with an 80/20 seeded split and best-validation
/// checkpoint retention. Throws fol::TrainingFailure on divergence.
TrainResult train_upscaler(Upscaler& model, const std::vector<TrainingPair>& pairs,
                           const TrainConfig& config);

/// Single-sample forward pass. FFNN/MEA consume the coarse solution plus the
/// conductivity stack; the U-Net consumes only the fine conductivity field.
Field predict_high(const Upscaler& model, const Field& coarse_T, const MultiResStack& stack);

/// Normalized copy of a conductivity field given the fine-field value range.
Field32 normalize_k(const Field& k, double lo, double hi);

void write_loss_history_csv(const std::string& path, const TrainResult& result);

}  // namespace mea::models
