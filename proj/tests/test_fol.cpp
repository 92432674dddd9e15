#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mea/fol.hpp"
#include "mea/microgen.hpp"
#include "mea/rng.hpp"

using namespace mea;

namespace {

std::vector<Field> coarse_training_fields() {
    auto cfg = microgen::SweepConfig::defaults();
    cfg.theta_values = {0.0, 1.0};  // 7*5*6*3*2 = 1260 raw combinations
    const auto ds = microgen::generate_dataset(cfg, nullptr, 2);
    std::vector<Field> k11s;
    k11s.reserve(ds.size());
    for (const auto& s : ds) k11s.push_back(condense_max(s.k101, 10));
    return k11s;
}

const fol::FolModel& trained_model() {
    static const fol::FolModel model = [] {
        fol::FolConfig fc;
        fc.epochs = 300;
        fc.seed = 1;
        auto m = fol::FolModel::build(fc);
        fol::train_fol(m, coarse_training_fields(), fc);
        return m;
    }();
    return model;
}

}  // namespace

TEST_CASE("assemble_full_field places boundary and interior values") {
    const std::vector<double> zeros(99, 0.0);
    const Field f = fol::assemble_full_field(zeros);
    for (int i = 0; i < 11; ++i) {
        CHECK(f(i, 0) == 1.0);
        CHECK(f(i, 10) == 0.0);
    }
    for (int i = 0; i < 11; ++i)
        for (int j = 1; j < 10; ++j) CHECK(f(i, j) == 0.0);

    CHECK_THROWS_AS(fol::assemble_full_field(std::vector<double>(98, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("extract/assemble round trip and FEM reassembly identity") {
    Rng rng(3);
    Field k(11);
    for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.4 ? 0.1 : 1.0;
    const Field T = fem::solve_steady_heat(k);
    const Field rebuilt = fol::assemble_full_field(fol::extract_free(T));
    CHECK((rebuilt.values() - T.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fol_loss equals the FEM discrete energy at the FEM solution") {
    Rng rng(5);
    std::vector<Field> ks, Ts;
    for (int s = 0; s < 4; ++s) {
        Field k(11);
        for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
        ks.push_back(k);
        Ts.push_back(fem::solve_steady_heat(k));
    }
    double mean_energy = 0.0;
    for (int s = 0; s < 4; ++s) mean_energy += fem::discrete_energy(Ts[s], ks[s]);
    mean_energy /= 4.0;
    CHECK(fol::fol_loss(ks, Ts) == doctest::Approx(mean_energy).epsilon(1e-12));
}

TEST_CASE("constant interior prediction loses to the FEM minimizer") {
    const Field k(11, 1.0);
    const Field fem_T = fem::solve_steady_heat(k);
    const Field constant = fol::assemble_full_field(std::vector<double>(99, 0.5));
    CHECK(fol::fol_loss({k}, {constant}) > fol::fol_loss({k}, {fem_T}));
}

TEST_CASE("homogeneous ramp prediction has loss one half") {
    const Field k(11, 1.0);
    Field ramp(11);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) ramp(i, j) = 1.0 - j / 10.0;
    CHECK(fol::fol_loss({k}, {ramp}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("fol_loss scales linearly with the conductivity") {
    Rng rng(7);
    Field k(11);
    for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform(0.1, 1.0);
    Field T(11);
    for (std::size_t i = 0; i < T.size(); ++i) T.data()[i] = rng.uniform();
    Field k3 = k;
    for (std::size_t i = 0; i < k3.size(); ++i) k3.data()[i] *= 3.0;
    CHECK(fol::fol_loss({k3}, {T}) == doctest::Approx(3.0 * fol::fol_loss({k}, {T})).epsilon(1e-12));
}

TEST_CASE("fol_loss rejects mismatched batches") {
    CHECK_THROWS_AS(fol::fol_loss({Field(11, 1.0)}, {}), std::invalid_argument);
    CHECK_THROWS_AS(fol::fol_loss({Field(11, 1.0)}, {Field(13, 1.0)}), std::invalid_argument);
}

TEST_CASE("loss gradient at the FEM solution is stationary") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Field k(11);
        for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
        const Field T = fem::solve_steady_heat(k);
        const Field g = fem::energy_gradient(T, k);
        const double scale = fem::stiffness_diagonal_mean(k);
        for (int i = 0; i < 11; ++i)
            for (int j = 1; j < 10; ++j) CHECK(std::abs(g(i, j)) <= 1e-6 * scale);
    }
}

TEST_CASE("trained FOL reproduces the homogeneous ramp") {
    const auto& model = trained_model();
    const Field pred = model.solve(Field(11, 1.0));
    double mae = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) mae += std::abs(pred(i, j) - (1.0 - j / 10.0));
    mae /= 121.0;
    CHECK(mae <= 0.02);
}

TEST_CASE("trained FOL stays close to coarse FEM on held-out fields") {
    const auto& model = trained_model();
    Rng rng(1234);
    double mae = 0.0;
    const int cases = 40;
    for (int t = 0; t < cases; ++t) {
        microgen::EllipseSpec e;
        e.cx = rng.uniform(0.2, 0.8);
        e.cy = rng.uniform(0.2, 0.8);
        e.a_outer = rng.uniform(0.15, 0.4);
        e.b_outer = rng.uniform(0.15, 0.4);
        e.theta = rng.uniform(0.0, 3.14);
        const Field k11 = condense_max(microgen::rasterize({e}, 101, 0.1, 1.0), 10);
        const Field T_fol = model.solve(k11);
        const Field T_fem = fem::solve_steady_heat(k11);
        mae += (T_fol.values() - T_fem.values()).cwiseAbs().mean();
    }
    CHECK(mae / cases <= 0.05);
}

TEST_CASE("FOL predictions carry the hard boundary values exactly") {
    const auto& model = trained_model();
    Rng rng(11);
    Field k(11);
    for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
    const Field pred = model.solve(k);
    for (int i = 0; i < 11; ++i) {
        CHECK(pred(i, 0) == 1.0);
        CHECK(pred(i, 10) == 0.0);
    }
}

TEST_CASE("FOL loss of predictions never undercuts the FEM energy") {
    const auto& model = trained_model();
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        Field k(11);
        for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
        const Field pred = model.solve(k);
        const Field T_fem = fem::solve_steady_heat(k);
        CHECK(fem::discrete_energy(pred, k) >=
              fem::discrete_energy(T_fem, k) - 1e-9);
    }
}

TEST_CASE("checkpoint round trip reproduces predictions bitwise") {
    const auto& model = trained_model();
    const io::Checkpoint ckpt = model.to_checkpoint({{"epoch", "300"}});
    const fol::FolModel loaded = fol::FolModel::from_checkpoint(ckpt);
    Rng rng(15);
    Field k(11);
    for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
    const Field a = model.solve(k);
    const Field b = loaded.solve(k);
    CHECK((a.values() - b.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training is reproducible under a fixed seed") {
    auto run = [] {
        fol::FolConfig fc;
        fc.epochs = 5;
        fc.seed = 77;
        auto cfg = microgen::SweepConfig::defaults();
        cfg.inclusion_counts = {3};
        cfg.a_outer_values = {0.3};
        cfg.b_outer_values = {0.2, 0.4};
        cfg.inner_fractions = {0.0};
        cfg.theta_values = {0.0, 0.7, 1.4};
        std::vector<Field> fields;
        for (const auto& s : microgen::generate_dataset(cfg))
            fields.push_back(condense_max(s.k101, 10));
        for (int i = 0; i < 5; ++i) fields.push_back(fields[i]);  // pad past one batch
        auto model = fol::FolModel::build(fc);
        return fol::train_fol(model, fields, fc).train_loss.back();
    };
    const double a = run();
    const double b = run();
    CHECK(a == b);
}

TEST_CASE("validation loss decreases from the first to the last epoch") {
    fol::FolConfig fc;
    fc.epochs = 60;
    fc.seed = 3;
    auto cfg = microgen::SweepConfig::defaults();
    cfg.theta_values = {0.5};
    cfg.inner_fractions = {0.0};
    std::vector<Field> fields;
    for (const auto& s : microgen::generate_dataset(cfg, nullptr, 2))
        fields.push_back(condense_max(s.k101, 10));
    auto model = fol::FolModel::build(fc);
    const auto result = fol::train_fol(model, fields, fc);
    CHECK(result.val_loss.back() < result.val_loss.front());
}

TEST_CASE("divergent training raises a failure carrying the last good state") {
    fol::FolConfig fc;
    fc.epochs = 20;
    fc.lr = 1e-4;
    fc.seed = 5;
    std::vector<Field> fields(8, Field(11, 1e30));  // energies overflow float grads
    auto model = fol::FolModel::build(fc);
    CHECK_THROWS_AS(fol::train_fol(model, fields, fc), fol::TrainingFailure);
}

TEST_CASE("solve rejects wrong grids") {
    const auto& model = trained_model();
    CHECK_THROWS_AS(model.solve(Field(13, 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(model.solve(Field(11, -1.0)), std::invalid_argument);
}

TEST_CASE("FemCoarseSolver satisfies the same contract") {
    fol::FemCoarseSolver solver;
    const Field T = solver.solve(Field(11, 1.0));
    for (int i = 0; i < 11; ++i) CHECK(T(i, 0) == 1.0);
    CHECK(solver.name() == "fem");
}
