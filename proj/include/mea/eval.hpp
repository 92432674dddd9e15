#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mea/fol.hpp"
#include "mea/grid.hpp"
#include "mea/io.hpp"
#include "mea/microgen.hpp"
#include "mea/models.hpp"

namespace mea::eval {

/// sum |pred - truth| / n^2.
double mean_abs_error(const Field& pred, const Field& truth);

struct ModelEval {
    std::string name;
    std::vector<double> case_mae;
    double avg_mae = 0.0;
    std::size_t param_count = 0;
    double eval_seconds = 0.0;  // median single-case forward time
};

struct EvalReport {
    std::vector<std::string> test_ids;
    std::vector<ModelEval> models;
    io::Manifest metadata;
};

void write_report_csv(const std::string& path, const EvalReport& report);
void write_report_text(const std::string& path, const EvalReport& report);

/// One OOD test case with everything the pipelines need.
struct TestCase {
    microgen::MicrostructureSample sample;
    MultiResStack stack;
    Field truth;     // fine FEM solution
    Field coarse_T;  // coarse-stage solution of the condensed field
};

/// Builds the six-shape suite, its FEM ground truths, and the coarse
/// solutions produced by the given coarse solver.
std::vector<TestCase> build_test_cases(const fol::CoarseSolver& coarse, double k_in = 0.1,
                                       double k_out = 1.0, int threads = 1);

/// Runs every model over every test case (interpolation baseline included)
/// and collects MAE, parameter counts and single-case timings.
EvalReport evaluate_suite(
    const std::vector<std::pair<std::string, const models::Upscaler*>>& trained,
    const std::vector<TestCase>& cases, int interp_order = 3, int timing_repeats = 20);

/// MAE between the flux magnitudes derived from predicted and true
/// temperature fields.
double flux_mae(const Field& pred_T, const Field& truth_T, const Field& k101);

enum class Axis { Row, Col };
std::vector<double> cross_section(const Field& field, Axis axis, int index);

/// Median wall-clock seconds of fn over `repeats` runs after `warmups`
/// discarded passes.
double benchmark(const std::function<void()>& fn, int repeats = 20, int warmups = 3);

enum class StudyKind { Concat, Batch, Datasize };
StudyKind study_kind_from_name(const std::string& name);

struct StudyResult {
    StudyKind kind = StudyKind::Concat;
    std::vector<std::string> labels;            // one per curve
    std::vector<std::vector<double>> val_curves;  // per label, per epoch
    std::vector<double> final_val;              // last-epoch validation loss
};

/// Concat study: MEA-1 with strategies 1..4. Batch study: MEA-1 with batch
/// sizes {25,50,100,200}. Datasize study: MEA-1 and U-Net at training sizes
/// {500,1000,2000,4000}.
StudyResult run_study(StudyKind kind, const std::vector<models::TrainingPair>& pairs,
                      const models::TrainConfig& base);

void write_study_csv(const std::string& path, const StudyResult& result);

/// Binary PPM (P6) with a fixed 256-entry thermal colormap; values are mapped
/// linearly from [min, max].
void render_heatmap(const Field& field, const std::string& path);
void render_error_map(const Field& pred, const Field& truth, const std::string& path);

/// Artifact directory: $MEA_DATA_DIR when set, else the current directory.
std::string data_dir();
std::string artifact_path(const std::string& filename);

}  // namespace mea::eval
