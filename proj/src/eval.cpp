#include "mea/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "mea/fem.hpp"

namespace mea::eval {

double mean_abs_error(const Field& pred, const Field& truth) {
    detail::require(pred.n() == truth.n(), "mean_abs_error resolution mismatch");
    return (pred.values() - truth.values()).cwiseAbs().sum() / double(pred.size());
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "model";
    for (const auto& id : report.test_ids) os << "," << id;
    os << ",average,params,eval_seconds\n";
    os << std::setprecision(10);
    for (const auto& m : report.models) {
        os << m.name;
        for (double v : m.case_mae) os << "," << v;
        os << "," << m.avg_mae << "," << m.param_count << "," << m.eval_seconds << "\n";
    }
}

void write_report_text(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "evaluation report\n";
    for (const auto& [k, v] : report.metadata) os << "  " << k << " = " << v << "\n";
    os << "\n" << std::left << std::setw(10) << "model";
    for (const auto& id : report.test_ids) os << std::setw(22) << id;
    os << std::setw(12) << "average" << std::setw(12) << "params" << "eval_s\n";
    for (const auto& m : report.models) {
        os << std::setw(10) << m.name;
        for (double v : m.case_mae) os << std::setw(22) << v;
        os << std::setw(12) << m.avg_mae << std::setw(12) << m.param_count << m.eval_seconds
           << "\n";
    }
}

std::vector<TestCase> build_test_cases(const fol::CoarseSolver& coarse, double k_in,
                                       double k_out, int threads) {
    const auto suite = microgen::generate_test_suite(k_in, k_out);
    std::vector<Field> kfields;
    kfields.reserve(suite.size());
    for (const auto& s : suite) kfields.push_back(s.k101);
    const auto truths = fem::solve_batch(kfields, {}, threads);

    std::vector<TestCase> cases;
    cases.reserve(suite.size());
    for (std::size_t i = 0; i < suite.size(); ++i) {
        TestCase tc;
        tc.sample = suite[i];
        tc.stack = build_stack(suite[i].k101, suite[i].id);
        tc.truth = truths[i];
        tc.coarse_T = coarse.solve(tc.stack.at(11));
        cases.push_back(std::move(tc));
    }
    return cases;
}

EvalReport evaluate_suite(
    const std::vector<std::pair<std::string, const models::Upscaler*>>& trained,
    const std::vector<TestCase>& cases, int interp_order, int timing_repeats) {
    detail::require(!cases.empty(), "no test cases with ground truth");
    for (const auto& tc : cases)
        detail::require(tc.truth.n() == 101, "ground truth missing or at wrong resolution");

    EvalReport report;
    for (const auto& tc : cases) report.test_ids.push_back(tc.sample.id);

    ModelEval interp;
    interp.name = "interp";
    for (const auto& tc : cases)
        interp.case_mae.push_back(
            mean_abs_error(models::upscale_interp(tc.coarse_T, interp_order), tc.truth));
    interp.eval_seconds = benchmark(
        [&] { models::upscale_interp(cases[0].coarse_T, interp_order); }, timing_repeats);
    report.models.push_back(interp);

    for (const auto& [name, model] : trained) {
        ModelEval me;
        me.name = name;
        me.param_count = model->param_count();
        for (const auto& tc : cases)
            me.case_mae.push_back(
                mean_abs_error(models::predict_high(*model, tc.coarse_T, tc.stack), tc.truth));
        me.eval_seconds = benchmark(
            [&] { models::predict_high(*model, cases[0].coarse_T, cases[0].stack); },
            timing_repeats);
        report.models.push_back(std::move(me));
    }

    for (auto& m : report.models) {
        double total = 0.0;
        for (double v : m.case_mae) total += v;
        m.avg_mae = total / double(m.case_mae.size());
    }
    return report;
}

double flux_mae(const Field& pred_T, const Field& truth_T, const Field& k101) {
    detail::require(pred_T.n() == 101 && truth_T.n() == 101 && k101.n() == 101,
                    "flux report expects 101-node fields");
    const auto qp = fem::compute_flux(pred_T, k101).magnitude();
    const auto qt = fem::compute_flux(truth_T, k101).magnitude();
    return (qp - qt).cwiseAbs().sum() / double(pred_T.size());
}

std::vector<double> cross_section(const Field& field, Axis axis, int index) {
    const int n = field.n();
    detail::require(index >= 0 && index < n, "cross-section index out of range");
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i)
        out[i] = axis == Axis::Row ? field(index, i) : field(i, index);
    return out;
}

double benchmark(const std::function<void()>& fn, int repeats, int warmups) {
    detail::require(repeats >= 1, "benchmark needs at least one repeat");
    for (int i = 0; i < warmups; ++i) fn();
    std::vector<double> times(repeats);
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        times[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    std::sort(times.begin(), times.end());
    const int mid = repeats / 2;
    return repeats % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

StudyKind study_kind_from_name(const std::string& name) {
    if (name == "concat") return StudyKind::Concat;
    if (name == "batch") return StudyKind::Batch;
    if (name == "datasize") return StudyKind::Datasize;
    throw std::invalid_argument("unknown study kind: " + name);
}

StudyResult run_study(StudyKind kind, const std::vector<models::TrainingPair>& pairs,
                      const models::TrainConfig& base) {
    StudyResult result;
    result.kind = kind;

    auto train_one = [&](models::UpscalerSpec spec, models::TrainConfig cfg,
                         const std::string& label) {
        auto model = models::Upscaler::build(spec);
        const auto tr = models::train_upscaler(model, pairs, cfg);
        result.labels.push_back(label);
        result.val_curves.push_back(tr.val_mse);
        result.final_val.push_back(tr.final_val);
    };

    switch (kind) {
        case StudyKind::Concat:
            for (int strategy = 1; strategy <= 4; ++strategy) {
                models::UpscalerSpec spec{models::Kind::Mea1, 3, strategy, base.seed};
                train_one(spec, base, "concat" + std::to_string(strategy));
            }
            break;
        case StudyKind::Batch:
            for (int batch : {25, 50, 100, 200}) {
                models::TrainConfig cfg = base;
                cfg.batch = batch;
                models::UpscalerSpec spec{models::Kind::Mea1, 3, 4, base.seed};
                train_one(spec, cfg, "batch" + std::to_string(batch));
            }
            break;
        case StudyKind::Datasize:
            for (int size : {500, 1000, 2000, 4000}) {
                if (size > int(pairs.size()))
                    throw std::runtime_error("datasize study needs " + std::to_string(size) +
                                             " pairs, have " + std::to_string(pairs.size()));
                models::TrainConfig cfg = base;
                cfg.limit = size;
                train_one({models::Kind::Mea1, 3, 4, base.seed}, cfg,
                          "mea1-" + std::to_string(size));
                train_one({models::Kind::UNet, 3, 4, base.seed}, cfg,
                          "unet-" + std::to_string(size));
            }
            break;
    }
    return result;
}

void write_study_csv(const std::string& path, const StudyResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "epoch";
    for (const auto& label : result.labels) os << "," << label;
    os << "\n" << std::setprecision(10);
    const std::size_t epochs = result.val_curves.empty() ? 0 : result.val_curves[0].size();
    for (std::size_t e = 0; e < epochs; ++e) {
        os << (e + 1);
        for (const auto& curve : result.val_curves) os << "," << curve[e];
        os << "\n";
    }
}

namespace {

struct Rgb {
    unsigned char r, g, b;
};

// 256-entry thermal map: dark blue -> cyan -> green -> yellow -> red.
Rgb colormap_entry(int i) {
    static const double anchors[5][3] = {
        {0.0, 0.0, 0.5}, {0.0, 0.75, 1.0}, {0.2, 1.0, 0.2}, {1.0, 1.0, 0.0}, {0.9, 0.0, 0.0}};
    const double t = double(i) / 255.0 * 4.0;
    const int seg = std::min(3, int(t));
    const double f = t - seg;
    auto mix = [&](int ch) {
        return anchors[seg][ch] * (1.0 - f) + anchors[seg + 1][ch] * f;
    };
    return {static_cast<unsigned char>(std::lround(mix(0) * 255.0)),
            static_cast<unsigned char>(std::lround(mix(1) * 255.0)),
            static_cast<unsigned char>(std::lround(mix(2) * 255.0))};
}

void write_ppm(const Field& field, const std::string& path) {
    const int n = field.n();
    const double lo = field.values().minCoeff();
    const double hi = field.values().maxCoeff();
    const double span = hi - lo;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P6\n" << n << " " << n << "\n255\n";
    std::vector<unsigned char> row(std::size_t(n) * 3);
    for (int i = n - 1; i >= 0; --i) {  // image top row = top of the domain
        for (int j = 0; j < n; ++j) {
            const double t = span > 0.0 ? (field(i, j) - lo) / span : 0.0;
            const Rgb c = colormap_entry(int(std::lround(t * 255.0)));
            row[std::size_t(j) * 3] = c.r;
            row[std::size_t(j) * 3 + 1] = c.g;
            row[std::size_t(j) * 3 + 2] = c.b;
        }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void render_heatmap(const Field& field, const std::string& path) {
    detail::require(field.all_finite(), "cannot render a non-finite field");
    write_ppm(field, path);
}

void render_error_map(const Field& pred, const Field& truth, const std::string& path) {
    detail::require(pred.n() == truth.n(), "error map resolution mismatch");
    Field err((pred.values() - truth.values()).cwiseAbs().eval());
    write_ppm(err, path);
}

std::string data_dir() {
    if (const char* env = std::getenv("MEA_DATA_DIR"); env && *env) return env;
    return ".";
}

std::string artifact_path(const std::string& filename) {
    const std::filesystem::path dir(data_dir());
    std::filesystem::create_directories(dir);
    return (dir / filename).string();
}

}  // namespace mea::eval
