// mea: dataset generation, FEM labeling, operator/upscaler training and the
// evaluation harness for the multi-fidelity heat-conduction pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mea/eval.hpp"
#include "mea/fem.hpp"
#include "mea/fol.hpp"
#include "mea/grid.hpp"
#include "mea/io.hpp"
#include "mea/microgen.hpp"
#include "mea/models.hpp"
#include "mea/net.hpp"

namespace {

using namespace mea;

std::string resolve_out(const std::string& path) {
    if (std::filesystem::path(path).is_absolute()) return path;
    return eval::artifact_path(path);
}

std::string resolve_in(const std::string& path) {
    if (std::filesystem::exists(path)) return path;
    const std::string in_dir = (std::filesystem::path(eval::data_dir()) / path).string();
    if (std::filesystem::exists(in_dir)) return in_dir;
    return path;  // let the open fail with the original name
}

std::vector<Field> coarse_fields(const io::Dataset& ds) {
    std::vector<Field> k11s;
    k11s.reserve(ds.size());
    for (const auto& e : ds.entries) k11s.push_back(condense_max(e.k.cast<double>(), 10));
    return k11s;
}

std::unique_ptr<fol::CoarseSolver> make_coarse_solver(const std::string& spec) {
    if (spec == "fem") return std::make_unique<fol::FemCoarseSolver>();
    auto ckpt = io::read_meac(resolve_in(spec));
    return std::make_unique<fol::FolModel>(fol::FolModel::from_checkpoint(ckpt));
}

struct GlobalOpts {
    std::uint64_t seed = 0;  // 0 = keep per-command defaults
    int threads = 1;
    bool deterministic = false;

    int effective_threads() const { return deterministic ? 1 : std::max(1, threads); }
    std::uint64_t seed_or(std::uint64_t fallback) const { return seed ? seed : fallback; }
};

int run(int argc, char** argv) {
    CLI::App app{"multi-fidelity heat conduction pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config with [data], [fol], [train], [eval] sections");

    GlobalOpts global;
    app.add_option("--seed", global.seed, "override every stage seed");
    app.add_option("--threads", global.threads, "worker threads for data generation/labeling");
    app.add_flag("--deterministic", global.deterministic,
                 "force the single-threaded bitwise-reproducible mode");

    // config-file-backed defaults, overridable per subcommand
    std::uint64_t data_seed = 42;
    double k_in = 0.1, k_out = 1.0;
    app.add_option("--data.seed", data_seed)->group("");
    app.add_option("--data.k_in", k_in)->group("");
    app.add_option("--data.k_out", k_out)->group("");

    int fol_epochs = 600, fol_batch = 50;
    double fol_lr = 1e-4;
    std::uint64_t fol_seed = 1;
    app.add_option("--fol.epochs", fol_epochs)->group("");
    app.add_option("--fol.lr", fol_lr)->group("");
    app.add_option("--fol.batch", fol_batch)->group("");
    app.add_option("--fol.seed", fol_seed)->group("");

    int train_epochs = 500, train_batch = 0, train_limit = 0;
    double train_lr = 1e-4;
    std::uint64_t train_seed = 1;
    app.add_option("--train.epochs", train_epochs)->group("");
    app.add_option("--train.lr", train_lr)->group("");
    app.add_option("--train.batch", train_batch)->group("");
    app.add_option("--train.limit", train_limit)->group("");
    app.add_option("--train.seed", train_seed)->group("");

    int eval_interp_order = 3, eval_repeats = 20;
    app.add_option("--eval.interp_order", eval_interp_order)->group("");
    app.add_option("--eval.repeats", eval_repeats)->group("");

    // ----- gen -----
    auto* gen = app.add_subcommand("gen", "generate the microstructure dataset");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output MEAD path")->required();
    auto* gen_seed_opt = gen->add_option("--gen-seed", data_seed, "sweep RNG seed");
    gen->add_option("--k-in", k_in, "inclusion conductivity");
    gen->add_option("--k-out", k_out, "matrix conductivity");

    // ----- condense -----
    auto* condense = app.add_subcommand("condense", "max-pool a field file");
    std::string cond_in, cond_out, cond_prefix;
    int cond_window = 2;
    bool cond_stack = false;
    condense->add_option("--in", cond_in, "input MEAF")->required();
    condense->add_option("--out", cond_out, "output MEAF (single window)");
    condense->add_option("--window", cond_window, "pooling window");
    condense->add_flag("--stack", cond_stack, "write the 51/26/13/11 pyramid");
    condense->add_option("--out-prefix", cond_prefix, "prefix for --stack outputs");

    // ----- fem -----
    auto* femc = app.add_subcommand("fem", "fill FEM temperatures into a dataset");
    std::string fem_in, fem_out;
    bool fem_timing = false;
    femc->add_option("--in", fem_in, "input MEAD")->required();
    femc->add_option("--out", fem_out, "output MEAD")->required();
    femc->add_flag("--timing", fem_timing, "report per-solve wall-clock");

    // ----- train-fol -----
    auto* tfol = app.add_subcommand("train-fol", "train the coarse operator network");
    std::string tfol_data, tfol_out;
    int tfol_limit = 0;
    tfol->add_option("--data", tfol_data, "MEAD dataset")->required();
    tfol->add_option("--out", tfol_out, "checkpoint path")->required();
    tfol->add_option("--epochs", fol_epochs);
    tfol->add_option("--lr", fol_lr);
    tfol->add_option("--batch", fol_batch);
    auto* tfol_seed_opt = tfol->add_option("--fol-seed", fol_seed);
    tfol->add_option("--limit", tfol_limit, "use only the first N fields");

    // ----- train -----
    auto* train = app.add_subcommand("train", "train an upscaler");
    std::string train_model, train_data, train_fol_spec = "fem", train_out, train_history;
    int train_concat = 4;
    train->add_option("--model", train_model, "ffnn|mea1|mea2|unet")->required();
    train->add_option("--data", train_data, "MEAD dataset with temperatures")->required();
    train->add_option("--fol", train_fol_spec, "FOL checkpoint path or 'fem'");
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--history", train_history, "loss history CSV (default: <out>.csv)");
    train->add_option("--epochs", train_epochs);
    auto* train_batch_opt = train->add_option("--batch", train_batch);
    train->add_option("--lr", train_lr);
    train->add_option("--concat", train_concat, "MEA concatenation strategy 1..4");
    auto* train_seed_opt = train->add_option("--train-seed", train_seed);
    train->add_option("--limit", train_limit, "train on N samples (0 = all)");

    // ----- eval -----
    auto* evalc = app.add_subcommand("eval", "evaluate models on the OOD test suite");
    std::vector<std::string> eval_models;
    std::string eval_fol_spec = "fem", eval_out = "report";
    evalc->add_option("--models", eval_models, "checkpoint paths")->delimiter(',');
    evalc->add_option("--fol", eval_fol_spec, "FOL checkpoint path or 'fem'");
    evalc->add_option("--out", eval_out, "report prefix (.csv/.txt)");
    evalc->add_option("--interp-order", eval_interp_order, "interpolation baseline order");
    evalc->add_option("--repeats", eval_repeats, "timing repeats");
    evalc->add_option("--k-in", k_in);
    evalc->add_option("--k-out", k_out);

    // ----- bench -----
    auto* bench = app.add_subcommand("bench", "time a single-sample evaluation");
    std::string bench_model, bench_fol_spec = "fem";
    int bench_repeats = 20;
    bool bench_inclusive = false;
    bench->add_option("--model", bench_model, "checkpoint path, 'interp' or 'fem'")->required();
    bench->add_option("--fol", bench_fol_spec, "coarse solver for pipelines");
    bench->add_option("--repeats", bench_repeats);
    bench->add_flag("--inclusive", bench_inclusive,
                    "include condensation + coarse solve in the timing");

    // ----- study -----
    auto* study = app.add_subcommand("study", "hyperparameter studies");
    std::string study_kind, study_data, study_fol_spec = "fem", study_out;
    study->add_option("--kind", study_kind, "concat|batch|datasize")->required();
    study->add_option("--data", study_data, "MEAD dataset with temperatures")->required();
    study->add_option("--fol", study_fol_spec, "FOL checkpoint path or 'fem'");
    study->add_option("--out", study_out, "output CSV")->required();
    study->add_option("--epochs", train_epochs);
    auto* study_seed_opt = study->add_option("--study-seed", train_seed);
    study->add_option("--limit", train_limit);

    // ----- plot -----
    auto* plot = app.add_subcommand("plot", "render a field to a PPM image");
    std::string plot_in, plot_out, plot_error_against;
    plot->add_option("--in", plot_in, "input MEAF")->required();
    plot->add_option("--out", plot_out, "output PPM")->required();
    plot->add_option("--error-against", plot_error_against, "truth MEAF for |pred-truth|");

    // ----- cross-section -----
    auto* cross = app.add_subcommand("cross-section", "extract a row or column");
    std::string cross_in, cross_axis = "row", cross_out;
    int cross_index = 0;
    cross->add_option("--in", cross_in, "input MEAF")->required();
    cross->add_option("--axis", cross_axis, "row|col");
    cross->add_option("--index", cross_index, "row/column index")->required();
    cross->add_option("--out", cross_out, "output CSV (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    const int threads = global.effective_threads();
    nn::num_threads() = threads;

    if (gen->parsed()) {
        microgen::SweepConfig cfg = microgen::SweepConfig::defaults();
        cfg.rng_seed = gen_seed_opt->count() ? data_seed : global.seed_or(data_seed);
        cfg.k_in = k_in;
        cfg.k_out = k_out;
        int discarded = 0;
        const auto samples = microgen::generate_dataset(cfg, &discarded, threads);
        io::Dataset ds;
        ds.n = 101;
        ds.entries.reserve(samples.size());
        for (const auto& s : samples) {
            io::DatasetEntry e;
            e.k = s.k101.cast<float>();
            ds.entries.push_back(std::move(e));
        }
        const std::string out = resolve_out(gen_out);
        io::write_mead(out, ds);
        io::Manifest manifest{
            {"seed", std::to_string(cfg.rng_seed)},
            {"k_in", std::to_string(cfg.k_in)},
            {"k_out", std::to_string(cfg.k_out)},
            {"samples", std::to_string(ds.entries.size())},
            {"discarded", std::to_string(discarded)},
        };
        auto join = [](const auto& values) {
            std::ostringstream os;
            for (std::size_t i = 0; i < values.size(); ++i)
                os << (i ? "," : "") << values[i];
            return os.str();
        };
        manifest.emplace_back("inclusion_counts", join(cfg.inclusion_counts));
        manifest.emplace_back("a_outer", join(cfg.a_outer_values));
        manifest.emplace_back("b_outer", join(cfg.b_outer_values));
        manifest.emplace_back("inner_fractions", join(cfg.inner_fractions));
        manifest.emplace_back("theta", join(cfg.theta_values));
        io::write_manifest(out + ".manifest", manifest);
        std::cout << "wrote " << ds.entries.size() << " samples (" << discarded
                  << " discarded) to " << out << "\n";
    } else if (condense->parsed()) {
        const Field field = io::read_meaf(resolve_in(cond_in));
        if (cond_stack) {
            if (cond_prefix.empty()) throw CLI::ValidationError("--stack needs --out-prefix");
            const MultiResStack stack = build_stack(field);
            for (int side : {51, 26, 13, 11})
                io::write_meaf(resolve_out(cond_prefix + "-" + std::to_string(side) + ".meaf"),
                               stack.at(side));
            std::cout << "wrote 4 pyramid levels\n";
        } else {
            if (cond_out.empty()) throw CLI::ValidationError("--out or --stack required");
            io::write_meaf(resolve_out(cond_out), condense_max(field, cond_window));
            std::cout << "wrote " << resolve_out(cond_out) << "\n";
        }
    } else if (femc->parsed()) {
        io::Dataset ds = io::read_mead(resolve_in(fem_in));
        std::vector<Field> ks;
        ks.reserve(ds.size());
        for (const auto& e : ds.entries) ks.push_back(e.k.cast<double>());
        const auto t0 = std::chrono::steady_clock::now();
        const auto Ts = fem::solve_batch(ks, {}, threads);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (std::size_t i = 0; i < ds.entries.size(); ++i) {
            ds.entries[i].has_T = true;
            ds.entries[i].T = Ts[i].cast<float>();
        }
        io::write_mead(resolve_out(fem_out), ds);
        if (fem_timing) {
            fem::SolveStats stats;
            fem::solve_steady_heat(ks.front(), {}, &stats);
            std::cout << "labeled " << ds.size() << " samples in " << secs << " s ("
                      << secs / double(ds.size()) << " s per solve batched, "
                      << stats.seconds << " s single solve)\n";
        } else {
            std::cout << "labeled " << ds.size() << " samples\n";
        }
    } else if (tfol->parsed()) {
        io::Dataset ds = io::read_mead(resolve_in(tfol_data));
        auto k11s = coarse_fields(ds);
        if (tfol_limit > 0 && tfol_limit < int(k11s.size())) k11s.resize(tfol_limit);
        fol::FolConfig cfg;
        cfg.epochs = fol_epochs;
        cfg.lr = fol_lr;
        cfg.batch = fol_batch;
        cfg.seed = tfol_seed_opt->count() ? fol_seed : global.seed_or(fol_seed);
        auto model = fol::FolModel::build(cfg);
        const auto result = fol::train_fol(model, k11s, cfg);
        io::Manifest meta{
            {"epoch", std::to_string(cfg.epochs)},
            {"lr", std::to_string(cfg.lr)},
            {"seed", std::to_string(cfg.seed)},
            {"dataset_hash", std::to_string(io::dataset_hash(ds))},
            {"final_train_loss", std::to_string(result.train_loss.back())},
            {"final_val_loss", std::to_string(result.val_loss.back())},
        };
        io::write_meac(resolve_out(tfol_out), model.to_checkpoint(meta));
        std::cout << "fol: train loss " << result.train_loss.front() << " -> "
                  << result.train_loss.back() << ", val " << result.val_loss.back() << "\n";
    } else if (train->parsed()) {
        const models::Kind kind = models::kind_from_name(train_model);
        io::Dataset ds = io::read_mead(resolve_in(train_data));
        const auto coarse = make_coarse_solver(train_fol_spec);
        const auto pairs = models::prepare_pairs(ds, *coarse);

        models::UpscalerSpec spec;
        spec.kind = kind;
        spec.concat_strategy = train_concat;
        spec.seed = train_seed_opt->count() ? train_seed : global.seed_or(train_seed);
        auto model = models::Upscaler::build(spec);

        models::TrainConfig cfg = models::TrainConfig::defaults_for(kind);
        cfg.epochs = train_epochs;
        cfg.lr = train_lr;
        if (train_batch_opt->count() && train_batch > 0) cfg.batch = train_batch;
        cfg.seed = spec.seed;
        cfg.limit = train_limit;

        const auto result = models::train_upscaler(model, pairs, cfg);
        io::Manifest meta{
            {"epoch", std::to_string(cfg.epochs)},
            {"lr", std::to_string(cfg.lr)},
            {"batch", std::to_string(cfg.batch)},
            {"limit", std::to_string(cfg.limit)},
            {"coarse_solver", coarse->name()},
            {"dataset_hash", std::to_string(io::dataset_hash(ds))},
            {"best_val", std::to_string(result.best_val)},
            {"best_epoch", std::to_string(result.best_epoch)},
            {"final_val", std::to_string(result.final_val)},
        };
        io::Checkpoint best = result.best_ckpt;
        for (auto& kv : meta) best.metadata.push_back(kv);
        io::write_meac(resolve_out(train_out), best);
        models::write_loss_history_csv(
            resolve_out(train_history.empty() ? train_out + ".csv" : train_history), result);
        std::cout << train_model << ": val " << result.val_mse.front() << " -> "
                  << result.final_val << " (best " << result.best_val << " @ epoch "
                  << result.best_epoch + 1 << ")\n";
    } else if (evalc->parsed()) {
        const auto coarse = make_coarse_solver(eval_fol_spec);
        const auto cases = eval::build_test_cases(*coarse, k_in, k_out, threads);
        std::vector<models::Upscaler> loaded;
        loaded.reserve(eval_models.size());
        std::vector<std::pair<std::string, const models::Upscaler*>> refs;
        for (const auto& path : eval_models)
            loaded.push_back(models::Upscaler::from_checkpoint(io::read_meac(resolve_in(path))));
        for (const auto& m : loaded) refs.emplace_back(models::kind_name(m.kind()), &m);
        eval::EvalReport report =
            eval::evaluate_suite(refs, cases, eval_interp_order, eval_repeats);
        report.metadata.emplace_back("coarse_solver", coarse->name());
        report.metadata.emplace_back("interp_order", std::to_string(eval_interp_order));
        eval::write_report_csv(resolve_out(eval_out) + ".csv", report);
        eval::write_report_text(resolve_out(eval_out) + ".txt", report);
        for (const auto& m : report.models)
            std::cout << m.name << ": avg MAE " << m.avg_mae << ", params " << m.param_count
                      << ", " << m.eval_seconds << " s\n";
    } else if (bench->parsed()) {
        const auto suite = microgen::generate_test_suite(k_in, k_out);
        const Field& k101 = suite.front().k101;
        double seconds = 0.0;
        if (bench_model == "fem") {
            seconds = eval::benchmark([&] { fem::solve_steady_heat(k101); }, bench_repeats);
        } else if (bench_model == "interp") {
            const auto coarse = make_coarse_solver(bench_fol_spec);
            const MultiResStack stack = build_stack(k101);
            const Field coarse_T = coarse->solve(stack.at(11));
            if (bench_inclusive)
                seconds = eval::benchmark(
                    [&] {
                        const MultiResStack s = build_stack(k101);
                        models::upscale_interp(coarse->solve(s.at(11)), eval_interp_order);
                    },
                    bench_repeats);
            else
                seconds = eval::benchmark(
                    [&] { models::upscale_interp(coarse_T, eval_interp_order); }, bench_repeats);
        } else {
            const auto model =
                models::Upscaler::from_checkpoint(io::read_meac(resolve_in(bench_model)));
            const auto coarse = make_coarse_solver(bench_fol_spec);
            const MultiResStack stack = build_stack(k101);
            const Field coarse_T = coarse->solve(stack.at(11));
            if (bench_inclusive)
                seconds = eval::benchmark(
                    [&] {
                        const MultiResStack s = build_stack(k101);
                        models::predict_high(model, coarse->solve(s.at(11)), s);
                    },
                    bench_repeats);
            else
                seconds = eval::benchmark(
                    [&] { models::predict_high(model, coarse_T, stack); }, bench_repeats);
        }
        std::cout << "median " << seconds << " s over " << bench_repeats << " repeats\n";
    } else if (study->parsed()) {
        io::Dataset ds = io::read_mead(resolve_in(study_data));
        const auto coarse = make_coarse_solver(study_fol_spec);
        const auto pairs = models::prepare_pairs(ds, *coarse);
        models::TrainConfig base;
        base.epochs = train_epochs;
        base.lr = train_lr;
        base.seed = study_seed_opt->count() ? train_seed : global.seed_or(train_seed);
        base.limit = train_limit;
        const auto result = eval::run_study(eval::study_kind_from_name(study_kind), pairs, base);
        eval::write_study_csv(resolve_out(study_out), result);
        for (std::size_t i = 0; i < result.labels.size(); ++i)
            std::cout << result.labels[i] << ": final val " << result.final_val[i] << "\n";
    } else if (plot->parsed()) {
        const Field field = io::read_meaf(resolve_in(plot_in));
        if (plot_error_against.empty()) {
            eval::render_heatmap(field, resolve_out(plot_out));
        } else {
            const Field truth = io::read_meaf(resolve_in(plot_error_against));
            eval::render_error_map(field, truth, resolve_out(plot_out));
        }
        std::cout << "wrote " << resolve_out(plot_out) << "\n";
    } else if (cross->parsed()) {
        const Field field = io::read_meaf(resolve_in(cross_in));
        const eval::Axis axis = cross_axis == "col" ? eval::Axis::Col : eval::Axis::Row;
        if (cross_axis != "row" && cross_axis != "col")
            throw CLI::ValidationError("--axis must be row or col");
        const auto values = eval::cross_section(field, axis, cross_index);
        std::ostringstream os;
        for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
        os << "\n";
        if (cross_out.empty()) {
            std::cout << os.str();
        } else {
            std::ofstream file(resolve_out(cross_out));
            if (!file) throw std::runtime_error("cannot open " + resolve_out(cross_out));
            file << os.str();
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::Error& e) {
        // handled by CLI11_PARSE normally; safety net for manual throws
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
