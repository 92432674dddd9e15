#include "mea/fol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mea/rng.hpp"

namespace mea::fol {

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::shared_ptr<nn::Network<float>> build_net(const FolConfig& cfg) {
    const int n = cfg.grid_n;
    auto net = std::make_shared<nn::Network<float>>(
        std::vector<std::array<int, 3>>{{1, n, n}});
    int node = net->flatten(0);
    int layer = 0;
    for (int width : cfg.hidden)
        node = net->dense(node, width, nn::Act::Swish, "hidden" + std::to_string(layer++));
    node = net->dense(node, n * n - 2 * n, nn::Act::Linear, "out");
    net->set_output(node);
    return net;
}

Field field_from_f32(const Field32& f) { return f.cast<double>(); }

}  // namespace

Field assemble_full_field(const std::vector<double>& free_values,
                          const fem::BoundaryCondition& bc, int n) {
    detail::require(n >= 3, "grid too small for free interior columns");
    detail::require(int(free_values.size()) == n * (n - 2),
                    "expected " + std::to_string(n * (n - 2)) + " free values, got " +
                        std::to_string(free_values.size()));
    for (double v : free_values)
        detail::require(std::isfinite(v), "free values must be finite");
    Field out(n);
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i) {
        out(i, 0) = bc.left_T;
        for (int j = 1; j < n - 1; ++j) out(i, j) = free_values[idx++];
        out(i, n - 1) = bc.right_T;
    }
    return out;
}

std::vector<double> extract_free(const Field& T) {
    const int n = T.n();
    std::vector<double> out;
    out.reserve(std::size_t(n) * (n - 2));
    for (int i = 0; i < n; ++i)
        for (int j = 1; j < n - 1; ++j) out.push_back(T(i, j));
    return out;
}

double fol_loss(const std::vector<Field>& k_batch, const std::vector<Field>& T_batch) {
    detail::require(k_batch.size() == T_batch.size() && !k_batch.empty(),
                    "fol_loss batch size mismatch");
    double total = 0.0;
    for (std::size_t s = 0; s < k_batch.size(); ++s)
        total += fem::discrete_energy(T_batch[s], k_batch[s]);
    return total / double(k_batch.size());
}

FolModel FolModel::build(const FolConfig& config) {
    auto net = build_net(config);
    net->init_params(config.seed);
    return FolModel(config, std::move(net));
}

FolModel FolModel::from_checkpoint(const io::Checkpoint& ckpt) {
    detail::require(ckpt.model_kind == "fol-v1",
                    "not a FOL checkpoint: " + ckpt.model_kind);
    FolConfig cfg;
    cfg.grid_n = std::stoi(ckpt.meta("grid_n", "11"));
    cfg.hidden = parse_ints(ckpt.meta("hidden", "256,256"));
    auto net = build_net(cfg);
    nn::load_params(*net, ckpt);
    return FolModel(cfg, std::move(net));
}

io::Checkpoint FolModel::to_checkpoint(io::Manifest extra_metadata) const {
    io::Checkpoint ckpt = nn::save_params(*net_, "fol-v1");
    ckpt.metadata.emplace_back("grid_n", std::to_string(config_.grid_n));
    ckpt.metadata.emplace_back("hidden", join_ints(config_.hidden));
    for (auto& kv : extra_metadata) ckpt.metadata.push_back(std::move(kv));
    return ckpt;
}

Field FolModel::solve(const Field& k_coarse) const {
    detail::require(k_coarse.n() == config_.grid_n, "FOL grid mismatch");
    detail::require(k_coarse.all_positive(), "conductivity must be positive");
    auto out = solve_batch({k_coarse});
    return std::move(out.front());
}

std::vector<Field> FolModel::solve_batch(const std::vector<Field>& k_batch) const {
    const int n = config_.grid_n;
    nn::Tensor4<float> x(int(k_batch.size()), 1, n, n);
    for (std::size_t s = 0; s < k_batch.size(); ++s) {
        detail::require(k_batch[s].n() == n, "FOL grid mismatch");
        float* dst = x.v.data() + x.offset(int(s));
        const double* src = k_batch[s].data();
        for (std::size_t i = 0; i < k_batch[s].size(); ++i) dst[i] = float(src[i]);
    }
    auto& out = net_->forward({&x}, /*training=*/false);
    std::vector<Field> fields;
    fields.reserve(k_batch.size());
    const int n_free = n * (n - 2);
    std::vector<double> free_values(n_free);
    for (int s = 0; s < int(k_batch.size()); ++s) {
        const float* src = out.v.data() + out.offset(s);
        for (int i = 0; i < n_free; ++i) free_values[i] = double(src[i]);
        fields.push_back(assemble_full_field(free_values, config_.bc, n));
    }
    return fields;
}

FolTrainResult train_fol(FolModel& model, const std::vector<Field>& k_fields,
                         const FolConfig& config) {
    detail::require(!k_fields.empty(), "training set is empty");
    const int n = config.grid_n;
    for (const auto& k : k_fields)
        detail::require(k.n() == n, "all training fields must match the coarse grid");

    auto& net = model.net();
    const int n_free = n * (n - 2);

    // held-out 20% split by seeded shuffle
    std::vector<int> order(k_fields.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(config.seed);
    for (int i = int(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[split_rng.uniform_int(0, i)]);
    const int n_val = std::max(1, int(order.size() / 5));
    const int n_train = int(order.size()) - n_val;
    detail::require(n_train >= 1, "not enough samples to split");
    std::vector<int> train_idx(order.begin(), order.begin() + n_train);
    std::vector<int> val_idx(order.begin() + n_train, order.end());

    FolTrainResult result;
    io::Checkpoint last_good = model.to_checkpoint();

    nn::Tensor4<float> x;
    auto run_batch = [&](const std::vector<int>& idx, std::size_t lo, std::size_t hi,
                         bool training) {
        const int bsize = int(hi - lo);
        x.resize(bsize, 1, n, n);
        for (int s = 0; s < bsize; ++s) {
            const Field& k = k_fields[idx[lo + s]];
            float* dst = x.v.data() + x.offset(s);
            for (std::size_t i = 0; i < k.size(); ++i) dst[i] = float(k.data()[i]);
        }
        auto& out = net.forward({&x}, training);
        if (!out.all_finite()) return std::numeric_limits<double>::quiet_NaN();
        double loss = 0.0;
        if (training) out.ensure_grad();
        std::vector<double> free_values(n_free);
        for (int s = 0; s < bsize; ++s) {
            const Field& k = k_fields[idx[lo + s]];
            const float* src = out.v.data() + out.offset(s);
            for (int i = 0; i < n_free; ++i) free_values[i] = double(src[i]);
            const Field T = assemble_full_field(free_values, config.bc, n);
            loss += fem::discrete_energy(T, k);
            if (training) {
                const Field g = fem::energy_gradient(T, k);
                float* dst = out.g.data() + out.offset(s);
                int fi = 0;
                for (int i = 0; i < n; ++i)
                    for (int j = 1; j < n - 1; ++j) dst[fi++] = float(g(i, j) / double(bsize));
            }
        }
        if (training) net.backward();
        return loss / double(bsize);
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng = Rng::stream(config.seed, std::uint64_t(epoch) + 1);
        std::vector<int> perm = train_idx;
        for (int i = int(perm.size()) - 1; i > 0; --i)
            std::swap(perm[i], perm[shuffle_rng.uniform_int(0, i)]);

        double train_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t lo = 0; lo < perm.size(); lo += config.batch) {
            const std::size_t hi = std::min(perm.size(), lo + config.batch);
            net.params().zero_grad();
            const double batch_loss = run_batch(perm, lo, hi, true);
            if (!std::isfinite(batch_loss))
                throw TrainingFailure("FOL training diverged (non-finite loss) at epoch " +
                                          std::to_string(epoch),
                                      std::move(last_good));
            nn::adam_step(net.params(), float(config.lr));
            train_loss += batch_loss * double(hi - lo);
            seen += hi - lo;
        }
        result.train_loss.push_back(train_loss / double(seen));

        double val_loss = 0.0;
        for (std::size_t lo = 0; lo < val_idx.size(); lo += config.batch) {
            const std::size_t hi = std::min(val_idx.size(), lo + config.batch);
            val_loss += run_batch(val_idx, lo, hi, false) * double(hi - lo);
        }
        result.val_loss.push_back(val_loss / double(val_idx.size()));
        last_good = model.to_checkpoint();
    }
    return result;
}

}  // namespace mea::fol
