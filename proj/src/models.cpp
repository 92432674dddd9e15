#include "mea/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "mea/rng.hpp"

namespace mea::models {

namespace {

// Decoder stage plan shared by both MEA types: upsample target size, the
// stack level concatenated there, refining conv width.
struct MeaStage {
    int size;
    int strategy_rank;  // concatenated when concat_strategy >= rank
    int channels;
};
constexpr MeaStage kMeaStages[4] = {{13, 1, 64}, {26, 2, 32}, {51, 3, 16}, {101, 4, 8}};

int conv_bn_relu(nn::Network<float>& net, int node, int c_out, int stride, int padding,
                 const std::string& name) {
    node = net.conv2d(node, c_out, stride, padding, name);
    node = net.batchnorm(node, name + ".bn");
    return net.relu(node);
}

std::shared_ptr<nn::Network<float>> build_ffnn_net() {
    auto net = std::make_shared<nn::Network<float>>(
        std::vector<std::array<int, 3>>{{1, 11, 11}});
    int node = net->flatten(0);
    node = net->dense(node, 1000, nn::Act::Swish, "fc1");
    node = net->dense(node, 5000, nn::Act::Swish, "fc2");
    node = net->dense(node, 10201, nn::Act::Linear, "fc3");
    node = net->reshape(node, 1, 101, 101);
    net->set_output(node);
    return net;
}

// Inputs: 0 = coarse T (1,11,11), 1..4 = conductivity at 13/26/51/101.
std::shared_ptr<nn::Network<float>> build_mea_net(Kind kind, int strategy) {
    detail::require(strategy >= 1 && strategy <= 4, "concat strategy must be in 1..4");
    auto net = std::make_shared<nn::Network<float>>(std::vector<std::array<int, 3>>{
        {1, 11, 11}, {1, 13, 13}, {1, 26, 26}, {1, 51, 51}, {1, 101, 101}});
    int node = 0;
    if (kind == Kind::Mea1) {
        const int schedule[12] = {8, 8, 16, 16, 32, 32, 64, 64, 128, 128, 128, 128};
        for (int i = 0; i < 12; ++i)
            node = conv_bn_relu(*net, node, schedule[i], 1, 1, "enc" + std::to_string(i + 1));
    } else {
        node = conv_bn_relu(*net, node, 128, 1, 1, "enc1");
    }
    for (int stage = 0; stage < 4; ++stage) {
        const MeaStage& st = kMeaStages[stage];
        const std::string tag = "dec" + std::to_string(st.size);
        node = net->upsample_to(node, st.size, st.size);
        if (strategy >= st.strategy_rank) node = net->concat(node, stage + 1);
        node = conv_bn_relu(*net, node, st.channels, 1, 1, tag + "a");
        if (stage < 3) {
            node = conv_bn_relu(*net, node, st.channels, 1, 1, tag + "b");
        } else {
            node = net->conv2d(node, 1, 1, 1, tag + "b");  // linear output head
        }
    }
    net->set_output(node);
    return net;
}

std::shared_ptr<nn::Network<float>> build_unet_net() {
    auto net = std::make_shared<nn::Network<float>>(
        std::vector<std::array<int, 3>>{{1, 101, 101}});
    int node = 0;
    node = conv_bn_relu(*net, node, 16, 1, 1, "enc101a");
    node = conv_bn_relu(*net, node, 16, 1, 1, "enc101b");
    const int skip101 = node;
    node = conv_bn_relu(*net, node, 32, 2, 1, "down51");
    node = conv_bn_relu(*net, node, 32, 1, 1, "enc51a");
    node = conv_bn_relu(*net, node, 32, 1, 1, "enc51b");
    const int skip51 = node;
    node = conv_bn_relu(*net, node, 64, 2, 1, "down26");
    node = conv_bn_relu(*net, node, 64, 1, 1, "enc26a");
    node = conv_bn_relu(*net, node, 64, 1, 1, "enc26b");
    const int skip26 = node;
    node = conv_bn_relu(*net, node, 128, 2, 1, "down13");
    node = conv_bn_relu(*net, node, 128, 1, 1, "enc13a");
    node = conv_bn_relu(*net, node, 128, 1, 1, "enc13b");
    const int skip13 = node;
    node = conv_bn_relu(*net, node, 128, 1, 0, "bottleneck");  // 13 -> 11

    const int skips[4] = {skip13, skip26, skip51, skip101};
    const int sizes[4] = {13, 26, 51, 101};
    const int widths[4] = {128, 64, 32, 16};
    for (int stage = 0; stage < 4; ++stage) {
        const std::string tag = "dec" + std::to_string(sizes[stage]);
        node = net->upsample_to(node, sizes[stage], sizes[stage]);
        node = net->concat(node, skips[stage]);
        node = conv_bn_relu(*net, node, widths[stage], 1, 1, tag + "a");
        node = conv_bn_relu(*net, node, widths[stage], 1, 1, tag + "b");
    }
    node = net->conv2d(node, 1, 1, 1, "head");
    net->set_output(node);
    return net;
}

std::shared_ptr<nn::Network<float>> build_net(const UpscalerSpec& spec) {
    switch (spec.kind) {
        case Kind::FFNN:
            return build_ffnn_net();
        case Kind::Mea1:
        case Kind::Mea2:
            return build_mea_net(spec.kind, spec.concat_strategy);
        case Kind::UNet:
            return build_unet_net();
        default:
            throw std::invalid_argument("interp baseline has no network");
    }
}

void fill_plane(nn::Tensor4<float>& t, int bb, const Field32& f) {
    std::copy_n(f.data(), f.size(), t.v.data() + t.offset(bb));
}

/// Input tensor set for a contiguous batch of pair indices.
struct BatchBuffers {
    nn::Tensor4<float> coarse, k13, k26, k51, k101, target;

    void fill(const std::vector<TrainingPair>& pairs, const std::vector<int>& idx,
              std::size_t lo, std::size_t hi, Kind kind) {
        const int bsize = int(hi - lo);
        target.resize(bsize, 1, 101, 101);
        if (kind == Kind::UNet) {
            k101.resize(bsize, 1, 101, 101);
        } else {
            coarse.resize(bsize, 1, 11, 11);
            k13.resize(bsize, 1, 13, 13);
            k26.resize(bsize, 1, 26, 26);
            k51.resize(bsize, 1, 51, 51);
            k101.resize(bsize, 1, 101, 101);
        }
        for (int s = 0; s < bsize; ++s) {
            const TrainingPair& p = pairs[idx[lo + s]];
            fill_plane(target, s, p.target);
            fill_plane(k101, s, p.k101);
            if (kind != Kind::UNet) {
                fill_plane(coarse, s, p.coarse_T);
                fill_plane(k13, s, p.k13);
                fill_plane(k26, s, p.k26);
                fill_plane(k51, s, p.k51);
            }
        }
    }

    std::vector<const nn::Tensor4<float>*> inputs(Kind kind) const {
        if (kind == Kind::UNet) return {&k101};
        if (kind == Kind::FFNN) return {&coarse};
        return {&coarse, &k13, &k26, &k51, &k101};
    }
};

}  // namespace

std::string kind_name(Kind kind) {
    switch (kind) {
        case Kind::Interp: return "interp";
        case Kind::FFNN: return "ffnn";
        case Kind::Mea1: return "mea1";
        case Kind::Mea2: return "mea2";
        case Kind::UNet: return "unet";
    }
    return "?";
}

Kind kind_from_name(const std::string& name) {
    if (name == "interp") return Kind::Interp;
    if (name == "ffnn") return Kind::FFNN;
    if (name == "mea1") return Kind::Mea1;
    if (name == "mea2") return Kind::Mea2;
    if (name == "unet") return Kind::UNet;
    throw std::invalid_argument("unknown model kind: " + name);
}

Field upscale_interp(const Field& T11, int order) {
    detail::require(T11.n() == 11, "interpolation baseline expects the 11-node grid");
    return resample(T11, 101, order);
}

Upscaler Upscaler::build(const UpscalerSpec& spec) {
    detail::require(spec.kind != Kind::Interp, "interp baseline has no trainable model");
    auto net = build_net(spec);
    net->init_params(spec.seed);
    return Upscaler(spec, std::move(net));
}

Upscaler Upscaler::from_checkpoint(const io::Checkpoint& ckpt) {
    UpscalerSpec spec;
    const std::string kind = ckpt.model_kind;
    if (kind == "ffnn-v1") spec.kind = Kind::FFNN;
    else if (kind == "mea1-v1") spec.kind = Kind::Mea1;
    else if (kind == "mea2-v1") spec.kind = Kind::Mea2;
    else if (kind == "unet-v1") spec.kind = Kind::UNet;
    else throw std::invalid_argument("not an upscaler checkpoint: " + kind);
    spec.concat_strategy = std::stoi(ckpt.meta("concat_strategy", "4"));
    spec.seed = std::stoull(ckpt.meta("seed", "0"));
    auto net = build_net(spec);
    nn::load_params(*net, ckpt);
    return Upscaler(spec, std::move(net));
}

io::Checkpoint Upscaler::to_checkpoint(io::Manifest extra_metadata) const {
    io::Checkpoint ckpt = nn::save_params(*net_, kind_name(spec_.kind) + "-v1");
    ckpt.metadata.emplace_back("concat_strategy", std::to_string(spec_.concat_strategy));
    ckpt.metadata.emplace_back("seed", std::to_string(spec_.seed));
    for (auto& kv : extra_metadata) ckpt.metadata.push_back(std::move(kv));
    return ckpt;
}

Field32 normalize_k(const Field& k, double lo, double hi) {
    Field32 out(k.n());
    const double span = hi - lo;
    for (std::size_t i = 0; i < k.size(); ++i)
        out.data()[i] = span > 1e-12 ? float((k.data()[i] - lo) / span) : 0.0f;
    return out;
}

std::vector<TrainingPair> prepare_pairs(const io::Dataset& dataset,
                                        const fol::CoarseSolver& coarse) {
    detail::require(dataset.n == 101, "training pairs need a 101-node dataset");
    std::vector<TrainingPair> pairs;
    pairs.reserve(dataset.entries.size());
    for (const auto& entry : dataset.entries) {
        if (!entry.has_T) continue;
        const Field k101 = entry.k.cast<double>();
        const MultiResStack stack = build_stack(k101);
        const double lo = k101.values().minCoeff();
        const double hi = k101.values().maxCoeff();
        TrainingPair p;
        p.coarse_T = coarse.solve(stack.at(11)).cast<float>();
        p.k13 = normalize_k(stack.at(13), lo, hi);
        p.k26 = normalize_k(stack.at(26), lo, hi);
        p.k51 = normalize_k(stack.at(51), lo, hi);
        p.k101 = normalize_k(k101, lo, hi);
        p.target = entry.T;
        pairs.push_back(std::move(p));
    }
    detail::require(!pairs.empty(), "dataset has no FEM-labeled samples");
    return pairs;
}

TrainResult train_upscaler(Upscaler& model, const std::vector<TrainingPair>& pairs,
                           const TrainConfig& config) {
    detail::require(!pairs.empty(), "no training pairs");
    detail::require(config.batch >= 1, "batch size must be >= 1");
    auto& net = model.net();
    const Kind kind = model.kind();

    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(config.seed);
    for (int i = int(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[split_rng.uniform_int(0, i)]);
    if (config.limit > 0 && config.limit < int(order.size())) order.resize(config.limit);

    const int n_val = std::max(1, int(order.size() * config.val_fraction));
    const int n_train = int(order.size()) - n_val;
    detail::require(n_train >= 1, "not enough pairs to split");
    detail::require(config.batch <= n_train, "batch size exceeds training-set size");
    std::vector<int> train_idx(order.begin(), order.begin() + n_train);
    const std::vector<int> val_idx(order.begin() + n_train, order.end());

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    io::Checkpoint last_good = model.to_checkpoint();
    BatchBuffers buffers;

    auto epoch_val_mse = [&]() {
        double total = 0.0;
        for (std::size_t lo = 0; lo < val_idx.size(); lo += config.batch) {
            const std::size_t hi = std::min(val_idx.size(), lo + config.batch);
            buffers.fill(pairs, val_idx, lo, hi, kind);
            auto& out = net.forward(buffers.inputs(kind), false);
            total += nn::mse_loss(out, buffers.target, false) * double(hi - lo);
        }
        return total / double(val_idx.size());
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng = Rng::stream(config.seed, std::uint64_t(epoch) + 1);
        std::vector<int> perm = train_idx;
        for (int i = int(perm.size()) - 1; i > 0; --i)
            std::swap(perm[i], perm[shuffle_rng.uniform_int(0, i)]);

        double train_loss = 0.0;
        for (std::size_t lo = 0; lo < perm.size(); lo += config.batch) {
            const std::size_t hi = std::min(perm.size(), lo + config.batch);
            buffers.fill(pairs, perm, lo, hi, kind);
            net.params().zero_grad();
            auto& out = net.forward(buffers.inputs(kind), true);
            const double loss = nn::mse_loss(out, buffers.target, true);
            if (!std::isfinite(loss))
                throw fol::TrainingFailure(
                    "training diverged (non-finite loss) at epoch " + std::to_string(epoch),
                    std::move(last_good));
            net.backward();
            nn::adam_step(net.params(), float(config.lr));
            train_loss += loss * double(hi - lo);
        }
        result.train_mse.push_back(train_loss / double(perm.size()));

        const double val = epoch_val_mse();
        result.val_mse.push_back(val);
        if (val < result.best_val) {
            result.best_val = val;
            result.best_epoch = epoch;
            result.best_ckpt = model.to_checkpoint();
        }
        last_good = model.to_checkpoint();
    }
    result.final_val = result.val_mse.back();
    return result;
}

Field predict_high(const Upscaler& model, const Field& coarse_T, const MultiResStack& stack) {
    const Kind kind = model.spec_.kind;
    const Field& k101 = stack.at(101);
    const double lo = k101.values().minCoeff();
    const double hi = k101.values().maxCoeff();

    nn::Tensor4<float> coarse(1, 1, 11, 11), k13(1, 1, 13, 13), k26(1, 1, 26, 26),
        k51(1, 1, 51, 51), k101t(1, 1, 101, 101);
    fill_plane(k101t, 0, normalize_k(k101, lo, hi));
    std::vector<const nn::Tensor4<float>*> inputs;
    if (kind == Kind::UNet) {
        inputs = {&k101t};
    } else {
        detail::require(coarse_T.n() == 11, "coarse solution must be on the 11-node grid");
        fill_plane(coarse, 0, coarse_T.cast<float>());
        if (kind == Kind::FFNN) {
            inputs = {&coarse};
        } else {
            fill_plane(k13, 0, normalize_k(stack.at(13), lo, hi));
            fill_plane(k26, 0, normalize_k(stack.at(26), lo, hi));
            fill_plane(k51, 0, normalize_k(stack.at(51), lo, hi));
            inputs = {&coarse, &k13, &k26, &k51, &k101t};
        }
    }
    auto& out = model.net_->forward(inputs, false);
    detail::require(out.c == 1 && out.h == 101 && out.w == 101, "unexpected output shape");
    Field field(101);
    const float* src = out.v.data();
    for (std::size_t i = 0; i < field.size(); ++i) field.data()[i] = double(src[i]);
    return field;
}

void write_loss_history_csv(const std::string& path, const TrainResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < result.train_mse.size(); ++e)
        os << (e + 1) << "," << result.train_mse[e] << "," << result.val_mse[e] << "\n";
}

}  // namespace mea::models
