#pragma once

#include <array>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mea/io.hpp"
#include "mea/nn.hpp"

namespace mea::nn {

enum class OpKind { Input, Conv2d, Dense, BatchNorm, ReLU, Swish, UpsampleTo, Concat, Reshape };

/// Static per-sample shape of a node (batch is dynamic).
struct NodeShape {
    int c = 0, h = 0, w = 0;
    long long count() const { return (long long)c * h * w; }
};

/// Fixed-layer-set computation graph. Nodes are added in topological order;
/// forward caches every activation so backward can run the exact reverse.
template <typename S>
class Network {
public:
    explicit Network(std::vector<std::array<int, 3>> input_shapes) {
        for (const auto& s : input_shapes) {
            Node node;
            node.kind = OpKind::Input;
            node.shape = {s[0], s[1], s[2]};
            nodes_.push_back(node);
        }
        n_inputs_ = int(nodes_.size());
    }

    int conv2d(int in, int c_out, int stride, int padding, const std::string& name) {
        const NodeShape s = shape_of(in);
        Node node;
        node.kind = OpKind::Conv2d;
        node.in0 = in;
        node.stride = stride;
        node.padding = padding;
        node.weight = name + ".w";
        node.bias = name + ".b";
        params_.add(node.weight, {std::uint32_t(c_out), std::uint32_t(s.c), 3, 3});
        params_.add(node.bias, {std::uint32_t(c_out)});
        node.shape = {c_out, conv_out_size(s.h, stride, padding),
                      conv_out_size(s.w, stride, padding)};
        node.label = name;
        return push(node);
    }

    int dense(int in, int n_out, Act act, const std::string& name) {
        const NodeShape s = shape_of(in);
        Node node;
        node.kind = OpKind::Dense;
        node.in0 = in;
        node.act = act;
        node.weight = name + ".w";
        node.bias = name + ".b";
        params_.add(node.weight, {std::uint32_t(n_out), std::uint32_t(s.count())});
        params_.add(node.bias, {std::uint32_t(n_out)});
        node.shape = {n_out, 1, 1};
        node.label = name;
        return push(node);
    }

    int batchnorm(int in, const std::string& name) {
        const NodeShape s = shape_of(in);
        Node node;
        node.kind = OpKind::BatchNorm;
        node.in0 = in;
        node.weight = name;
        params_.add(name + ".gamma", {std::uint32_t(s.c)});
        params_.add(name + ".beta", {std::uint32_t(s.c)});
        auto& rm = params_.add(name + ".running_mean", {std::uint32_t(s.c)}, false);
        auto& rv = params_.add(name + ".running_var", {std::uint32_t(s.c)}, false);
        auto& st = params_.add(name + ".steps", {1}, false);
        std::fill(params_.at(name + ".gamma").value.begin(),
                  params_.at(name + ".gamma").value.end(), S(1));
        std::fill(rv.value.begin(), rv.value.end(), S(1));
        (void)rm;
        (void)st;
        node.shape = s;
        node.label = name;
        return push(node);
    }

    int relu(int in) {
        Node node;
        node.kind = OpKind::ReLU;
        node.in0 = in;
        node.shape = shape_of(in);
        node.label = "relu";
        return push(node);
    }

    int swish(int in) {
        Node node;
        node.kind = OpKind::Swish;
        node.in0 = in;
        node.shape = shape_of(in);
        node.label = "swish";
        return push(node);
    }

    int upsample_to(int in, int target_h, int target_w) {
        const NodeShape s = shape_of(in);
        detail::require(target_h >= s.h && target_w >= s.w, "upsample_to cannot shrink");
        Node node;
        node.kind = OpKind::UpsampleTo;
        node.in0 = in;
        node.target_h = target_h;
        node.target_w = target_w;
        node.shape = {s.c, target_h, target_w};
        node.label = "upsample";
        return push(node);
    }

    int concat(int a, int b) {
        const NodeShape sa = shape_of(a), sb = shape_of(b);
        detail::require(sa.h == sb.h && sa.w == sb.w, "concat spatial mismatch");
        Node node;
        node.kind = OpKind::Concat;
        node.in0 = a;
        node.in1 = b;
        node.shape = {sa.c + sb.c, sa.h, sa.w};
        node.label = "concat";
        return push(node);
    }

    int reshape(int in, int c, int h, int w) {
        const NodeShape s = shape_of(in);
        detail::require((long long)c * h * w == s.count(), "reshape element count mismatch");
        Node node;
        node.kind = OpKind::Reshape;
        node.in0 = in;
        node.shape = {c, h, w};
        node.label = "reshape";
        return push(node);
    }

    int flatten(int in) {
        const NodeShape s = shape_of(in);
        return reshape(in, int(s.count()), 1, 1);
    }

    void set_output(int node) { output_ = node; }
    int output_node() const { return output_; }
    int num_inputs() const { return n_inputs_; }

    NodeShape shape_of(int node) const { return nodes_.at(node).shape; }

    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }

    /// He-normal weights (fan-in), zero biases; a single seeded stream in
    /// parameter creation order keeps initialization reproducible.
    void init_params(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& e : params_.entries()) {
            if (!e.trainable) continue;
            if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".w") == 0) {
                std::size_t fan_in = 1;
                for (std::size_t d = 1; d < e.dims.size(); ++d) fan_in *= e.dims[d];
                const double std_dev = std::sqrt(2.0 / double(fan_in));
                for (auto& v : e.value) v = S(rng.normal() * std_dev);
            }
            // biases and batchnorm affine keep their construction values
        }
    }

    /// Runs the graph; returns the output activation. In training mode the
    /// caches needed by backward are retained and batchnorm uses batch stats.
    Tensor4<S>& forward(const std::vector<const Tensor4<S>*>& inputs, bool training) {
        detail::require(int(inputs.size()) == n_inputs_, "wrong number of network inputs");
        detail::require(output_ >= 0, "network output not set");
        acts_.resize(nodes_.size());
        pre_.resize(nodes_.size());
        for (int i = 0; i < n_inputs_; ++i) {
            const auto& shape = nodes_[i].shape;
            const Tensor4<S>& src = *inputs[i];
            detail::require(src.c == shape.c && src.h == shape.h && src.w == shape.w,
                            "input shape mismatch at slot " + std::to_string(i));
            acts_[i].resize(src.b, src.c, src.h, src.w);
            acts_[i].v = src.v;
        }
        for (std::size_t ni = std::size_t(n_inputs_); ni < nodes_.size(); ++ni)
            run_forward(int(ni), training);
        trained_forward_ = training;
        return acts_[output_];
    }

    /// Reverse pass; expects the loss gradient in the output activation's
    /// grad buffer and accumulates parameter gradients.
    void backward() {
        if (!trained_forward_)
            throw std::logic_error("backward requires a preceding training-mode forward");
        for (std::size_t ni = 0; ni < nodes_.size(); ++ni) {
            if (int(ni) == output_) continue;
            acts_[ni].g.assign(acts_[ni].count(), S(0));
        }
        for (int ni = int(nodes_.size()) - 1; ni >= n_inputs_; --ni) run_backward(ni);
    }

    Tensor4<S>& activation(int node) { return acts_.at(node); }

    /// Node ids whose label starts with the given prefix (audits/probes).
    std::vector<int> nodes_with_label(const std::string& prefix) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].label.rfind(prefix, 0) == 0) out.push_back(int(i));
        return out;
    }

    /// One line per op with its static output shape, for architecture audits.
    std::vector<std::string> trace() const {
        std::vector<std::string> lines;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const auto& n = nodes_[i];
            std::ostringstream os;
            os << i << ": " << n.label << " -> (" << n.shape.c << "," << n.shape.h << ","
               << n.shape.w << ")";
            lines.push_back(os.str());
        }
        return lines;
    }

private:
    struct Node {
        OpKind kind = OpKind::Input;
        int in0 = -1, in1 = -1;
        int stride = 1, padding = 1;
        int target_h = 0, target_w = 0;
        Act act = Act::Linear;
        std::string weight, bias, label;
        NodeShape shape;
    };

    int push(Node node) {
        nodes_.push_back(std::move(node));
        return int(nodes_.size()) - 1;
    }

    void run_forward(int ni, bool training) {
        Node& n = nodes_[ni];
        Tensor4<S>& out = acts_[ni];
        Tensor4<S>& x = acts_[n.in0];
        switch (n.kind) {
            case OpKind::Conv2d:
                conv2d_forward(x, params_.at(n.weight), params_.at(n.bias), n.stride, n.padding,
                               out);
                break;
            case OpKind::Dense:
                dense_forward(x, params_.at(n.weight), params_.at(n.bias), n.act, out, pre_[ni]);
                break;
            case OpKind::BatchNorm: {
                auto p = bn_params(n);
                batchnorm_forward(x, p, training, out, bn_cache_[ni]);
                break;
            }
            case OpKind::ReLU:
                relu_forward(x, out);
                break;
            case OpKind::Swish:
                swish_forward(x, out);
                break;
            case OpKind::UpsampleTo:
                upsample_forward(x, n.target_h, n.target_w, out);
                break;
            case OpKind::Concat:
                concat_forward(x, acts_[n.in1], out);
                break;
            case OpKind::Reshape:
                out.resize(x.b, n.shape.c, n.shape.h, n.shape.w);
                out.v = x.v;
                break;
            case OpKind::Input:
                break;
        }
    }

    void run_backward(int ni) {
        Node& n = nodes_[ni];
        Tensor4<S>& out = acts_[ni];
        Tensor4<S>& x = acts_[n.in0];
        const bool prop = nodes_[n.in0].kind != OpKind::Input;
        switch (n.kind) {
            case OpKind::Conv2d:
                conv2d_backward(x, params_.at(n.weight), params_.at(n.bias), n.stride, n.padding,
                                out, prop);
                break;
            case OpKind::Dense:
                dense_backward(x, params_.at(n.weight), params_.at(n.bias), n.act, out, pre_[ni],
                               prop);
                break;
            case OpKind::BatchNorm: {
                auto p = bn_params(n);
                batchnorm_backward(x, p, out, bn_cache_[ni]);
                break;
            }
            case OpKind::ReLU:
                if (prop) relu_backward(x, out);
                break;
            case OpKind::Swish:
                if (prop) swish_backward(x, out);
                break;
            case OpKind::UpsampleTo:
                if (prop) upsample_backward(x, out);
                break;
            case OpKind::Concat: {
                Tensor4<S>& x1 = acts_[n.in1];
                concat_backward(x, x1, out);
                break;
            }
            case OpKind::Reshape:
                if (prop) {
                    x.ensure_grad();
                    for (std::size_t i = 0; i < x.g.size(); ++i) x.g[i] += out.g[i];
                }
                break;
            case OpKind::Input:
                break;
        }
    }

    BatchNormParams<S> bn_params(const Node& n) {
        return {&params_.at(n.weight + ".gamma"), &params_.at(n.weight + ".beta"),
                &params_.at(n.weight + ".running_mean"), &params_.at(n.weight + ".running_var"),
                &params_.at(n.weight + ".steps")};
    }

    std::vector<Node> nodes_;
    int n_inputs_ = 0;
    int output_ = -1;
    ParamStore<S> params_;
    std::vector<Tensor4<S>> acts_;
    std::vector<Tensor4<S>> pre_;
    std::map<int, BatchNormCache<S>> bn_cache_;
    bool trained_forward_ = false;
};

/// Copies parameter values into a checkpoint (float32 payload).
template <typename S>
io::Checkpoint save_params(const Network<S>& net, const std::string& model_kind,
                           io::Manifest metadata = {}) {
    io::Checkpoint ckpt;
    ckpt.model_kind = model_kind;
    ckpt.metadata = std::move(metadata);
    for (const auto& e : net.params().entries()) {
        io::TensorBlob blob;
        blob.name = e.name;
        blob.dims = e.dims;
        blob.data.resize(e.size());
        for (std::size_t i = 0; i < e.size(); ++i) blob.data[i] = float(e.value[i]);
        ckpt.tensors.push_back(std::move(blob));
    }
    return ckpt;
}

/// Loads parameter values by name; every network parameter must be present
/// with matching dims.
template <typename S>
void load_params(Network<S>& net, const io::Checkpoint& ckpt) {
    for (auto& e : net.params().entries()) {
        const io::TensorBlob* blob = ckpt.find(e.name);
        if (!blob) throw std::invalid_argument("checkpoint missing tensor: " + e.name);
        if (blob->dims != e.dims || blob->data.size() != e.size())
            throw std::invalid_argument("checkpoint tensor shape mismatch: " + e.name);
        for (std::size_t i = 0; i < e.size(); ++i) e.value[i] = S(blob->data[i]);
    }
}

}  // namespace mea::nn
