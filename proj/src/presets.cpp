// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/presets.hpp"

#include <cmath>

#include "tinyforge/rng.hpp"

namespace tinyforge {

GraphBuilder::GraphBuilder(std::string model_name, const Shape& input_shape, std::string input_name) {
    graph_.name = std::move(model_name);
    graph_.inputs = {input_name};
    TensorDesc d;
    d.shape = input_shape;
    graph_.edges[input_name] = d;
}

std::string GraphBuilder::next_name(const std::string& prefix) {
    return prefix + std::to_string(++counters_[prefix]);
}

std::string GraphBuilder::push(Node n) {
    n.outputs = {n.name};
    auto out = n.name;
    graph_.nodes.push_back(std::move(n));
    infer_shapes_inplace(graph_);
    return out;
}

std::string GraphBuilder::conv(const std::string& in, std::int64_t filters, int kernel, int stride, int pad) {
    const auto& s = shape(in);
    if (s.size() != 3) throw ModelError("conv expects a [C,H,W] input, got " + shape_str(s));
    Node n;
    n.name = next_name("conv");
    n.kind = OpKind::Conv2D;
    n.inputs = {in};
    n.params = {n.name + ".w", n.name + ".b"};
    n.attrs.kernel = kernel;
    n.attrs.stride = stride;
    n.attrs.pad = pad;
    graph_.params[n.params[0]] = ParamTensor::f32({filters, s[0], kernel, kernel},
                                                  std::vector<float>(static_cast<std::size_t>(filters * s[0] * kernel * kernel)));
    graph_.params[n.params[1]] = ParamTensor::f32({filters}, std::vector<float>(static_cast<std::size_t>(filters)));
    return push(std::move(n));
}

std::string GraphBuilder::linear(const std::string& in, std::int64_t outputs) {
    const auto& s = shape(in);
    if (s.size() != 1) throw ModelError("linear expects a rank-1 input, got " + shape_str(s));
    Node n;
    n.name = next_name("fc");
    n.kind = OpKind::Linear;
    n.inputs = {in};
    n.params = {n.name + ".w", n.name + ".b"};
    graph_.params[n.params[0]] = ParamTensor::f32({outputs, s[0]}, std::vector<float>(static_cast<std::size_t>(outputs * s[0])));
    graph_.params[n.params[1]] = ParamTensor::f32({outputs}, std::vector<float>(static_cast<std::size_t>(outputs)));
    return push(std::move(n));
}

std::string GraphBuilder::batchnorm(const std::string& in, double epsilon) {
    auto c = shape(in)[0];
    Node n;
    n.name = next_name("bn");
    n.kind = OpKind::BatchNorm;
    n.inputs = {in};
    n.params = {n.name + ".gamma", n.name + ".beta", n.name + ".mean", n.name + ".var"};
    n.attrs.epsilon = epsilon;
    auto len = static_cast<std::size_t>(c);
    graph_.params[n.params[0]] = ParamTensor::f32({c}, std::vector<float>(len, 1.0f));
    graph_.params[n.params[1]] = ParamTensor::f32({c}, std::vector<float>(len, 0.0f));
    graph_.params[n.params[2]] = ParamTensor::f32({c}, std::vector<float>(len, 0.0f));
    graph_.params[n.params[3]] = ParamTensor::f32({c}, std::vector<float>(len, 1.0f));
    return push(std::move(n));
}

std::string GraphBuilder::relu(const std::string& in) {
    Node n;
    n.name = next_name("relu");
    n.kind = OpKind::ReLU;
    n.inputs = {in};
    return push(std::move(n));
}

std::string GraphBuilder::maxpool(const std::string& in, int pool) {
    Node n;
    n.name = next_name("pool");
    n.kind = OpKind::MaxPool;
    n.inputs = {in};
    n.attrs.pool = pool;
    return push(std::move(n));
}

std::string GraphBuilder::flatten(const std::string& in) {
    Node n;
    n.name = next_name("flatten");
    n.kind = OpKind::Flatten;
    n.inputs = {in};
    return push(std::move(n));
}

std::string GraphBuilder::add(const std::string& a, const std::string& b) {
    Node n;
    n.name = next_name("add");
    n.kind = OpKind::Add;
    n.inputs = {a, b};
    return push(std::move(n));
}

std::string GraphBuilder::softmax(const std::string& in) {
    Node n;
    n.name = next_name("softmax");
    n.kind = OpKind::Softmax;
    n.inputs = {in};
    return push(std::move(n));
}

Graph GraphBuilder::finish(const std::vector<std::string>& outputs) {
    graph_.outputs = outputs;
    infer_shapes_inplace(graph_);
    return graph_;
}

Graph mlp_preset(const std::vector<std::int64_t>& sizes, const std::string& name) {
    if (sizes.size() < 2) throw UsageError("mlp needs at least an input and an output width");
    GraphBuilder b(name, {sizes[0]});
    auto x = b.input();
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        x = b.linear(x, sizes[i]);
        if (i + 1 < sizes.size()) x = b.relu(x);
    }
    auto g = b.finish({b.softmax(x)});
    init_params(g, 0);
    return g;
}

Graph lenet_preset() {
    GraphBuilder b("lenet", {1, 28, 28});
    auto x = b.relu(b.conv(b.input(), 32, 3, 1));
    x = b.relu(b.conv(x, 64, 3, 1));
    x = b.flatten(b.maxpool(x, 2));
    x = b.relu(b.linear(x, 128));
    auto g = b.finish({b.softmax(b.linear(x, 10))});
    init_params(g, 0);
    return g;
}

Graph alexnet_preset() {
    GraphBuilder b("alexnet", {3, 32, 32});
    auto x = b.relu(b.batchnorm(b.conv(b.input(), 64, 2, 2)));
    x = b.relu(b.batchnorm(b.conv(x, 192, 3, 1)));
    x = b.relu(b.batchnorm(b.conv(x, 384, 3, 1)));
    x = b.relu(b.batchnorm(b.conv(x, 256, 3, 1)));
    x = b.flatten(b.maxpool(x, 2));
    x = b.relu(b.linear(x, 4096));
    x = b.relu(b.linear(x, 4096));
    auto g = b.finish({b.softmax(b.linear(x, 10))});
    init_params(g, 0);
    return g;
}

Graph resnet_preset() {
    GraphBuilder b("resnet", {3, 32, 32});
    auto x = b.relu(b.batchnorm(b.conv(b.input(), 64, 3, 2)));
    const std::int64_t blocks[4][2] = {{64, 64}, {64, 128}, {128, 256}, {256, 512}};
    for (const auto& blk : blocks) {
        auto y = b.relu(b.batchnorm(b.conv(x, blk[1], 3, 1, 1)));
        y = b.batchnorm(b.conv(y, blk[1], 3, 1, 1));
        auto shortcut = blk[0] == blk[1] ? x : b.batchnorm(b.conv(x, blk[1], 1, 1, 0));
        x = b.relu(b.add(y, shortcut));
    }
    x = b.flatten(b.maxpool(x, 2));
    auto g = b.finish({b.softmax(b.linear(x, 10))});
    init_params(g, 0);
    return g;
}

Graph preset(const std::string& name) {
    if (name == "lenet") return lenet_preset();
    if (name == "alexnet") return alexnet_preset();
    if (name == "resnet") return resnet_preset();
    if (name == "mlp") return mlp_preset({2, 32, 32, 2});
    throw UsageError("unknown preset '" + name + "' (expected one of lenet, alexnet, resnet, mlp)");
}

std::vector<std::string> preset_names() { return {"mlp", "lenet", "alexnet", "resnet"}; }

void init_params(Graph& g, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& n : g.nodes) {
        if (n.kind == OpKind::Conv2D || n.kind == OpKind::Linear) {
            auto& w = g.param(n.params[0]);
            double fan_in = static_cast<double>(numel(w.desc.shape) / w.desc.shape[0]);
            double bound = std::sqrt(6.0 / fan_in);
            for (auto& v : w.values<float>()) v = static_cast<float>(rng.uniform(-bound, bound));
            for (auto& v : g.param(n.params[1]).values<float>()) v = 0.0f;
        } else if (n.kind == OpKind::BatchNorm) {
            const float init[4] = {1.0f, 0.0f, 0.0f, 1.0f};
            for (std::size_t i = 0; i < 4; ++i) {
                for (auto& v : g.param(n.params[i]).values<float>()) v = init[i];
            }
        }
    }
}

} // namespace tinyforge
