#include <cmath>
#include <random>

#include "fxemu/model_io.hpp"

namespace fxemu {

namespace {

// Fixture weights must be bit-identical across runs, so values are derived
// from the raw mt19937_64 stream instead of distribution adapters.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed) : gen(seed) {}

    double unit() { return double(gen() >> 11) * 0x1.0p-53; } // [0, 1)
    float uniform(double lo, double hi) { return static_cast<float>(lo + unit() * (hi - lo)); }

    FTensor tensor(std::vector<int64_t> shape, double lo, double hi) {
        FTensor t = FTensor::zeros(std::move(shape));
        for (float& v : t.data) v = uniform(lo, hi);
        return t;
    }
};

struct Builder {
    Model m;
    Rng rng;

    explicit Builder(uint64_t seed) : rng(seed) {}

    void input(const std::string& name, std::vector<int64_t> shape) {
        m.graph.inputs.push_back({name, std::move(shape)});
    }

    void weight(const std::string& name, std::vector<int64_t> shape, double lo, double hi) {
        FTensor t = rng.tensor(shape, lo, hi);
        m.graph.weights.push_back({name, t.shape});
        m.weights[name] = std::move(t);
    }

    Node& node(const std::string& id, NodeKind kind, std::vector<std::string> inputs,
               const std::string& output) {
        Node n;
        n.id = id;
        n.kind = kind;
        n.inputs = std::move(inputs);
        n.output = output;
        m.graph.nodes.push_back(std::move(n));
        return m.graph.nodes.back();
    }

    // gain spreads branch magnitudes apart so joins see genuinely
    // different fixed-point formats.
    void conv(const std::string& id, const std::string& in, const std::string& out, int64_t ci,
              int64_t co, int k, int pad, double gain = 1.0) {
        const double s = gain * std::sqrt(3.0 / double(ci * k * k));
        weight(id + ".w", {co, ci, k, k}, -s, s);
        weight(id + ".b", {co}, -0.1, 0.1);
        Node& n = node(id, NodeKind::Conv2D, {in, id + ".w", id + ".b"}, out);
        n.attrs.pad_h = n.attrs.pad_w = pad;
    }

    void bn(const std::string& id, const std::string& in, const std::string& out, int64_t c) {
        weight(id + ".gamma", {c}, 0.75, 1.25);
        weight(id + ".beta", {c}, -0.2, 0.2);
        weight(id + ".mean", {c}, -0.3, 0.3);
        weight(id + ".var", {c}, 0.5, 1.5);
        node(id, NodeKind::BatchNorm2D, {in, id + ".gamma", id + ".beta", id + ".mean", id + ".var"},
             out);
    }
};

} // namespace

std::vector<std::string> fixture_names() {
    return {"tiny_cnn", "resnet_block", "csp_concat_bn"};
}

Model build_fixture(const std::string& name, uint64_t seed) {
    Builder b(seed);
    Graph& g = b.m.graph;

    if (name == "tiny_cnn") {
        b.input("x", {1, 3, 8, 8});
        b.conv("conv1", "x", "conv1.out", 3, 8, 3, 1);
        b.bn("bn1", "conv1.out", "bn1.out", 8);
        b.node("act1", NodeKind::LeakyReLU, {"bn1.out"}, "act1.out").attrs.negative_slope = 0.1;
        Node& pool = b.node("pool1", NodeKind::MaxPool2D, {"act1.out"}, "pool1.out");
        pool.attrs.kernel_h = pool.attrs.kernel_w = 2;
        pool.attrs.stride_h = pool.attrs.stride_w = 2;
        b.conv("conv2", "pool1.out", "conv2.out", 8, 8, 3, 1);
        b.bn("bn2", "conv2.out", "bn2.out", 8);
        b.node("act2", NodeKind::HardSwish, {"bn2.out"}, "act2.out");
        b.node("gap", NodeKind::GlobalAvgPool, {"act2.out"}, "gap.out");
        const double s = std::sqrt(3.0 / 8.0);
        b.weight("fc.w", {10, 8}, -s, s);
        b.weight("fc.b", {10}, -0.1, 0.1);
        b.node("fc", NodeKind::Linear, {"gap.out", "fc.w", "fc.b"}, "logits");
        g.outputs = {"logits"};
    } else if (name == "resnet_block") {
        b.input("x", {1, 4, 6, 6});
        b.conv("conv1", "x", "conv1.out", 4, 4, 3, 1);
        b.bn("bn1", "conv1.out", "bn1.out", 4);
        b.node("relu1", NodeKind::ReLU, {"bn1.out"}, "relu1.out");
        b.conv("conv2", "relu1.out", "conv2.out", 4, 4, 3, 1, 4.0);
        b.bn("bn2", "conv2.out", "bn2.out", 4);
        b.node("add", NodeKind::Add, {"relu1.out", "bn2.out"}, "add.out");
        b.node("relu2", NodeKind::ReLU, {"add.out"}, "block.out");
        g.outputs = {"block.out"};
    } else if (name == "csp_concat_bn") {
        b.input("x", {1, 3, 6, 6});
        b.conv("convA", "x", "convA.out", 3, 4, 3, 1);
        b.conv("convB", "x", "convB.out", 3, 6, 3, 1, 3.0);
        b.node("cat", NodeKind::Concat, {"convA.out", "convB.out"}, "cat.out").attrs.axis = 1;
        b.bn("bn", "cat.out", "bn.out", 10);
        b.node("act", NodeKind::LeakyReLU, {"bn.out"}, "csp.out").attrs.negative_slope = 0.1;
        g.outputs = {"csp.out"};
    } else {
        throw ConfigError("unknown fixture '" + name + "'; available: tiny_cnn, resnet_block, csp_concat_bn");
    }

    auto violations = validate(g);
    if (!violations.empty())
        throw GraphError("fixture '" + name + "' failed validation: " + violations[0].what);
    return b.m;
}

std::vector<FTensor> make_inputs(const Model& m, int count, uint64_t seed, double lo, double hi) {
    if (m.graph.inputs.size() != 1) throw ContractError("model must have exactly one input");
    Rng rng(seed);
    std::vector<FTensor> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(rng.tensor(m.graph.inputs[0].shape, lo, hi));
    return out;
}

} // namespace fxemu
