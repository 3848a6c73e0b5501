#include "fxemu/graph.hpp"

#include <algorithm>
#include <set>

#include "fxemu/tensor.hpp"

namespace fxemu {

const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Conv2D: return "Conv2D";
        case NodeKind::Linear: return "Linear";
        case NodeKind::BatchNorm2D: return "BatchNorm2D";
        case NodeKind::LeakyReLU: return "LeakyReLU";
        case NodeKind::ReLU: return "ReLU";
        case NodeKind::HardSwish: return "HardSwish";
        case NodeKind::MaxPool2D: return "MaxPool2D";
        case NodeKind::GlobalAvgPool: return "GlobalAvgPool";
        case NodeKind::SpatialSum: return "SpatialSum";
        case NodeKind::Add: return "Add";
        case NodeKind::Concat: return "Concat";
        case NodeKind::Mul: return "Mul";
        case NodeKind::UpsampleNearest: return "UpsampleNearest";
    }
    return "?";
}

std::optional<NodeKind> node_kind_from_string(const std::string& s) {
    static const std::map<std::string, NodeKind> table = {
        {"Conv2D", NodeKind::Conv2D},
        {"Linear", NodeKind::Linear},
        {"BatchNorm2D", NodeKind::BatchNorm2D},
        {"LeakyReLU", NodeKind::LeakyReLU},
        {"ReLU", NodeKind::ReLU},
        {"HardSwish", NodeKind::HardSwish},
        {"MaxPool2D", NodeKind::MaxPool2D},
        {"GlobalAvgPool", NodeKind::GlobalAvgPool},
        {"SpatialSum", NodeKind::SpatialSum},
        {"Add", NodeKind::Add},
        {"Concat", NodeKind::Concat},
        {"Mul", NodeKind::Mul},
        {"UpsampleNearest", NodeKind::UpsampleNearest},
    };
    auto it = table.find(s);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

const char* to_string(AddStrategy s) {
    return s == AddStrategy::MinFL ? "min-fl" : "align-max";
}

std::optional<AddStrategy> add_strategy_from_string(const std::string& s) {
    if (s == "min-fl") return AddStrategy::MinFL;
    if (s == "align-max") return AddStrategy::AlignMax;
    return std::nullopt;
}

namespace {

// How many trailing entries of Node::inputs are weight tensors.
int weight_input_count(const Node& n) {
    switch (n.kind) {
        case NodeKind::Conv2D:
        case NodeKind::Linear:
            return static_cast<int>(n.inputs.size()) - 1; // w or w+b
        case NodeKind::BatchNorm2D:
            return 4; // gamma, beta, mean, var
        default:
            return 0;
    }
}

} // namespace

std::vector<std::string> Graph::data_inputs(const Node& n) {
    const int wc = weight_input_count(n);
    const int dc = static_cast<int>(n.inputs.size()) - wc;
    return std::vector<std::string>(n.inputs.begin(), n.inputs.begin() + std::max(dc, 0));
}

const Node* Graph::find_node(const std::string& id) const {
    for (const Node& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

Node* Graph::find_node(const std::string& id) {
    for (Node& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

const Node* Graph::producer_of(const std::string& tensor) const {
    for (const Node& n : nodes)
        if (n.output == tensor) return &n;
    return nullptr;
}

bool Graph::is_input(const std::string& tensor) const {
    for (const TensorInfo& t : inputs)
        if (t.name == tensor) return true;
    return false;
}

bool Graph::is_weight(const std::string& tensor) const {
    return weight_info(tensor) != nullptr;
}

const TensorInfo* Graph::weight_info(const std::string& name) const {
    for (const TensorInfo& t : weights)
        if (t.name == name) return &t;
    return nullptr;
}

bool is_fl_transparent(NodeKind k) {
    return k == NodeKind::MaxPool2D || k == NodeKind::ReLU || k == NodeKind::UpsampleNearest;
}

std::vector<const Node*> topo_order(const Graph& g) {
    std::set<std::string> available;
    for (const TensorInfo& t : g.inputs) available.insert(t.name);
    for (const TensorInfo& t : g.weights) available.insert(t.name);

    std::set<std::string> seen_ids;
    for (const Node& n : g.nodes) {
        if (!seen_ids.insert(n.id).second)
            throw GraphError("duplicate node id '" + n.id + "'");
    }

    std::vector<const Node*> order;
    std::vector<const Node*> pending;
    for (const Node& n : g.nodes) pending.push_back(&n);

    while (!pending.empty()) {
        // Among ready nodes pick the smallest id, keeping the order stable.
        const Node* next = nullptr;
        for (const Node* n : pending) {
            bool ready = true;
            for (const std::string& in : n->inputs)
                if (!available.count(in)) { ready = false; break; }
            if (ready && (!next || n->id < next->id)) next = n;
        }
        if (!next) {
            // Distinguish a cycle from a reference to a tensor nobody defines.
            std::set<std::string> producible;
            for (const Node* n : pending) producible.insert(n->output);
            for (const Node* n : pending)
                for (const std::string& in : n->inputs)
                    if (!available.count(in) && !producible.count(in))
                        throw GraphError("node '" + n->id + "' consumes undefined tensor '" + in + "'");
            throw GraphError("graph contains a cycle");
        }
        order.push_back(next);
        available.insert(next->output);
        pending.erase(std::find(pending.begin(), pending.end(), next));
    }
    return order;
}

namespace {

void trace_producers(const Graph& g, const std::string& tensor, std::vector<JoinProducer>& out) {
    if (g.is_input(tensor)) {
        out.push_back(JoinProducer{"", tensor});
        return;
    }
    const Node* p = g.producer_of(tensor);
    if (!p) throw GraphError("tensor '" + tensor + "' has no producer");
    if (is_fl_transparent(p->kind)) {
        trace_producers(g, Graph::data_inputs(*p).front(), out);
    } else if (p->kind == NodeKind::Concat) {
        for (const std::string& in : Graph::data_inputs(*p)) trace_producers(g, in, out);
    } else {
        out.push_back(JoinProducer{p->id, p->output});
    }
}

} // namespace

std::vector<JoinPoint> find_join_points(const Graph& g) {
    std::vector<JoinPoint> joins;
    for (const Node* n : topo_order(g)) {
        if (n->kind != NodeKind::Add && n->kind != NodeKind::Concat) continue;
        JoinPoint jp;
        jp.node_id = n->id;
        jp.kind = n->kind;
        for (const std::string& in : Graph::data_inputs(*n)) trace_producers(g, in, jp.producers);
        // De-duplicate while keeping first-seen order (a diamond can reach
        // the same producer along two edges).
        std::vector<JoinProducer> unique;
        for (const JoinProducer& p : jp.producers)
            if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);
        jp.producers = std::move(unique);
        joins.push_back(std::move(jp));
    }
    return joins;
}

std::map<std::string, std::vector<int64_t>> infer_shapes(const Graph& g) {
    std::map<std::string, std::vector<int64_t>> shapes;
    for (const TensorInfo& t : g.inputs) shapes[t.name] = t.shape;
    for (const TensorInfo& t : g.weights) shapes[t.name] = t.shape;

    auto shape_of = [&](const std::string& name) -> const std::vector<int64_t>& {
        auto it = shapes.find(name);
        if (it == shapes.end()) throw GraphError("tensor '" + name + "' has no shape");
        return it->second;
    };

    for (const Node* n : topo_order(g)) {
        std::vector<int64_t> out;
        switch (n->kind) {
            case NodeKind::Conv2D: {
                if (n->inputs.size() != 2 && n->inputs.size() != 3)
                    throw GraphError("Conv2D '" + n->id + "' needs inputs x, w[, b]");
                const auto& x = shape_of(n->inputs[0]);
                const auto& w = shape_of(n->inputs[1]);
                if (x.size() != 4 || w.size() != 4)
                    throw ShapeError("Conv2D '" + n->id + "' expects NCHW x and OIHW w");
                if (x[1] != w[1])
                    throw ShapeError("Conv2D '" + n->id + "' channel mismatch: x has " +
                                     std::to_string(x[1]) + ", w expects " + std::to_string(w[1]));
                if (n->inputs.size() == 3) {
                    const auto& b = shape_of(n->inputs[2]);
                    if (b.size() != 1 || b[0] != w[0])
                        throw ShapeError("Conv2D '" + n->id + "' bias shape mismatch");
                }
                const int64_t oh = conv_out_dim(x[2], static_cast<int>(w[2]), n->attrs.stride_h, n->attrs.pad_h);
                const int64_t ow = conv_out_dim(x[3], static_cast<int>(w[3]), n->attrs.stride_w, n->attrs.pad_w);
                out = {x[0], w[0], oh, ow};
                break;
            }
            case NodeKind::Linear: {
                if (n->inputs.size() != 2 && n->inputs.size() != 3)
                    throw GraphError("Linear '" + n->id + "' needs inputs x, w[, b]");
                const auto& x = shape_of(n->inputs[0]);
                const auto& w = shape_of(n->inputs[1]);
                if (x.empty() || w.size() != 2)
                    throw ShapeError("Linear '" + n->id + "' expects (N,...) x and (O,F) w");
                int64_t feat = 1;
                for (size_t i = 1; i < x.size(); ++i) feat *= x[i];
                if (feat != w[1])
                    throw ShapeError("Linear '" + n->id + "' feature mismatch: x flattens to " +
                                     std::to_string(feat) + ", w expects " + std::to_string(w[1]));
                if (n->inputs.size() == 3) {
                    const auto& b = shape_of(n->inputs[2]);
                    if (b.size() != 1 || b[0] != w[0])
                        throw ShapeError("Linear '" + n->id + "' bias shape mismatch");
                }
                out = {x[0], w[0]};
                break;
            }
            case NodeKind::BatchNorm2D: {
                if (n->inputs.size() != 5)
                    throw GraphError("BatchNorm2D '" + n->id + "' needs x, gamma, beta, mean, var");
                const auto& x = shape_of(n->inputs[0]);
                if (x.size() != 4) throw ShapeError("BatchNorm2D '" + n->id + "' expects NCHW input");
                for (int i = 1; i <= 4; ++i) {
                    const auto& p = shape_of(n->inputs[i]);
                    if (p.size() != 1 || p[0] != x[1])
                        throw ShapeError("BatchNorm2D '" + n->id + "' parameter '" + n->inputs[i] +
                                         "' must have shape (" + std::to_string(x[1]) + ")");
                }
                out = x;
                break;
            }
            case NodeKind::LeakyReLU: {
                if (n->attrs.negative_slope <= 0.0 || n->attrs.negative_slope >= 1.0)
                    throw GraphError("LeakyReLU '" + n->id + "' needs negative_slope in (0, 1)");
                out = shape_of(n->inputs.at(0));
                break;
            }
            case NodeKind::ReLU:
            case NodeKind::HardSwish:
            case NodeKind::Mul:
                out = shape_of(n->inputs.at(0));
                break;
            case NodeKind::MaxPool2D: {
                const auto& x = shape_of(n->inputs.at(0));
                if (x.size() != 4) throw ShapeError("MaxPool2D '" + n->id + "' expects NCHW input");
                if (n->attrs.kernel_h <= 0 || n->attrs.kernel_w <= 0)
                    throw GraphError("MaxPool2D '" + n->id + "' needs a positive kernel");
                if (n->attrs.pad_h >= n->attrs.kernel_h || n->attrs.pad_w >= n->attrs.kernel_w)
                    throw GraphError("MaxPool2D '" + n->id + "' padding must be smaller than the kernel");
                const int64_t oh = conv_out_dim(x[2], n->attrs.kernel_h, n->attrs.stride_h, n->attrs.pad_h);
                const int64_t ow = conv_out_dim(x[3], n->attrs.kernel_w, n->attrs.stride_w, n->attrs.pad_w);
                out = {x[0], x[1], oh, ow};
                break;
            }
            case NodeKind::GlobalAvgPool:
            case NodeKind::SpatialSum: {
                const auto& x = shape_of(n->inputs.at(0));
                if (x.size() != 4)
                    throw ShapeError(std::string(to_string(n->kind)) + " '" + n->id + "' expects NCHW input");
                out = {x[0], x[1]};
                break;
            }
            case NodeKind::Add: {
                if (n->inputs.size() != 2) throw GraphError("Add '" + n->id + "' needs two inputs");
                const auto& a = shape_of(n->inputs[0]);
                const auto& b = shape_of(n->inputs[1]);
                if (a != b)
                    throw ShapeError("Add '" + n->id + "' shape mismatch " + shape_to_string(a) +
                                     " vs " + shape_to_string(b));
                out = a;
                break;
            }
            case NodeKind::Concat: {
                if (n->inputs.empty()) throw GraphError("Concat '" + n->id + "' has no inputs");
                const auto& first = shape_of(n->inputs[0]);
                const int axis = n->attrs.axis;
                if (axis < 0 || axis >= static_cast<int>(first.size()))
                    throw GraphError("Concat '" + n->id + "' axis out of range");
                out = first;
                for (size_t i = 1; i < n->inputs.size(); ++i) {
                    const auto& s = shape_of(n->inputs[i]);
                    if (s.size() != first.size())
                        throw ShapeError("Concat '" + n->id + "' rank mismatch");
                    for (size_t d = 0; d < s.size(); ++d) {
                        if (static_cast<int>(d) == axis) continue;
                        if (s[d] != first[d])
                            throw ShapeError("Concat '" + n->id + "' dimension " + std::to_string(d) +
                                             " mismatch");
                    }
                    out[axis] += s[axis];
                }
                break;
            }
            case NodeKind::UpsampleNearest: {
                const auto& x = shape_of(n->inputs.at(0));
                if (x.size() != 4) throw ShapeError("UpsampleNearest '" + n->id + "' expects NCHW input");
                if (n->attrs.scale < 1)
                    throw GraphError("UpsampleNearest '" + n->id + "' needs scale >= 1");
                out = {x[0], x[1], x[2] * n->attrs.scale, x[3] * n->attrs.scale};
                break;
            }
        }
        if (shapes.count(n->output))
            throw GraphError("tensor '" + n->output + "' defined more than once");
        shapes[n->output] = std::move(out);
    }
    return shapes;
}

std::vector<Violation> validate(const Graph& g) {
    std::vector<Violation> v;

    std::set<std::string> defined;
    for (const TensorInfo& t : g.inputs)
        if (!defined.insert(t.name).second)
            v.push_back({t.name, "duplicate graph input"});
    for (const TensorInfo& t : g.weights)
        if (!defined.insert(t.name).second)
            v.push_back({t.name, "weight name collides with another tensor"});
    for (const Node& n : g.nodes)
        if (!defined.insert(n.output).second)
            v.push_back({n.id, "output tensor '" + n.output + "' already defined (SSA violation)"});

    for (const Node& n : g.nodes)
        for (const std::string& in : n.inputs)
            if (!defined.count(in))
                v.push_back({n.id, "consumes undefined tensor '" + in + "'"});

    for (const std::string& out : g.outputs)
        if (!defined.count(out))
            v.push_back({out, "graph output is not defined by any node or input"});

    if (!v.empty()) return v;

    try {
        infer_shapes(g); // also runs topo_order, catching cycles
    } catch (const Error& e) {
        v.push_back({"graph", e.what()});
    }
    return v;
}

const QuantParams& QuantAnnotation::params_of(const std::string& tensor) const {
    auto it = tensor_params.find(tensor);
    if (it == tensor_params.end())
        throw ContractError("tensor '" + tensor + "' has no quantization params");
    return it->second;
}

bool QuantAnnotation::all_division_free() const {
    for (const auto& [id, free] : division_free)
        if (!free) return false;
    return true;
}

} // namespace fxemu
