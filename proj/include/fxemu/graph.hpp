#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fxemu/fixedpoint.hpp"

namespace fxemu {

enum class NodeKind {
    Conv2D,
    Linear,
    BatchNorm2D,
    LeakyReLU,
    ReLU,
    HardSwish,
    MaxPool2D,
    GlobalAvgPool,
    SpatialSum, // introduced when GlobalAvgPool is rewritten to sum * constant
    Add,
    Concat,
    Mul, // multiply by a scalar constant
    UpsampleNearest,
};

const char* to_string(NodeKind k);
std::optional<NodeKind> node_kind_from_string(const std::string& s);

/// Scalar constant quantized by the division-removal pass, carried as a
/// node attribute so executors multiply by exactly the hardware value.
struct QuantConst {
    int64_t raw = 0;
    QuantParams params;

    double value() const noexcept { return dequantize(raw, params); }
    bool operator==(const QuantConst&) const = default;
};

/// Kind-specific attributes; validate() checks the set required per kind.
struct Attrs {
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
    int kernel_h = 0, kernel_w = 0; // pooling windows (conv kernels come from weights)
    double eps = 1e-5;              // BatchNorm2D
    double negative_slope = 0.01;   // LeakyReLU
    int axis = 1;                   // Concat
    int scale = 2;                  // UpsampleNearest integer factor
    double value = 0.0;             // Mul scalar constant (FP32 semantics)
    std::optional<QuantConst> qconst; // quantized constant (Mul / LeakyReLU slope / HardSwish 1/6)
};

/// One layer. `inputs` lists activation tensors first, then any weight
/// tensors the kind consumes (Conv2D: x, w[, b]; Linear: x, w[, b];
/// BatchNorm2D: x, gamma, beta, mean, var).
struct Node {
    std::string id;
    NodeKind kind = NodeKind::ReLU;
    std::vector<std::string> inputs;
    std::string output;
    Attrs attrs;
};

struct TensorInfo {
    std::string name;
    std::vector<int64_t> shape;
};

struct Graph {
    std::vector<Node> nodes;
    std::vector<TensorInfo> inputs;
    std::vector<TensorInfo> weights;
    std::vector<std::string> outputs;

    const Node* find_node(const std::string& id) const;
    Node* find_node(const std::string& id);
    const Node* producer_of(const std::string& tensor) const;
    bool is_input(const std::string& tensor) const;
    bool is_weight(const std::string& tensor) const;
    const TensorInfo* weight_info(const std::string& name) const;

    /// Activation inputs of a node (the weight-name suffix stripped).
    static std::vector<std::string> data_inputs(const Node& n);
};

/// Nodes that never change the fixed-point format of the data flowing
/// through them. Concat is format-preserving too but is a join point in
/// its own right; see find_join_points.
bool is_fl_transparent(NodeKind k);

/// Deterministic topological order (ties broken by smallest node id).
/// Throws GraphError on a cycle or undefined input tensor.
std::vector<const Node*> topo_order(const Graph& g);

struct JoinProducer {
    std::string node_id; // empty when the traced source is a graph input
    std::string tensor;  // the FL-defining tensor feeding the join

    bool operator==(const JoinProducer&) const = default;
};

struct JoinPoint {
    std::string node_id;
    NodeKind kind = NodeKind::Add; // Add or Concat
    std::vector<JoinProducer> producers;
};

/// Every Add/Concat node together with the FL-defining producers feeding
/// it, traced through format-transparent nodes (MaxPool2D, ReLU,
/// UpsampleNearest) and through intermediate Concats.
std::vector<JoinPoint> find_join_points(const Graph& g);

struct Violation {
    std::string where;
    std::string what;
};

/// Structural and shape checking; returns violations instead of throwing.
/// An empty list means the graph is well-formed and fully shape-inferable.
std::vector<Violation> validate(const Graph& g);

/// Shapes of every tensor (inputs, weights, intermediates). Throws
/// ShapeError/GraphError on malformed graphs; validate() wraps this.
std::map<std::string, std::vector<int64_t>> infer_shapes(const Graph& g);

/// Per-pipeline choice of how Add joins keep their operands comparable.
/// MinFL rewrites producer FLs down to the join minimum (the concat rule);
/// AlignMax leaves producers alone and has the executor align upward into
/// a widened intermediate before adding.
enum class AddStrategy { MinFL, AlignMax };

const char* to_string(AddStrategy s);
std::optional<AddStrategy> add_strategy_from_string(const std::string& s);

/// Quantization facts attached to a graph by calibration and the passes.
struct QuantAnnotation {
    std::map<std::string, QuantParams> tensor_params;
    std::map<std::string, int> guard_bits;      // per MAC node
    std::map<std::string, bool> division_free;  // per node
    AddStrategy add_strategy = AddStrategy::MinFL;

    const QuantParams& params_of(const std::string& tensor) const;
    bool all_division_free() const;
};

} // namespace fxemu
