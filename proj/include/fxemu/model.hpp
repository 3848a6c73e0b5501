#pragma once

#include <map>
#include <string>
#include <vector>

#include "fxemu/graph.hpp"
#include "fxemu/tensor.hpp"

namespace fxemu {

/// FP32 model: a graph plus its named weight tensors.
struct Model {
    Graph graph;
    std::map<std::string, FTensor> weights;

    const FTensor& weight(const std::string& name) const;
};

/// Word-length assignment per tensor role. wl_bias == 0 means "derive":
/// biases live at the MAC product scale, so they get the combined width
/// of one input and one weight operand (capped at 32 for serialization).
struct WlConfig {
    int wl_weight = 12;
    int wl_activation = 12;
    int wl_bias = 0;
    // Extra precision for constants internal to activation functions
    // (LeakyReLU slope, HardSwish 1/6, the pooling reciprocal): both WL and
    // FL grow by this offset relative to the plain activation choice.
    int fl_internal_offset = 0;

    int bias_wl() const noexcept {
        if (wl_bias > 0) return wl_bias;
        const int derived = wl_weight + wl_activation;
        return derived > 32 ? 32 : derived;
    }
    int internal_wl() const noexcept {
        const int w = wl_activation + fl_internal_offset;
        return w > 63 ? 63 : w;
    }

    void check() const; // throws ConfigError on out-of-range widths
};

/// A pipeline-complete model: rewritten graph, fused FP32 weights (kept for
/// reference execution), quantized weight raws, and the full annotation.
struct QuantizedModel {
    Graph graph;
    std::map<std::string, FTensor> weights;
    std::map<std::string, QTensor> qweights;
    QuantAnnotation annotation;
    WlConfig wl_config;
    int guard_bits = -1; // -1: per-node default ceil(log2 K)

    const QTensor& qweight(const std::string& name) const;
};

} // namespace fxemu
