#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fxemu/model.hpp"

namespace fxemu {

struct PassReport {
    std::string pass_name;
    std::vector<std::string> removed;  // node ids
    std::vector<std::string> added;    // node ids
    std::vector<std::string> modified; // node ids
    std::map<std::string, std::pair<int, int>> fl_changes; // tensor -> (before, after)
    std::vector<std::string> warnings;

    std::string text() const;
};

/// Fold each BatchNorm2D that directly follows a Conv2D (and is that
/// conv's only consumer) into the conv:
///   w' = w * gamma / sqrt(var + eps)   (per output channel)
///   b' = (b - mean) * gamma / sqrt(var + eps) + beta
/// Folding happens on FP32 weights, before quantization. A BN without a
/// foldable conv producer is left in place with a warning.
PassReport fuse_conv_bn(Model& m);

/// Split a BatchNorm2D that follows a channel-axis Concat into per-branch
/// BatchNorm2D nodes whose parameter slices match each branch's channel
/// range, so the fusion pass can fold them into the branch convolutions.
PassReport distribute_bn_over_concat(Model& m);

/// Rewrite every division-bearing operation into integer-realizable form:
///   GlobalAvgPool  -> SpatialSum + Mul by quantized 1/(H*W)
///   HardSwish      -> x * clamp(x+3, 0, 6) * quantized 1/6
///   LeakyReLU      -> negative slope replaced by its quantized value
/// Constants are quantized at the activation-internal format from cfg.
/// A surviving BatchNorm2D is a hard error naming the node.
PassReport eliminate_division(Model& m, QuantAnnotation& ann, const WlConfig& cfg);

/// Align fixed-point formats at join points. Concat producers always drop
/// to the minimum FL among them; Add producers do the same under MinFL,
/// while AlignMax leaves them alone (the executor aligns upward into a
/// widened intermediate). Runs to a fixed point, then re-propagates params
/// through format-transparent chains. Idempotent.
PassReport adjust_fl(const Graph& g, QuantAnnotation& ann, AddStrategy strategy);

} // namespace fxemu
