#pragma once

#include <map>
#include <string>

#include "fxemu/model.hpp"

namespace fxemu {

/// Plain FP32 execution with true division where the graph still carries
/// it (BatchNorm2D, GlobalAvgPool, HardSwish without a quantized constant).
/// Accumulation order is fixed left-to-right so results are reproducible
/// bit for bit across runs.
FTensor run_fp32(const Model& m, const FTensor& input);

/// Same execution, returning every tensor on the path (graph input
/// included). Calibration reads its activation statistics from this.
std::map<std::string, FTensor> run_fp32_trace(const Model& m, const FTensor& input);

struct CompareResult {
    double max_abs_diff = 0.0;
    double mse = 0.0;
    /// Fraction of batch rows whose argmax agrees (1.0 == full agreement).
    /// Rank-1 tensors are treated as a single row.
    double argmax_agreement = 1.0;
};

CompareResult compare(const FTensor& a, const FTensor& b);

} // namespace fxemu
