#pragma once

#include "fxemu/calib.hpp"
#include "fxemu/passes.hpp"

namespace fxemu {

struct PipelineConfig {
    WlConfig wl;
    AddStrategy strategy = AddStrategy::MinFL;
    int guard_bits = -1; // -1: per-node default ceil(log2 K)
};

struct PipelineResult {
    QuantizedModel model;
    std::vector<PassReport> pass_reports;
    std::vector<CalibRecord> calib_records;
};

/// The six-step emulation pipeline, in order: layer fusion (with BN
/// distribution as its enabling sub-step), weight quantization,
/// calibration, division removal, FL adjustment, and output quantization
/// (realized by the executor re-quantizing every node output; biases are
/// frozen here at their final product scale). Throws PipelineError with
/// the failing node when a step cannot preserve exactness.
PipelineResult quantize_pipeline(Model m, const std::vector<FTensor>& calib_inputs,
                                 const PipelineConfig& cfg);

} // namespace fxemu
