#pragma once

#include <string>
#include <vector>

#include "fxemu/model.hpp"

namespace fxemu {

struct CalibRecord {
    std::string tensor;
    double max_abs = 0.0;
    QuantParams params;
    std::string role; // weight | bias | activation
};

/// Largest FL at which +-max_abs still round into the representable range
/// (no clamp engagement), found by direct search. max_abs == 0 degenerates
/// to fl = wl - 1.
QuantParams choose_fl(double max_abs, int wl);

/// Format for a constant internal to an activation function: the plain
/// activation choice widened by the configured offset in both WL and FL.
QuantParams internal_const_params(double value, const WlConfig& cfg);

struct CalibResult {
    QuantAnnotation annotation;
    std::vector<CalibRecord> records;
};

/// Runs the FP32 reference executor over the calibration set, records
/// per-tensor max |value| (weights from their values directly), and assigns
/// QuantParams with the role-appropriate WL. Format-transparent nodes
/// (MaxPool2D, ReLU, UpsampleNearest) inherit their input's params.
/// Also seeds per-node division_free flags and default guard-bit budgets.
CalibResult calibrate(const Model& m, const std::vector<FTensor>& calib_inputs,
                      const WlConfig& cfg);

/// (Re)quantize conv/linear biases for the MAC product scale: FL is
/// fl_input + fl_weight, capped at the largest FL the bias value fits at
/// bias_wl bits (the kernel shifts coarser biases up exactly). Called
/// after calibration and again after FL adjustment, since joins may lower
/// input FLs.
void assign_bias_params(const Model& m, QuantAnnotation& ann, const WlConfig& cfg,
                        std::vector<CalibRecord>* records = nullptr);

/// MAC depth of a Conv2D/Linear node (C*kh*kw or in_features); used for
/// the default guard-bit budget ceil(log2 K).
int64_t mac_depth(const Graph& g, const Node& n);

} // namespace fxemu
