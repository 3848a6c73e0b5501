#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fxemu/model.hpp"

namespace fxemu {

/// MAC accumulator geometry: one input operand width plus one weight
/// operand width plus the guard ("carry") bits budgeted for sum growth.
struct AccumulatorSpec {
    int acc_bits = 32;
    int guard_bits = 0;

    static AccumulatorSpec for_widths(int wl_in, int wl_weight, int guard_bits);
};

struct NodeOverflow {
    std::string node_id;
    uint64_t total_macs = 0;
    uint64_t overflow_count = 0;
    uwide_t max_abs_acc = 0;
    int acc_bits = 0; // budget the counts were checked against

    /// Smallest symmetric signed width holding every observed partial sum:
    /// max_abs_acc <= 2^(b-1) - 1.
    int min_acc_bits() const;
    /// An excursion is |acc| >= 2^(acc_bits-1); count and max_abs always
    /// reproduce the same verdict.
    void record(wide_t acc);
};

struct OverflowReport {
    std::vector<NodeOverflow> nodes;

    bool any_overflow() const;
    uint64_t total_overflows() const;
    std::string text() const;
};

std::string uwide_to_string(uwide_t v);

struct RunOptions {
    bool detect = false;
    int guard_bits_override = -1; // -1: per-node budget from the annotation
    bool trace = false;           // record every tensor's raws
};

struct RunResult {
    FTensor output; // dequantized FP32 view of the final tensor
    QTensor output_q;
    std::optional<OverflowReport> overflow;
    std::map<std::string, QTensor> trace;
};

/// Pure-integer execution of a pipeline-complete model: add/sub/mul only,
/// exact wide accumulation, round-half-away-from-zero rescale at every
/// node output. Detect mode additionally checks each MAC partial sum
/// against the accumulator budget; it never changes numeric results.
RunResult run_quantized(const QuantizedModel& qm, const FTensor& input,
                        const RunOptions& opts = {});

/// The quantized-FP64 emulation of the same model: dequantize, compute in
/// FP64, re-quantize at every node. For word lengths whose intermediates
/// fit the FP64 mantissa this reproduces the integer path bit for bit;
/// implemented independently of the integer kernels so the equivalence is
/// a meaningful cross-check.
RunResult run_quantized_fp(const QuantizedModel& qm, const FTensor& input,
                           const RunOptions& opts = {});

// Integer kernels, exposed for direct testing. ---------------------------

/// cols is an im2col matrix (K, M) at fl_x; w2d is (O, K) at fl_w; the
/// bias, when present, may not be finer than the product scale fl_x + fl_w
/// and is aligned into the accumulator with an exact left shift. Partial
/// sums accumulate exactly; spec/ovf, when given, count excursions beyond
/// the accumulator budget.
QTensor conv2d_int(const QTensor& cols, const QTensor& w2d, const QTensor* bias,
                   QuantParams out_params, const AccumulatorSpec* spec, NodeOverflow* ovf);

QTensor add_int(const QTensor& a, const QTensor& b, AddStrategy strategy, QuantParams out_params);
QTensor concat_int(const std::vector<const QTensor*>& inputs, int axis);
QTensor relu_int(const QTensor& x);
QTensor leaky_relu_int(const QTensor& x, const QuantConst& slope, QuantParams out_params);
QTensor hardswish_int(const QTensor& x, const QuantConst& sixth, QuantParams out_params);
QTensor maxpool_int(const QTensor& x, const Attrs& a);
QTensor upsample_int(const QTensor& x, int scale);
QTensor spatial_sum_int(const QTensor& x, QuantParams sum_params);
QTensor mul_const_int(const QTensor& x, const QuantConst& c, QuantParams out_params);

} // namespace fxemu
