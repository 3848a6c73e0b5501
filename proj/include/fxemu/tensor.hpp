#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fxemu/fixedpoint.hpp"

namespace fxemu {

/// Dense FP32 tensor, row-major. Activations are NCHW, conv weights OIHW.
struct FTensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    int64_t numel() const noexcept;
    static FTensor zeros(std::vector<int64_t> shape);
    static FTensor from_values(std::vector<int64_t> shape, std::vector<float> values);
};

/// Dense integer tensor plus the fixed-point format its raws are encoded in.
struct QTensor {
    std::vector<int64_t> shape;
    std::vector<int64_t> raw;
    QuantParams params;

    int64_t numel() const noexcept;
    static QTensor zeros(std::vector<int64_t> shape, QuantParams p);
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

/// Throws DomainError naming the tensor if any element is non-finite.
void check_finite(const FTensor& t, const std::string& name);

QTensor quantize_tensor(const FTensor& t, QuantParams p);
FTensor dequantize_tensor(const QTensor& q);

/// Elementwise rescale; bit-exactly quantize_tensor(dequantize_tensor(q), p).
QTensor rescale_tensor(const QTensor& q, QuantParams p);

/// Lower an NCHW tensor to a (C*kh*kw, N*OH*OW) matrix of receptive-field
/// columns. Padding contributes raw 0 (exact in every format); params carry
/// through unchanged. Throws ShapeError on invalid geometry.
QTensor im2col(const QTensor& input, int kh, int kw, int sh, int sw, int ph, int pw);

/// Output spatial size for one dimension; throws ShapeError if non-positive.
int64_t conv_out_dim(int64_t in, int k, int s, int p);

} // namespace fxemu
