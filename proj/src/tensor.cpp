#include "fxemu/tensor.hpp"

#include <cmath>
#include <sstream>

namespace fxemu {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

int64_t FTensor::numel() const noexcept { return static_cast<int64_t>(data.size()); }
int64_t QTensor::numel() const noexcept { return static_cast<int64_t>(raw.size()); }

FTensor FTensor::zeros(std::vector<int64_t> shape) {
    const int64_t n = shape_numel(shape);
    return FTensor{std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f)};
}

FTensor FTensor::from_values(std::vector<int64_t> shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("element count does not match shape " + shape_to_string(shape));
    return FTensor{std::move(shape), std::move(values)};
}

QTensor QTensor::zeros(std::vector<int64_t> shape, QuantParams p) {
    const int64_t n = shape_numel(shape);
    return QTensor{std::move(shape), std::vector<int64_t>(static_cast<size_t>(n), 0), p};
}

void check_finite(const FTensor& t, const std::string& name) {
    for (float v : t.data)
        if (!std::isfinite(v))
            throw DomainError("non-finite value in tensor '" + name + "'");
}

QTensor quantize_tensor(const FTensor& t, QuantParams p) {
    QTensor q;
    q.shape = t.shape;
    q.params = p;
    q.raw.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i)
        q.raw[i] = quantize_raw(static_cast<double>(t.data[i]), p);
    return q;
}

FTensor dequantize_tensor(const QTensor& q) {
    FTensor t;
    t.shape = q.shape;
    t.data.resize(q.raw.size());
    for (size_t i = 0; i < q.raw.size(); ++i)
        t.data[i] = static_cast<float>(dequantize(q.raw[i], q.params));
    return t;
}

QTensor rescale_tensor(const QTensor& q, QuantParams p) {
    QTensor out;
    out.shape = q.shape;
    out.params = p;
    out.raw.resize(q.raw.size());
    for (size_t i = 0; i < q.raw.size(); ++i)
        out.raw[i] = rescale_wide(q.raw[i], q.params.fl, p);
    return out;
}

int64_t conv_out_dim(int64_t in, int k, int s, int p) {
    const int64_t padded = in + 2 * static_cast<int64_t>(p);
    if (k <= 0 || s <= 0 || p < 0 || padded < k)
        throw ShapeError("invalid window geometry: in=" + std::to_string(in) + " k=" +
                         std::to_string(k) + " s=" + std::to_string(s) + " p=" + std::to_string(p));
    return (padded - k) / s + 1;
}

QTensor im2col(const QTensor& input, int kh, int kw, int sh, int sw, int ph, int pw) {
    if (input.shape.size() != 4)
        throw ShapeError("im2col expects NCHW input, got " + shape_to_string(input.shape));
    const int64_t n = input.shape[0], c = input.shape[1], h = input.shape[2], w = input.shape[3];
    const int64_t oh = conv_out_dim(h, kh, sh, ph);
    const int64_t ow = conv_out_dim(w, kw, sw, pw);

    const int64_t rows = c * kh * kw;
    const int64_t cols = n * oh * ow;
    QTensor out = QTensor::zeros({rows, cols}, input.params);

    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t yo = 0; yo < oh; ++yo) {
            for (int64_t xo = 0; xo < ow; ++xo) {
                const int64_t col = (ni * oh + yo) * ow + xo;
                for (int64_t ci = 0; ci < c; ++ci) {
                    for (int ki = 0; ki < kh; ++ki) {
                        const int64_t yi = yo * sh - ph + ki;
                        for (int kj = 0; kj < kw; ++kj) {
                            const int64_t xi = xo * sw - pw + kj;
                            const int64_t row = (ci * kh + ki) * kw + kj;
                            int64_t v = 0; // zero padding
                            if (yi >= 0 && yi < h && xi >= 0 && xi < w)
                                v = input.raw[((ni * c + ci) * h + yi) * w + xi];
                            out.raw[row * cols + col] = v;
                        }
                    }
                }
            }
        }
    }
    return out;
}

} // namespace fxemu
