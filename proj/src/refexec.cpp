#include "fxemu/refexec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fxemu {

namespace {

FTensor conv2d_fp32(const FTensor& x, const FTensor& w, const FTensor* bias, const Attrs& a) {
    const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const int64_t o = w.shape[0];
    const int kh = static_cast<int>(w.shape[2]), kw = static_cast<int>(w.shape[3]);
    const int64_t oh = conv_out_dim(h, kh, a.stride_h, a.pad_h);
    const int64_t ow = conv_out_dim(wd, kw, a.stride_w, a.pad_w);

    FTensor out = FTensor::zeros({n, o, oh, ow});
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t oc = 0; oc < o; ++oc)
            for (int64_t yo = 0; yo < oh; ++yo)
                for (int64_t xo = 0; xo < ow; ++xo) {
                    float acc = bias ? bias->data[oc] : 0.0f;
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int ki = 0; ki < kh; ++ki) {
                            const int64_t yi = yo * a.stride_h - a.pad_h + ki;
                            if (yi < 0 || yi >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int64_t xi = xo * a.stride_w - a.pad_w + kj;
                                if (xi < 0 || xi >= wd) continue;
                                acc += x.data[((ni * c + ci) * h + yi) * wd + xi] *
                                       w.data[((oc * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    out.data[((ni * o + oc) * oh + yo) * ow + xo] = acc;
                }
    return out;
}

FTensor linear_fp32(const FTensor& x, const FTensor& w, const FTensor* bias) {
    const int64_t n = x.shape[0];
    const int64_t f = x.numel() / n;
    const int64_t o = w.shape[0];
    FTensor out = FTensor::zeros({n, o});
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t oc = 0; oc < o; ++oc) {
            float acc = bias ? bias->data[oc] : 0.0f;
            for (int64_t fi = 0; fi < f; ++fi)
                acc += x.data[ni * f + fi] * w.data[oc * f + fi];
            out.data[ni * o + oc] = acc;
        }
    return out;
}

FTensor concat_fp32(const std::vector<const FTensor*>& ins, int axis,
                    const std::vector<int64_t>& out_shape) {
    FTensor out = FTensor::zeros(out_shape);
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    int64_t tail = 1;
    for (size_t d = axis + 1; d < out_shape.size(); ++d) tail *= out_shape[d];

    float* dst = out.data.data();
    for (int64_t oi = 0; oi < outer; ++oi)
        for (const FTensor* t : ins) {
            const int64_t block = t->shape[axis] * tail;
            const float* src = t->data.data() + oi * block;
            std::copy(src, src + block, dst);
            dst += block;
        }
    return out;
}

} // namespace

std::map<std::string, FTensor> run_fp32_trace(const Model& m, const FTensor& input) {
    if (m.graph.inputs.size() != 1)
        throw ContractError("executor expects exactly one graph input");
    if (input.shape != m.graph.inputs[0].shape)
        throw ShapeError("input shape " + shape_to_string(input.shape) + " does not match graph input " +
                         shape_to_string(m.graph.inputs[0].shape));

    std::map<std::string, FTensor> vals;
    vals[m.graph.inputs[0].name] = input;

    auto val = [&](const std::string& name) -> const FTensor& {
        auto it = vals.find(name);
        if (it != vals.end()) return it->second;
        return m.weight(name);
    };

    for (const Node* n : topo_order(m.graph)) {
        const Attrs& a = n->attrs;
        FTensor out;
        switch (n->kind) {
            case NodeKind::Conv2D: {
                const FTensor* b = n->inputs.size() == 3 ? &val(n->inputs[2]) : nullptr;
                out = conv2d_fp32(val(n->inputs[0]), val(n->inputs[1]), b, a);
                break;
            }
            case NodeKind::Linear: {
                const FTensor* b = n->inputs.size() == 3 ? &val(n->inputs[2]) : nullptr;
                out = linear_fp32(val(n->inputs[0]), val(n->inputs[1]), b);
                break;
            }
            case NodeKind::BatchNorm2D: {
                const FTensor& x = val(n->inputs[0]);
                const FTensor& gamma = val(n->inputs[1]);
                const FTensor& beta = val(n->inputs[2]);
                const FTensor& mean = val(n->inputs[3]);
                const FTensor& var = val(n->inputs[4]);
                const int64_t nn = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
                out = FTensor::zeros(x.shape);
                for (int64_t ci = 0; ci < c; ++ci) {
                    const float s = static_cast<float>(
                        gamma.data[ci] / std::sqrt(static_cast<double>(var.data[ci]) + a.eps));
                    for (int64_t ni = 0; ni < nn; ++ni)
                        for (int64_t i = 0; i < hw; ++i) {
                            const int64_t idx = (ni * c + ci) * hw + i;
                            out.data[idx] = (x.data[idx] - mean.data[ci]) * s + beta.data[ci];
                        }
                }
                break;
            }
            case NodeKind::LeakyReLU: {
                const FTensor& x = val(n->inputs[0]);
                const float slope = static_cast<float>(a.negative_slope);
                out = FTensor::zeros(x.shape);
                for (size_t i = 0; i < x.data.size(); ++i)
                    out.data[i] = x.data[i] >= 0.0f ? x.data[i] : x.data[i] * slope;
                break;
            }
            case NodeKind::ReLU: {
                const FTensor& x = val(n->inputs[0]);
                out = FTensor::zeros(x.shape);
                for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::max(0.0f, x.data[i]);
                break;
            }
            case NodeKind::HardSwish: {
                const FTensor& x = val(n->inputs[0]);
                out = FTensor::zeros(x.shape);
                for (size_t i = 0; i < x.data.size(); ++i) {
                    const float t = std::clamp(x.data[i] + 3.0f, 0.0f, 6.0f);
                    // Post-rewrite graphs multiply by the quantized 1/6.
                    out.data[i] = a.qconst ? x.data[i] * t * static_cast<float>(a.qconst->value())
                                           : x.data[i] * t / 6.0f;
                }
                break;
            }
            case NodeKind::MaxPool2D: {
                const FTensor& x = val(n->inputs[0]);
                const int64_t nn = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
                const int64_t oh = conv_out_dim(h, a.kernel_h, a.stride_h, a.pad_h);
                const int64_t ow = conv_out_dim(w, a.kernel_w, a.stride_w, a.pad_w);
                out = FTensor::zeros({nn, c, oh, ow});
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t yo = 0; yo < oh; ++yo)
                            for (int64_t xo = 0; xo < ow; ++xo) {
                                float best = -std::numeric_limits<float>::infinity();
                                for (int ki = 0; ki < a.kernel_h; ++ki) {
                                    const int64_t yi = yo * a.stride_h - a.pad_h + ki;
                                    if (yi < 0 || yi >= h) continue;
                                    for (int kj = 0; kj < a.kernel_w; ++kj) {
                                        const int64_t xi = xo * a.stride_w - a.pad_w + kj;
                                        if (xi < 0 || xi >= w) continue;
                                        best = std::max(best, x.data[((ni * c + ci) * h + yi) * w + xi]);
                                    }
                                }
                                out.data[((ni * c + ci) * oh + yo) * ow + xo] = best;
                            }
                break;
            }
            case NodeKind::GlobalAvgPool:
            case NodeKind::SpatialSum: {
                const FTensor& x = val(n->inputs[0]);
                const int64_t nn = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
                out = FTensor::zeros({nn, c});
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci) {
                        float acc = 0.0f;
                        for (int64_t i = 0; i < hw; ++i) acc += x.data[(ni * c + ci) * hw + i];
                        out.data[ni * c + ci] =
                            n->kind == NodeKind::GlobalAvgPool ? acc / static_cast<float>(hw) : acc;
                    }
                break;
            }
            case NodeKind::Add: {
                const FTensor& x = val(n->inputs[0]);
                const FTensor& y = val(n->inputs[1]);
                out = FTensor::zeros(x.shape);
                for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] + y.data[i];
                break;
            }
            case NodeKind::Concat: {
                std::vector<const FTensor*> ins;
                for (const std::string& name : n->inputs) ins.push_back(&val(name));
                std::vector<int64_t> shape = ins[0]->shape;
                for (size_t i = 1; i < ins.size(); ++i) shape[a.axis] += ins[i]->shape[a.axis];
                out = concat_fp32(ins, a.axis, shape);
                break;
            }
            case NodeKind::Mul: {
                const FTensor& x = val(n->inputs[0]);
                const float k = static_cast<float>(a.qconst ? a.qconst->value() : a.value);
                out = FTensor::zeros(x.shape);
                for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * k;
                break;
            }
            case NodeKind::UpsampleNearest: {
                const FTensor& x = val(n->inputs[0]);
                const int64_t nn = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
                const int s = a.scale;
                out = FTensor::zeros({nn, c, h * s, w * s});
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t y = 0; y < h * s; ++y)
                            for (int64_t x2 = 0; x2 < w * s; ++x2)
                                out.data[((ni * c + ci) * h * s + y) * w * s + x2] =
                                    x.data[((ni * c + ci) * h + y / s) * w + x2 / s];
                break;
            }
        }
        vals[n->output] = std::move(out);
    }
    return vals;
}

FTensor run_fp32(const Model& m, const FTensor& input) {
    auto vals = run_fp32_trace(m, input);
    if (m.graph.outputs.size() != 1)
        throw ContractError("executor expects exactly one graph output");
    return std::move(vals.at(m.graph.outputs[0]));
}

CompareResult compare(const FTensor& a, const FTensor& b) {
    if (a.shape != b.shape)
        throw ShapeError("compare: shape mismatch " + shape_to_string(a.shape) + " vs " +
                         shape_to_string(b.shape));
    CompareResult r;
    double sq = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        r.max_abs_diff = std::max(r.max_abs_diff, std::abs(d));
        sq += d * d;
    }
    r.mse = a.data.empty() ? 0.0 : sq / static_cast<double>(a.data.size());

    const int64_t rows = a.shape.size() >= 2 ? a.shape[0] : 1;
    const int64_t cols = a.numel() / rows;
    int64_t agree = 0;
    for (int64_t ri = 0; ri < rows; ++ri) {
        auto argmax = [&](const FTensor& t) {
            int64_t best = 0;
            for (int64_t ci = 1; ci < cols; ++ci)
                if (t.data[ri * cols + ci] > t.data[ri * cols + best]) best = ci;
            return best;
        };
        if (argmax(a) == argmax(b)) ++agree;
    }
    r.argmax_agreement = static_cast<double>(agree) / static_cast<double>(rows);
    return r;
}

} // namespace fxemu
