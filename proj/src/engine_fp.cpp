#include <algorithm>
#include <cmath>
#include <limits>

#include "fxemu/engine.hpp"

// Quantized-FP64 emulation: every tensor is held as raws, dequantized to
// FP64 for the node arithmetic, and re-quantized at the node's annotated
// format. No integer kernel or rescale is reused here; agreement with
// run_quantized is checked by tests, not shared code.

namespace fxemu {

namespace {

std::vector<double> deq_all(const QTensor& x) {
    std::vector<double> v(x.raw.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = dequantize(x.raw[i], x.params);
    return v;
}

QTensor quant_all(std::vector<int64_t> shape, const std::vector<double>& v, QuantParams p) {
    QTensor out = QTensor::zeros(std::move(shape), p);
    for (size_t i = 0; i < v.size(); ++i) out.raw[i] = quantize_raw(v[i], p);
    return out;
}

} // namespace

RunResult run_quantized_fp(const QuantizedModel& qm, const FTensor& input, const RunOptions& opts) {
    const Graph& g = qm.graph;
    if (g.inputs.size() != 1) throw ContractError("executor expects exactly one graph input");
    const QuantAnnotation& ann = qm.annotation;

    std::map<std::string, QTensor> vals;
    const std::string& in_name = g.inputs[0].name;
    vals[in_name] = quantize_tensor(input, ann.params_of(in_name));

    for (const Node* n : topo_order(g)) {
        const Attrs& a = n->attrs;
        const QuantParams out_p = ann.params_of(n->output);
        QTensor out;
        switch (n->kind) {
            case NodeKind::Conv2D: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const std::vector<double> x = deq_all(xq);
                const QTensor& wq = qm.qweight(n->inputs[1]);
                const std::vector<double> w = deq_all(wq);
                std::vector<double> b;
                if (n->inputs.size() == 3) b = deq_all(qm.qweight(n->inputs[2]));

                const int64_t nn = xq.shape[0], c = xq.shape[1], h = xq.shape[2], wd = xq.shape[3];
                const int64_t o = wq.shape[0];
                const int kh = int(wq.shape[2]), kw = int(wq.shape[3]);
                const int64_t oh = conv_out_dim(h, kh, a.stride_h, a.pad_h);
                const int64_t ow = conv_out_dim(wd, kw, a.stride_w, a.pad_w);

                std::vector<double> y(size_t(nn * o * oh * ow), 0.0);
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t oc = 0; oc < o; ++oc)
                        for (int64_t yo = 0; yo < oh; ++yo)
                            for (int64_t xo = 0; xo < ow; ++xo) {
                                double acc = b.empty() ? 0.0 : b[oc];
                                for (int64_t ci = 0; ci < c; ++ci)
                                    for (int ki = 0; ki < kh; ++ki) {
                                        const int64_t yi = yo * a.stride_h - a.pad_h + ki;
                                        if (yi < 0 || yi >= h) continue;
                                        for (int kj = 0; kj < kw; ++kj) {
                                            const int64_t xi = xo * a.stride_w - a.pad_w + kj;
                                            if (xi < 0 || xi >= wd) continue;
                                            acc += x[((ni * c + ci) * h + yi) * wd + xi] *
                                                   w[((oc * c + ci) * kh + ki) * kw + kj];
                                        }
                                    }
                                y[((ni * o + oc) * oh + yo) * ow + xo] = acc;
                            }
                out = quant_all({nn, o, oh, ow}, y, out_p);
                break;
            }
            case NodeKind::Linear: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const std::vector<double> x = deq_all(xq);
                const std::vector<double> w = deq_all(qm.qweight(n->inputs[1]));
                std::vector<double> b;
                if (n->inputs.size() == 3) b = deq_all(qm.qweight(n->inputs[2]));
                const int64_t nn = xq.shape[0];
                const int64_t f = xq.numel() / nn;
                const int64_t o = qm.qweight(n->inputs[1]).shape[0];
                std::vector<double> y(size_t(nn * o), 0.0);
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t oc = 0; oc < o; ++oc) {
                        double acc = b.empty() ? 0.0 : b[oc];
                        for (int64_t fi = 0; fi < f; ++fi) acc += x[ni * f + fi] * w[oc * f + fi];
                        y[ni * o + oc] = acc;
                    }
                out = quant_all({nn, o}, y, out_p);
                break;
            }
            case NodeKind::ReLU: {
                const QTensor& xq = vals.at(n->inputs[0]);
                std::vector<double> y = deq_all(xq);
                for (double& v : y) v = std::max(0.0, v);
                out = quant_all(xq.shape, y, out_p);
                break;
            }
            case NodeKind::LeakyReLU: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const double slope = n->attrs.qconst->value();
                std::vector<double> y = deq_all(xq);
                for (double& v : y)
                    if (v < 0.0) v *= slope;
                out = quant_all(xq.shape, y, out_p);
                break;
            }
            case NodeKind::HardSwish: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const double c6 = n->attrs.qconst->value();
                std::vector<double> y = deq_all(xq);
                for (double& v : y) v = v * std::clamp(v + 3.0, 0.0, 6.0) * c6;
                out = quant_all(xq.shape, y, out_p);
                break;
            }
            case NodeKind::MaxPool2D: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const std::vector<double> x = deq_all(xq);
                const int64_t nn = xq.shape[0], c = xq.shape[1], h = xq.shape[2], w = xq.shape[3];
                const int64_t oh = conv_out_dim(h, a.kernel_h, a.stride_h, a.pad_h);
                const int64_t ow = conv_out_dim(w, a.kernel_w, a.stride_w, a.pad_w);
                std::vector<double> y(size_t(nn * c * oh * ow));
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t yo = 0; yo < oh; ++yo)
                            for (int64_t xo = 0; xo < ow; ++xo) {
                                double best = -std::numeric_limits<double>::infinity();
                                for (int ki = 0; ki < a.kernel_h; ++ki) {
                                    const int64_t yi = yo * a.stride_h - a.pad_h + ki;
                                    if (yi < 0 || yi >= h) continue;
                                    for (int kj = 0; kj < a.kernel_w; ++kj) {
                                        const int64_t xi = xo * a.stride_w - a.pad_w + kj;
                                        if (xi < 0 || xi >= w) continue;
                                        best = std::max(best, x[((ni * c + ci) * h + yi) * w + xi]);
                                    }
                                }
                                y[((ni * c + ci) * oh + yo) * ow + xo] = best;
                            }
                out = quant_all({nn, c, oh, ow}, y, out_p);
                break;
            }
            case NodeKind::UpsampleNearest: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const std::vector<double> x = deq_all(xq);
                const int64_t nn = xq.shape[0], c = xq.shape[1], h = xq.shape[2], w = xq.shape[3];
                const int s = a.scale;
                std::vector<double> y(size_t(nn * c * h * s * w * s));
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t yy = 0; yy < h * s; ++yy)
                            for (int64_t xx = 0; xx < w * s; ++xx)
                                y[((ni * c + ci) * h * s + yy) * w * s + xx] =
                                    x[((ni * c + ci) * h + yy / s) * w + xx / s];
                out = quant_all({nn, c, h * s, w * s}, y, out_p);
                break;
            }
            case NodeKind::SpatialSum: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const std::vector<double> x = deq_all(xq);
                const int64_t nn = xq.shape[0], c = xq.shape[1], hw = xq.shape[2] * xq.shape[3];
                std::vector<double> y(size_t(nn * c), 0.0);
                for (int64_t ni = 0; ni < nn; ++ni)
                    for (int64_t ci = 0; ci < c; ++ci) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < hw; ++i) acc += x[(ni * c + ci) * hw + i];
                        y[ni * c + ci] = acc;
                    }
                out = quant_all({nn, c}, y, out_p);
                break;
            }
            case NodeKind::Mul: {
                const QTensor& xq = vals.at(n->inputs[0]);
                const double k = n->attrs.qconst->value();
                std::vector<double> y = deq_all(xq);
                for (double& v : y) v *= k;
                out = quant_all(xq.shape, y, out_p);
                break;
            }
            case NodeKind::Add: {
                const QTensor& aq = vals.at(n->inputs[0]);
                const QTensor& bq = vals.at(n->inputs[1]);
                const std::vector<double> x = deq_all(aq);
                const std::vector<double> z = deq_all(bq);
                std::vector<double> y(x.size());
                for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
                out = quant_all(aq.shape, y, out_p);
                break;
            }
            case NodeKind::Concat: {
                std::vector<const QTensor*> ins;
                for (const std::string& name : Graph::data_inputs(*n)) ins.push_back(&vals.at(name));
                std::vector<int64_t> shape = ins[0]->shape;
                for (size_t i = 1; i < ins.size(); ++i) shape[a.axis] += ins[i]->shape[a.axis];
                int64_t outer = 1;
                for (int d = 0; d < a.axis; ++d) outer *= shape[d];
                int64_t tail = 1;
                for (size_t d = a.axis + 1; d < shape.size(); ++d) tail *= shape[d];
                std::vector<double> y;
                y.reserve(size_t(shape_numel(shape)));
                for (int64_t oi = 0; oi < outer; ++oi)
                    for (const QTensor* t : ins) {
                        const int64_t block = t->shape[a.axis] * tail;
                        for (int64_t i = 0; i < block; ++i)
                            y.push_back(dequantize(t->raw[oi * block + i], t->params));
                    }
                out = quant_all(shape, y, out_p);
                break;
            }
            case NodeKind::BatchNorm2D:
            case NodeKind::GlobalAvgPool:
                throw ContractError("node '" + n->id + "' (" + to_string(n->kind) +
                                    ") is not emulatable; run the pipeline first");
        }
        vals[n->output] = std::move(out);
    }

    RunResult result;
    result.output_q = vals.at(g.outputs.at(0));
    result.output = dequantize_tensor(result.output_q);
    if (opts.trace) result.trace = std::move(vals);
    return result;
}

} // namespace fxemu
