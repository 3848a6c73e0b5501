#include "fxemu/engine.hpp"

#include <algorithm>
#include <sstream>

namespace fxemu {

AccumulatorSpec AccumulatorSpec::for_widths(int wl_in, int wl_weight, int guard_bits) {
    if (guard_bits < 0) throw ConfigError("guard bits must be nonnegative");
    const int bits = wl_in + wl_weight + guard_bits;
    if (bits > 63)
        throw ConfigError("accumulator width " + std::to_string(bits) + " exceeds 63 bits");
    return AccumulatorSpec{bits, guard_bits};
}

void NodeOverflow::record(wide_t acc) {
    ++total_macs;
    const uwide_t mag = acc < 0 ? uwide_t(-acc) : uwide_t(acc);
    if (mag > max_abs_acc) max_abs_acc = mag;
    if (mag >= (uwide_t(1) << (acc_bits - 1))) ++overflow_count;
}

int NodeOverflow::min_acc_bits() const {
    int b = 1;
    while (max_abs_acc > (uwide_t(1) << (b - 1)) - 1) ++b;
    return b;
}

bool OverflowReport::any_overflow() const {
    for (const NodeOverflow& n : nodes)
        if (n.overflow_count > 0) return true;
    return false;
}

uint64_t OverflowReport::total_overflows() const {
    uint64_t total = 0;
    for (const NodeOverflow& n : nodes) total += n.overflow_count;
    return total;
}

std::string uwide_to_string(uwide_t v) {
    if (v == 0) return "0";
    std::string s;
    while (v > 0) {
        s.push_back(char('0' + int(v % 10)));
        v /= 10;
    }
    std::reverse(s.begin(), s.end());
    return s;
}

std::string OverflowReport::text() const {
    std::ostringstream os;
    os << "node                     total MACs   overflows    max |acc|        min acc_bits  budget\n";
    for (const NodeOverflow& n : nodes) {
        os.width(24);
        os << std::left << n.node_id << " ";
        os.width(12);
        os << std::left << n.total_macs << " ";
        os.width(12);
        os << std::left << n.overflow_count << " ";
        os.width(16);
        os << std::left << uwide_to_string(n.max_abs_acc) << " ";
        os.width(13);
        os << std::left << n.min_acc_bits() << " ";
        os << n.acc_bits << "\n";
    }
    return os.str();
}

QTensor conv2d_int(const QTensor& cols, const QTensor& w2d, const QTensor* bias,
                   QuantParams out_params, const AccumulatorSpec* spec, NodeOverflow* ovf) {
    if (cols.shape.size() != 2 || w2d.shape.size() != 2 || cols.shape[0] != w2d.shape[1])
        throw ShapeError("conv2d_int: cols " + shape_to_string(cols.shape) + " vs weights " +
                         shape_to_string(w2d.shape));
    const int64_t k = cols.shape[0], m = cols.shape[1], o = w2d.shape[0];
    const int prod_fl = cols.params.fl + w2d.params.fl;
    int bias_shift = 0;
    if (bias) {
        if (bias->numel() != o) throw ShapeError("conv2d_int: bias length mismatch");
        // The bias enters the accumulator at the product scale; a coarser
        // bias format is aligned with an exact left shift.
        bias_shift = prod_fl - bias->params.fl;
        if (bias_shift < 0 || bias_shift > 62)
            throw ContractError("conv2d_int: bias fl " + std::to_string(bias->params.fl) +
                                " not alignable to product fl " + std::to_string(prod_fl));
    }
    if (ovf && spec) ovf->acc_bits = spec->acc_bits;

    QTensor out = QTensor::zeros({o, m}, out_params);
    for (int64_t oi = 0; oi < o; ++oi) {
        const int64_t* wrow = w2d.raw.data() + oi * k;
        for (int64_t mi = 0; mi < m; ++mi) {
            wide_t acc = bias ? wide_t(bias->raw[oi]) << bias_shift : wide_t(0);
            for (int64_t ki = 0; ki < k; ++ki) {
                acc += wide_t(wrow[ki]) * wide_t(cols.raw[ki * m + mi]);
                if (ovf) ovf->record(acc);
            }
            out.raw[oi * m + mi] = rescale_wide(acc, prod_fl, out_params);
        }
    }
    return out;
}

QTensor add_int(const QTensor& a, const QTensor& b, AddStrategy strategy, QuantParams out_params) {
    if (a.shape != b.shape) throw ShapeError("add_int: shape mismatch");
    if (strategy == AddStrategy::MinFL && a.params != b.params)
        throw ContractError("add_int: MinFL requires identical input formats, got wl/fl " +
                            std::to_string(a.params.wl) + "/" + std::to_string(a.params.fl) +
                            " vs " + std::to_string(b.params.wl) + "/" +
                            std::to_string(b.params.fl));
    const int common_fl = std::max(a.params.fl, b.params.fl);
    const int sa = common_fl - a.params.fl;
    const int sb = common_fl - b.params.fl;
    QTensor out = QTensor::zeros(a.shape, out_params);
    for (size_t i = 0; i < a.raw.size(); ++i) {
        // Widened intermediate: align up (lossless), add, then rescale back.
        const wide_t sum = (wide_t(a.raw[i]) << sa) + (wide_t(b.raw[i]) << sb);
        out.raw[i] = rescale_wide(sum, common_fl, out_params);
    }
    return out;
}

QTensor concat_int(const std::vector<const QTensor*>& inputs, int axis) {
    if (inputs.empty()) throw ShapeError("concat_int: no inputs");
    const QuantParams p = inputs[0]->params;
    for (const QTensor* t : inputs)
        if (t->params != p)
            throw ContractError("concat_int: inputs do not share one quantization format");

    std::vector<int64_t> shape = inputs[0]->shape;
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ShapeError("concat_int: axis out of range");
    for (size_t i = 1; i < inputs.size(); ++i) shape[axis] += inputs[i]->shape[axis];

    QTensor out = QTensor::zeros(shape, p);
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= shape[d];
    int64_t tail = 1;
    for (size_t d = axis + 1; d < shape.size(); ++d) tail *= shape[d];

    int64_t* dst = out.raw.data();
    for (int64_t oi = 0; oi < outer; ++oi)
        for (const QTensor* t : inputs) {
            const int64_t block = t->shape[axis] * tail;
            const int64_t* src = t->raw.data() + oi * block;
            std::copy(src, src + block, dst);
            dst += block;
        }
    return out;
}

QTensor relu_int(const QTensor& x) {
    QTensor out = x;
    for (int64_t& v : out.raw) v = v < 0 ? 0 : v;
    return out;
}

QTensor leaky_relu_int(const QTensor& x, const QuantConst& slope, QuantParams out_params) {
    QTensor out = QTensor::zeros(x.shape, out_params);
    const int neg_fl = x.params.fl + slope.params.fl;
    for (size_t i = 0; i < x.raw.size(); ++i) {
        const int64_t r = x.raw[i];
        out.raw[i] = r >= 0 ? rescale_wide(r, x.params.fl, out_params)
                            : rescale_wide(wide_t(r) * wide_t(slope.raw), neg_fl, out_params);
    }
    return out;
}

QTensor hardswish_int(const QTensor& x, const QuantConst& sixth, QuantParams out_params) {
    const int fl = x.params.fl;
    if (fl < 0)
        throw ContractError("hardswish_int: input fl must be nonnegative so x+3 is on-grid");
    if (x.params.wl + fl + 3 + sixth.params.wl > 120)
        throw ContractError("hardswish_int: intermediate exceeds the 128-bit emulation range");
    const wide_t three = wide_t(3) << fl;
    const wide_t six = wide_t(6) << fl;
    const int prod_fl = fl + fl + sixth.params.fl;
    QTensor out = QTensor::zeros(x.shape, out_params);
    for (size_t i = 0; i < x.raw.size(); ++i) {
        wide_t t = wide_t(x.raw[i]) + three;
        if (t < 0) t = 0;
        if (t > six) t = six;
        const wide_t prod = wide_t(x.raw[i]) * t * wide_t(sixth.raw);
        out.raw[i] = rescale_wide(prod, prod_fl, out_params);
    }
    return out;
}

QTensor maxpool_int(const QTensor& x, const Attrs& a) {
    const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int64_t oh = conv_out_dim(h, a.kernel_h, a.stride_h, a.pad_h);
    const int64_t ow = conv_out_dim(w, a.kernel_w, a.stride_w, a.pad_w);
    QTensor out = QTensor::zeros({n, c, oh, ow}, x.params);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t yo = 0; yo < oh; ++yo)
                for (int64_t xo = 0; xo < ow; ++xo) {
                    bool seen = false;
                    int64_t best = 0;
                    for (int ki = 0; ki < a.kernel_h; ++ki) {
                        const int64_t yi = yo * a.stride_h - a.pad_h + ki;
                        if (yi < 0 || yi >= h) continue; // padding never wins
                        for (int kj = 0; kj < a.kernel_w; ++kj) {
                            const int64_t xi = xo * a.stride_w - a.pad_w + kj;
                            if (xi < 0 || xi >= w) continue;
                            const int64_t v = x.raw[((ni * c + ci) * h + yi) * w + xi];
                            if (!seen || v > best) best = v;
                            seen = true;
                        }
                    }
                    out.raw[((ni * c + ci) * oh + yo) * ow + xo] = best;
                }
    return out;
}

QTensor upsample_int(const QTensor& x, int scale) {
    const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int s = scale;
    QTensor out = QTensor::zeros({n, c, h * s, w * s}, x.params);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t y = 0; y < h * s; ++y)
                for (int64_t xx = 0; xx < w * s; ++xx)
                    out.raw[((ni * c + ci) * h * s + y) * w * s + xx] =
                        x.raw[((ni * c + ci) * h + y / s) * w + xx / s];
    return out;
}

QTensor spatial_sum_int(const QTensor& x, QuantParams sum_params) {
    if (x.shape.size() != 4) throw ShapeError("spatial_sum_int expects NCHW input");
    if (sum_params.fl != x.params.fl)
        throw ContractError("spatial_sum_int: sum must keep the input fl");
    const int64_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    QTensor out = QTensor::zeros({n, c}, sum_params);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            wide_t acc = 0;
            for (int64_t i = 0; i < hw; ++i) acc += x.raw[(ni * c + ci) * hw + i];
            out.raw[ni * c + ci] = rescale_wide(acc, x.params.fl, sum_params);
        }
    return out;
}

QTensor mul_const_int(const QTensor& x, const QuantConst& c, QuantParams out_params) {
    QTensor out = QTensor::zeros(x.shape, out_params);
    const int prod_fl = x.params.fl + c.params.fl;
    for (size_t i = 0; i < x.raw.size(); ++i)
        out.raw[i] = rescale_wide(wide_t(x.raw[i]) * wide_t(c.raw), prod_fl, out_params);
    return out;
}

namespace {

QTensor transpose_to_cols(const QTensor& x) {
    // (N, F) activations to a (F, N) column matrix for the MAC kernel.
    const int64_t n = x.shape[0];
    const int64_t f = x.numel() / n;
    QTensor cols = QTensor::zeros({f, n}, x.params);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t fi = 0; fi < f; ++fi) cols.raw[fi * n + ni] = x.raw[ni * f + fi];
    return cols;
}

QTensor reshape_matmul_output(const QTensor& mm, int64_t n, int64_t o, int64_t oh, int64_t ow) {
    QTensor out = QTensor::zeros({n, o, oh, ow}, mm.params);
    const int64_t m = n * oh * ow;
    for (int64_t oi = 0; oi < o; ++oi)
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t p = 0; p < oh * ow; ++p)
                out.raw[(ni * o + oi) * oh * ow + p] = mm.raw[oi * m + ni * oh * ow + p];
    return out;
}

const QuantConst& require_qconst(const Node& n) {
    if (!n.attrs.qconst)
        throw ContractError("node '" + n.id + "' has no quantized constant; run the pipeline first");
    return *n.attrs.qconst;
}

} // namespace

RunResult run_quantized(const QuantizedModel& qm, const FTensor& input, const RunOptions& opts) {
    const Graph& g = qm.graph;
    if (g.inputs.size() != 1) throw ContractError("executor expects exactly one graph input");
    const QuantAnnotation& ann = qm.annotation;
    for (const Node& n : g.nodes) {
        auto it = ann.division_free.find(n.id);
        if (it == ann.division_free.end() || !it->second)
            throw ContractError("node '" + n.id + "' is not marked division-free; run the pipeline first");
    }

    RunResult result;
    OverflowReport report;

    std::map<std::string, QTensor> vals;
    const std::string& in_name = g.inputs[0].name;
    vals[in_name] = quantize_tensor(input, ann.params_of(in_name));

    auto qw = [&](const std::string& name) -> const QTensor& { return qm.qweight(name); };

    for (const Node* n : topo_order(g)) {
        const Attrs& a = n->attrs;
        const QuantParams out_p = ann.params_of(n->output);
        QTensor out;
        switch (n->kind) {
            case NodeKind::Conv2D:
            case NodeKind::Linear: {
                const QTensor& x = vals.at(n->inputs[0]);
                const QTensor& w = qw(n->inputs[1]);
                const QTensor* bias = n->inputs.size() == 3 ? &qw(n->inputs[2]) : nullptr;

                QTensor cols, w2d;
                int64_t on = 0, oo = 0, ohh = 1, oww = 1;
                if (n->kind == NodeKind::Conv2D) {
                    const int kh = static_cast<int>(w.shape[2]), kw = static_cast<int>(w.shape[3]);
                    cols = im2col(x, kh, kw, a.stride_h, a.stride_w, a.pad_h, a.pad_w);
                    w2d = QTensor{{w.shape[0], w.numel() / w.shape[0]}, w.raw, w.params};
                    on = x.shape[0];
                    oo = w.shape[0];
                    ohh = conv_out_dim(x.shape[2], kh, a.stride_h, a.pad_h);
                    oww = conv_out_dim(x.shape[3], kw, a.stride_w, a.pad_w);
                } else {
                    cols = transpose_to_cols(x);
                    w2d = w;
                    on = x.shape[0];
                    oo = w.shape[0];
                }

                NodeOverflow ovf;
                ovf.node_id = n->id;
                AccumulatorSpec spec;
                if (opts.detect) {
                    int guard = opts.guard_bits_override;
                    if (guard < 0 && qm.guard_bits >= 0) guard = qm.guard_bits;
                    if (guard < 0) {
                        auto it = ann.guard_bits.find(n->id);
                        guard = it != ann.guard_bits.end() ? it->second : 0;
                    }
                    spec = AccumulatorSpec::for_widths(x.params.wl, w.params.wl, guard);
                }
                QTensor mm = conv2d_int(cols, w2d, bias, out_p, opts.detect ? &spec : nullptr,
                                        opts.detect ? &ovf : nullptr);
                if (opts.detect) report.nodes.push_back(ovf);

                out = n->kind == NodeKind::Conv2D ? reshape_matmul_output(mm, on, oo, ohh, oww)
                                                  : QTensor{{on, oo}, transpose_to_cols(mm).raw, mm.params};
                break;
            }
            case NodeKind::ReLU: {
                const QTensor& x = vals.at(n->inputs[0]);
                if (out_p != x.params)
                    throw ContractError("ReLU '" + n->id + "' must preserve its input format");
                out = relu_int(x);
                break;
            }
            case NodeKind::LeakyReLU:
                out = leaky_relu_int(vals.at(n->inputs[0]), require_qconst(*n), out_p);
                break;
            case NodeKind::HardSwish:
                out = hardswish_int(vals.at(n->inputs[0]), require_qconst(*n), out_p);
                break;
            case NodeKind::MaxPool2D: {
                const QTensor& x = vals.at(n->inputs[0]);
                if (out_p != x.params)
                    throw ContractError("MaxPool2D '" + n->id + "' must preserve its input format");
                out = maxpool_int(x, a);
                break;
            }
            case NodeKind::UpsampleNearest: {
                const QTensor& x = vals.at(n->inputs[0]);
                if (out_p != x.params)
                    throw ContractError("UpsampleNearest '" + n->id + "' must preserve its input format");
                out = upsample_int(x, a.scale);
                break;
            }
            case NodeKind::SpatialSum:
                out = spatial_sum_int(vals.at(n->inputs[0]), out_p);
                break;
            case NodeKind::Mul:
                out = mul_const_int(vals.at(n->inputs[0]), require_qconst(*n), out_p);
                break;
            case NodeKind::Add: {
                const QTensor& x = vals.at(n->inputs[0]);
                const QTensor& y = vals.at(n->inputs[1]);
                out = add_int(x, y, ann.add_strategy, out_p);
                break;
            }
            case NodeKind::Concat: {
                std::vector<const QTensor*> ins;
                for (const std::string& name : Graph::data_inputs(*n)) ins.push_back(&vals.at(name));
                out = concat_int(ins, a.axis);
                if (out.params != out_p)
                    throw ContractError("Concat '" + n->id + "' output format disagrees with its inputs");
                break;
            }
            case NodeKind::BatchNorm2D:
            case NodeKind::GlobalAvgPool:
                throw ContractError("node '" + n->id + "' (" + to_string(n->kind) +
                                    ") is not integer-realizable; run the pipeline first");
        }
        vals[n->output] = std::move(out);
    }

    if (g.outputs.size() != 1) throw ContractError("executor expects exactly one graph output");
    result.output_q = vals.at(g.outputs[0]);
    result.output = dequantize_tensor(result.output_q);
    if (opts.detect) result.overflow = std::move(report);
    if (opts.trace) result.trace = std::move(vals);
    return result;
}

} // namespace fxemu
