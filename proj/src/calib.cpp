#include "fxemu/calib.hpp"

#include <algorithm>
#include <cmath>

#include "fxemu/refexec.hpp"

namespace fxemu {

QuantParams choose_fl(double max_abs, int wl) {
    QuantParams::checked(wl, 0);
    if (!(max_abs >= 0.0) || !std::isfinite(max_abs))
        throw DomainError("choose_fl: max_abs must be finite and nonnegative");
    if (max_abs == 0.0) return QuantParams{wl, wl - 1};

    int e;
    std::frexp(max_abs, &e); // max_abs = m * 2^e, m in [0.5, 1)
    const double bound = std::ldexp(1.0, wl - 1);
    auto fits = [&](int fl) {
        const double rounded = std::round(std::ldexp(max_abs, fl));
        return std::isfinite(rounded) && rounded < bound;
    };
    int fl = wl - e + 2; // above the feasible region by construction
    while (!fits(fl)) --fl;
    return QuantParams{wl, fl};
}

QuantParams internal_const_params(double value, const WlConfig& cfg) {
    const QuantParams base = choose_fl(std::abs(value), cfg.wl_activation);
    return QuantParams::checked(cfg.internal_wl(), base.fl + cfg.fl_internal_offset);
}

int64_t mac_depth(const Graph& g, const Node& n) {
    const TensorInfo* w = g.weight_info(n.inputs.at(1));
    if (!w) throw ContractError("node '" + n.id + "' has no weight shape for '" + n.inputs[1] + "'");
    if (n.kind == NodeKind::Conv2D) return w->shape[1] * w->shape[2] * w->shape[3];
    return w->shape[1]; // Linear in_features
}

void assign_bias_params(const Model& m, QuantAnnotation& ann, const WlConfig& cfg,
                        std::vector<CalibRecord>* records) {
    for (const Node& n : m.graph.nodes) {
        if ((n.kind != NodeKind::Conv2D && n.kind != NodeKind::Linear) || n.inputs.size() != 3)
            continue;
        const QuantParams& xp = ann.params_of(n.inputs[0]);
        const QuantParams& wp = ann.params_of(n.inputs[1]);
        double mx = 0.0;
        for (float v : m.weight(n.inputs[2]).data) mx = std::max(mx, std::abs(double(v)));
        // Bias values land in the accumulator at the product scale. The raw
        // must still fit bias_wl bits, so when fl_x + fl_w outruns the bias's
        // own precision the format caps there and the MAC kernel aligns the
        // bias upward with an exact left shift.
        const int prod_fl = xp.fl + wp.fl;
        const int fl = std::min(prod_fl, choose_fl(mx, cfg.bias_wl()).fl);
        const QuantParams bp = QuantParams::checked(cfg.bias_wl(), fl);
        ann.tensor_params[n.inputs[2]] = bp;
        if (records) records->push_back({n.inputs[2], mx, bp, "bias"});
    }
}

CalibResult calibrate(const Model& m, const std::vector<FTensor>& calib_inputs,
                      const WlConfig& cfg) {
    cfg.check();
    if (calib_inputs.empty()) throw ConfigError("calibration set is empty");

    CalibResult result;
    QuantAnnotation& ann = result.annotation;

    // Activation statistics from the FP32 reference path.
    std::map<std::string, double> max_abs;
    for (const FTensor& in : calib_inputs) {
        auto trace = run_fp32_trace(m, in);
        for (const auto& [name, t] : trace) {
            check_finite(t, name);
            double& mx = max_abs[name];
            for (float v : t.data) mx = std::max(mx, std::abs(double(v)));
        }
    }
    for (const auto& [name, mx] : max_abs) {
        ann.tensor_params[name] = choose_fl(mx, cfg.wl_activation);
        result.records.push_back({name, mx, ann.tensor_params[name], "activation"});
    }

    // Transparent nodes inherit their input format (max/copy never change it).
    for (const Node* n : topo_order(m.graph))
        if (is_fl_transparent(n->kind))
            ann.tensor_params[n->output] = ann.params_of(Graph::data_inputs(*n).front());

    // Weights from their values directly.
    for (const Node& n : m.graph.nodes) {
        if (n.kind != NodeKind::Conv2D && n.kind != NodeKind::Linear) continue;
        const std::string& wname = n.inputs.at(1);
        double mx = 0.0;
        for (float v : m.weight(wname).data) mx = std::max(mx, std::abs(double(v)));
        ann.tensor_params[wname] = choose_fl(mx, cfg.wl_weight);
        result.records.push_back({wname, mx, ann.tensor_params[wname], "weight"});
    }
    assign_bias_params(m, ann, cfg, &result.records);

    // Division-free flags: true unless the kind needs rewriting before it
    // is exactly realizable with integer add/sub/mul.
    for (const Node& n : m.graph.nodes) {
        const bool needs_rewrite =
            n.kind == NodeKind::BatchNorm2D || n.kind == NodeKind::GlobalAvgPool ||
            n.kind == NodeKind::HardSwish || n.kind == NodeKind::LeakyReLU;
        ann.division_free[n.id] = !needs_rewrite;
        if (n.kind == NodeKind::Conv2D || n.kind == NodeKind::Linear) {
            const int64_t k = mac_depth(m.graph, n);
            int bits = 0;
            while ((int64_t(1) << bits) < k) ++bits;
            ann.guard_bits[n.id] = bits; // default budget ceil(log2 K)
        }
    }
    return result;
}

} // namespace fxemu
