#include "fxemu/pipeline.hpp"

namespace fxemu {

PipelineResult quantize_pipeline(Model m, const std::vector<FTensor>& calib_inputs,
                                 const PipelineConfig& cfg) {
    cfg.wl.check();

    auto violations = validate(m.graph);
    if (!violations.empty())
        throw PipelineError("input graph is invalid: " + violations[0].where + ": " +
                            violations[0].what);

    PipelineResult result;
    int current = 1;
    static const char* kStepNames[] = {"",
                                       "layer fusion",
                                       "weight quantization",
                                       "calibration",
                                       "division removal",
                                       "FL adjustment",
                                       "output quantization"};
    try {
        // Step 1: fusion. Distribution first so concat-fed BNs become foldable.
        result.pass_reports.push_back(distribute_bn_over_concat(m));
        result.pass_reports.push_back(fuse_conv_bn(m));

        // Steps 2-3: weight statistics and calibration over the FP32
        // reference executor (pre-quantization weights).
        current = 3;
        CalibResult calib = calibrate(m, calib_inputs, cfg.wl);
        result.calib_records = std::move(calib.records);
        QuantAnnotation ann = std::move(calib.annotation);

        // Step 4: make every remaining operation realizable without division.
        current = 4;
        result.pass_reports.push_back(eliminate_division(m, ann, cfg.wl));

        // Step 5: align fixed-point formats at joins.
        current = 5;
        result.pass_reports.push_back(adjust_fl(m.graph, ann, cfg.strategy));

        // Step 6: freeze the integer model. Biases are quantized only now,
        // at the post-adjustment product scale; the executor realizes the
        // per-node output re-quantization this step names.
        current = 6;
        assign_bias_params(m, ann, cfg.wl);

        QuantizedModel qm;
        qm.graph = std::move(m.graph);
        qm.annotation = std::move(ann);
        qm.wl_config = cfg.wl;
        qm.guard_bits = cfg.guard_bits;
        for (const Node& n : qm.graph.nodes) {
            if (n.kind != NodeKind::Conv2D && n.kind != NodeKind::Linear) continue;
            for (size_t i = 1; i < n.inputs.size(); ++i) {
                const std::string& wname = n.inputs[i];
                qm.qweights[wname] =
                    quantize_tensor(m.weights.at(wname), qm.annotation.params_of(wname));
            }
        }
        qm.weights = std::move(m.weights);

        if (!qm.annotation.all_division_free())
            throw PipelineError("pipeline finished with division-bearing nodes left");
        result.model = std::move(qm);
        return result;
    } catch (const ConfigError&) {
        throw; // not a pass failure; keep the config category (and exit code)
    } catch (const Error& e) {
        throw PipelineError("step " + std::to_string(current) + " (" + kStepNames[current] +
                            "): " + e.what());
    }
}

} // namespace fxemu
