#include <cmath>

#include "doctest.h"
#include "fxemu/calib.hpp"
#include "fxemu/model_io.hpp"
#include "fxemu/passes.hpp"
#include "fxemu/refexec.hpp"
#include "test_util.hpp"

using namespace fxemu;

namespace {

// Slow reference: scan the whole plausible FL range.
int brute_force_fl(double max_abs, int wl) {
    if (max_abs == 0.0) return wl - 1;
    const double hi = std::ldexp(1.0, wl - 1);
    int best = -2000;
    for (int fl = -1100; fl <= 1100 + 64; ++fl)
        if (std::round(std::ldexp(max_abs, fl)) < hi) best = fl;
    return best;
}

Model fused_fixture(const std::string& name) {
    Model m = build_fixture(name);
    distribute_bn_over_concat(m);
    fuse_conv_bn(m);
    return m;
}

} // namespace

TEST_CASE("choose_fl worked examples") {
    CHECK(choose_fl(0.0, 8).fl == 7);
    CHECK(choose_fl(1.0, 8).fl == 6);  // 127/64 >= 1.0, 127/128 < 1.0
    CHECK(choose_fl(20.8, 8).fl == 2); // 127/4 >= 20.8, 127/8 < 20.8
}

TEST_CASE("choose_fl agrees with a brute-force search") {
    std::mt19937_64 rng(21);
    for (int iter = 0; iter < 400; ++iter) {
        const int wl = 2 + int(rng() % 20);
        const double max_abs = std::ldexp(oracle::uniform(rng, 0.1, 4.0), int(rng() % 40) - 20);
        CAPTURE(wl);
        CAPTURE(max_abs);
        CHECK(choose_fl(max_abs, wl).fl == brute_force_fl(max_abs, wl));
    }
}

TEST_CASE("choose_fl is monotone in max_abs") {
    std::mt19937_64 rng(23);
    for (int iter = 0; iter < 200; ++iter) {
        const int wl = 2 + int(rng() % 16);
        const double a = oracle::uniform(rng, 1e-4, 50.0);
        const double b = a * oracle::uniform(rng, 1.0, 8.0);
        CHECK(choose_fl(b, wl).fl <= choose_fl(a, wl).fl);
    }
}

TEST_CASE("internal constant params follow the activation-offset rule") {
    WlConfig cfg;
    cfg.wl_activation = 10;
    cfg.fl_internal_offset = 3;
    const QuantParams base = choose_fl(0.1, 10);
    const QuantParams p = internal_const_params(0.1, cfg);
    CHECK(p.wl == 13); // Table-2 shape: WL 10 raised by the FL offset
    CHECK(p.fl == base.fl + 3);
}

TEST_CASE("calibrate assigns weight params from their values") {
    const Model m = fused_fixture("tiny_cnn");
    WlConfig cfg;
    cfg.wl_weight = 8;
    cfg.wl_activation = 8;
    const auto inputs = make_inputs(m, 4, 99, -2, 2);
    const CalibResult r = calibrate(m, inputs, cfg);

    for (const Node& n : m.graph.nodes) {
        if (n.kind != NodeKind::Conv2D && n.kind != NodeKind::Linear) continue;
        double mx = 0;
        for (float v : m.weight(n.inputs[1]).data) mx = std::max(mx, std::abs(double(v)));
        CHECK(r.annotation.params_of(n.inputs[1]) == choose_fl(mx, 8));
    }
}

TEST_CASE("no weight saturates at its assigned params") {
    for (const std::string& name : fixture_names()) {
        const Model m = fused_fixture(name);
        WlConfig cfg;
        cfg.wl_weight = 10;
        cfg.wl_activation = 10;
        const CalibResult r = calibrate(m, make_inputs(m, 4, 7, -2, 2), cfg);
        for (const Node& n : m.graph.nodes) {
            if (n.kind != NodeKind::Conv2D && n.kind != NodeKind::Linear) continue;
            const QuantParams p = r.annotation.params_of(n.inputs[1]);
            for (float v : m.weight(n.inputs[1]).data) {
                // Clamp must not engage: the rounded value is already in range.
                const double rounded = std::round(std::ldexp(double(v), p.fl));
                CHECK(rounded <= double(p.hi()));
                CHECK(rounded >= double(p.lo()));
            }
        }
    }
}

TEST_CASE("degenerate all-zero calibration") {
    Model m;
    m.graph.inputs.push_back({"x", {1, 1, 2, 2}});
    m.graph.weights.push_back({"w", {1, 1, 1, 1}});
    m.graph.weights.push_back({"b", {1}});
    m.weights["w"] = FTensor::from_values({1, 1, 1, 1}, {0});
    m.weights["b"] = FTensor::from_values({1}, {0});
    Node conv;
    conv.id = "conv";
    conv.kind = NodeKind::Conv2D;
    conv.inputs = {"x", "w", "b"};
    conv.output = "y";
    m.graph.nodes.push_back(conv);
    m.graph.outputs = {"y"};

    WlConfig cfg;
    cfg.wl_weight = cfg.wl_activation = 8;
    const CalibResult r = calibrate(m, {FTensor::zeros({1, 1, 2, 2})}, cfg);
    CHECK(r.annotation.params_of("x").fl == 7);
    CHECK(r.annotation.params_of("y").fl == 7);
}

TEST_CASE("transparent nodes inherit their input format") {
    const Model m = fused_fixture("tiny_cnn");
    WlConfig cfg;
    const CalibResult r = calibrate(m, make_inputs(m, 4, 11, -2, 2), cfg);
    // pool1 is a MaxPool2D fed by act1.
    CHECK(r.annotation.params_of("pool1.out") == r.annotation.params_of("act1.out"));
}

TEST_CASE("bias params sit at the MAC product scale, capped by precision") {
    const Model m = fused_fixture("resnet_block");
    WlConfig cfg;
    cfg.wl_weight = 9;
    cfg.wl_activation = 11;
    const CalibResult r = calibrate(m, make_inputs(m, 4, 13, -2, 2), cfg);
    for (const Node& n : m.graph.nodes) {
        if (n.kind != NodeKind::Conv2D || n.inputs.size() != 3) continue;
        const QuantParams bp = r.annotation.params_of(n.inputs[2]);
        CHECK(bp.wl == cfg.bias_wl());
        double mx = 0;
        for (float v : m.weight(n.inputs[2]).data) mx = std::max(mx, std::abs(double(v)));
        const int prod_fl = r.annotation.params_of(n.inputs[0]).fl +
                            r.annotation.params_of(n.inputs[1]).fl;
        CHECK(bp.fl == std::min(prod_fl, choose_fl(mx, cfg.bias_wl()).fl));
        // At these modest word lengths the cap is inactive.
        CHECK(bp.fl == prod_fl);
    }
}

TEST_CASE("calibration error paths") {
    const Model m = fused_fixture("tiny_cnn");
    WlConfig cfg;
    CHECK_THROWS_AS(calibrate(m, {}, cfg), ConfigError);

    // Explosive weights push activations to infinity in FP32.
    Model hot = fused_fixture("tiny_cnn");
    for (float& v : hot.weights["conv1.w"].data) v = 1e30f;
    for (float& v : hot.weights["conv2.w"].data) v = 1e30f;
    try {
        calibrate(hot, make_inputs(hot, 1, 3, 1, 2), cfg);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
}

TEST_CASE("no activation saturates on the calibration set itself") {
    const Model m = fused_fixture("csp_concat_bn");
    WlConfig cfg;
    cfg.wl_weight = cfg.wl_activation = 8;
    const auto inputs = make_inputs(m, 6, 17, -2, 2);
    const CalibResult r = calibrate(m, inputs, cfg);
    for (const FTensor& in : inputs) {
        const auto trace = run_fp32_trace(m, in);
        for (const auto& [tensor, value] : trace) {
            const QuantParams p = r.annotation.params_of(tensor);
            for (float v : value.data) {
                const double rounded = std::round(std::ldexp(double(v), p.fl));
                CHECK(rounded <= double(p.hi()));
                CHECK(rounded >= double(p.lo()));
            }
        }
    }
}

TEST_CASE("guard bit defaults are ceil(log2 K)") {
    const Model m = fused_fixture("tiny_cnn");
    WlConfig cfg;
    const CalibResult r = calibrate(m, make_inputs(m, 2, 5, -2, 2), cfg);
    CHECK(r.annotation.guard_bits.at("conv1") == 5); // K = 3*3*3 = 27 -> 5
    CHECK(r.annotation.guard_bits.at("conv2") == 7); // K = 8*3*3 = 72 -> 7
    CHECK(r.annotation.guard_bits.at("fc") == 3);    // K = 8 -> 3
}
