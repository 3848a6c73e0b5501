#include <cmath>

#include "doctest.h"
#include "fxemu/model_io.hpp"
#include "fxemu/refexec.hpp"
#include "test_util.hpp"

using namespace fxemu;

TEST_CASE("identity graph returns the input unchanged") {
    Model m;
    m.graph.inputs.push_back({"x", {1, 2, 2, 2}});
    m.graph.outputs = {"x"};
    std::mt19937_64 rng(1);
    const FTensor in = oracle::random_ftensor(rng, {1, 2, 2, 2}, -3, 3);
    CHECK(run_fp32(m, in).data == in.data);
}

TEST_CASE("batchnorm with unit statistics is the identity") {
    Model m;
    m.graph.inputs.push_back({"x", {1, 2, 2, 2}});
    const double eps = 1e-5;
    m.graph.weights = {{"g", {2}}, {"b", {2}}, {"mu", {2}}, {"var", {2}}};
    m.weights["g"] = FTensor::from_values({2}, {1, 1});
    m.weights["b"] = FTensor::from_values({2}, {0, 0});
    m.weights["mu"] = FTensor::from_values({2}, {0, 0});
    m.weights["var"] = FTensor::from_values({2}, {float(1.0 - eps), float(1.0 - eps)});
    Node bn;
    bn.id = "bn";
    bn.kind = NodeKind::BatchNorm2D;
    bn.inputs = {"x", "g", "b", "mu", "var"};
    bn.output = "y";
    bn.attrs.eps = eps;
    m.graph.nodes.push_back(bn);
    m.graph.outputs = {"y"};

    std::mt19937_64 rng(2);
    const FTensor in = oracle::random_ftensor(rng, {1, 2, 2, 2}, -3, 3);
    const FTensor out = run_fp32(m, in);
    for (size_t i = 0; i < in.data.size(); ++i)
        CHECK(std::abs(out.data[i] - in.data[i]) < 1e-6f);
}

// Hand-computed two-layer trace:
//   x = [[1,2,3],[4,5,6],[7,8,9]], conv k2 w=[[1,0],[0,1]] b=0.5
//   -> [[1+5+.5, 2+6+.5],[4+8+.5, 5+9+.5]] = [[6.5, 8.5],[12.5, 14.5]]
//   GAP -> (6.5+8.5+12.5+14.5)/4 = 10.5
TEST_CASE("two-layer forward matches a hand-computed trace") {
    Model m;
    m.graph.inputs.push_back({"x", {1, 1, 3, 3}});
    m.graph.weights = {{"w", {1, 1, 2, 2}}, {"b", {1}}};
    m.weights["w"] = FTensor::from_values({1, 1, 2, 2}, {1, 0, 0, 1});
    m.weights["b"] = FTensor::from_values({1}, {0.5f});
    Node conv;
    conv.id = "conv";
    conv.kind = NodeKind::Conv2D;
    conv.inputs = {"x", "w", "b"};
    conv.output = "c";
    m.graph.nodes.push_back(conv);
    Node gap;
    gap.id = "gap";
    gap.kind = NodeKind::GlobalAvgPool;
    gap.inputs = {"c"};
    gap.output = "y";
    m.graph.nodes.push_back(gap);
    m.graph.outputs = {"y"};

    const FTensor in = FTensor::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto trace = run_fp32_trace(m, in);
    CHECK(trace.at("c").data == std::vector<float>{6.5f, 8.5f, 12.5f, 14.5f});
    CHECK(trace.at("y").data == std::vector<float>{10.5f});
}

TEST_CASE("compare metrics") {
    const FTensor x = FTensor::from_values({2}, {1, 2});
    SUBCASE("identical tensors") {
        const CompareResult r = compare(x, x);
        CHECK(r.max_abs_diff == 0.0);
        CHECK(r.mse == 0.0);
        CHECK(r.argmax_agreement == 1.0);
    }
    SUBCASE("worked example") {
        const CompareResult r = compare(x, FTensor::from_values({2}, {1, 3}));
        CHECK(r.max_abs_diff == 1.0);
        CHECK(r.mse == 0.5);
        CHECK(r.argmax_agreement == 1.0); // both argmax at index 1
    }
    SUBCASE("per-row argmax agreement") {
        const FTensor a = FTensor::from_values({2, 2}, {1, 2, 5, 0});
        const FTensor b = FTensor::from_values({2, 2}, {1, 3, 0, 5});
        CHECK(compare(a, b).argmax_agreement == 0.5);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(compare(x, FTensor::from_values({3}, {1, 2, 3})), ShapeError);
    }
    SUBCASE("randomized pair against direct recomputation") {
        std::mt19937_64 rng(9);
        const FTensor a = oracle::random_ftensor(rng, {4, 5}, -2, 2);
        const FTensor b = oracle::random_ftensor(rng, {4, 5}, -2, 2);
        const CompareResult r = compare(a, b);
        double mx = 0, sq = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            const double d = double(a.data[i]) - double(b.data[i]);
            mx = std::max(mx, std::abs(d));
            sq += d * d;
        }
        CHECK(r.max_abs_diff == doctest::Approx(mx).epsilon(1e-12));
        CHECK(r.mse == doctest::Approx(sq / 20.0).epsilon(1e-12));
    }
}

TEST_CASE("reference execution is deterministic across runs") {
    const Model m = build_fixture("tiny_cnn");
    std::mt19937_64 rng(4);
    const FTensor in = oracle::random_ftensor(rng, m.graph.inputs[0].shape, -2, 2);
    const FTensor a = run_fp32(m, in);
    const FTensor b = run_fp32(m, in);
    CHECK(a.data == b.data); // bit-identical, fixed summation order
}
