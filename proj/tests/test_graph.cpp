#include <algorithm>

#include "doctest.h"
#include "fxemu/graph.hpp"
#include "fxemu/model_io.hpp"
#include "fxemu/refexec.hpp"

using namespace fxemu;

namespace {

Node make(const std::string& id, NodeKind kind, std::vector<std::string> ins,
          const std::string& out) {
    Node n;
    n.id = id;
    n.kind = kind;
    n.inputs = std::move(ins);
    n.output = out;
    return n;
}

// conv -> {relu_a, relu_b} -> add
Graph diamond() {
    Graph g;
    g.inputs.push_back({"x", {1, 2, 4, 4}});
    g.weights.push_back({"w", {2, 2, 1, 1}});
    Node conv = make("conv", NodeKind::Conv2D, {"x", "w"}, "c");
    Node ra = make("ra", NodeKind::ReLU, {"c"}, "a");
    Node rb = make("rb", NodeKind::ReLU, {"c"}, "b");
    Node add = make("add", NodeKind::Add, {"a", "b"}, "y");
    // Deliberately out of order; topo_order has to untangle it.
    g.nodes = {add, rb, conv, ra};
    g.outputs = {"y"};
    return g;
}

} // namespace

TEST_CASE("topo_order basics") {
    SUBCASE("single node") {
        Graph g;
        g.inputs.push_back({"x", {1, 1, 2, 2}});
        g.nodes.push_back(make("r", NodeKind::ReLU, {"x"}, "y"));
        g.outputs = {"y"};
        const auto order = topo_order(g);
        REQUIRE(order.size() == 1);
        CHECK(order[0]->id == "r");
    }
    SUBCASE("diamond places the conv first and the add last") {
        const Graph g = diamond();
        const auto order = topo_order(g);
        REQUIRE(order.size() == 4);
        CHECK(order.front()->id == "conv");
        CHECK(order.back()->id == "add");
    }
    SUBCASE("cycle is rejected") {
        Graph g;
        g.inputs.push_back({"x", {1, 1, 2, 2}});
        g.nodes.push_back(make("a", NodeKind::Add, {"x", "u"}, "v"));
        g.nodes.push_back(make("b", NodeKind::ReLU, {"v"}, "u"));
        g.outputs = {"v"};
        CHECK_THROWS_AS(topo_order(g), GraphError);
    }
    SUBCASE("undefined tensor is reported as such") {
        Graph g;
        g.inputs.push_back({"x", {1}});
        g.nodes.push_back(make("r", NodeKind::ReLU, {"nope"}, "y"));
        g.outputs = {"y"};
        CHECK_THROWS_AS(topo_order(g), GraphError);
    }
}

TEST_CASE("find_join_points traces to FL-defining producers") {
    SUBCASE("linear chain has no joins") {
        const Model m = build_fixture("tiny_cnn");
        CHECK(find_join_points(m.graph).empty());
    }
    SUBCASE("resnet block: one Add fed by two layers") {
        const Model m = build_fixture("resnet_block");
        const auto joins = find_join_points(m.graph);
        REQUIRE(joins.size() == 1);
        CHECK(joins[0].kind == NodeKind::Add);
        REQUIRE(joins[0].producers.size() == 2);
        // relu1 is transparent: the skip path resolves to bn1.
        CHECK(joins[0].producers[0].node_id == "bn1");
        CHECK(joins[0].producers[1].node_id == "bn2");
    }
    SUBCASE("csp: one Concat fed by the two branch convs") {
        const Model m = build_fixture("csp_concat_bn");
        const auto joins = find_join_points(m.graph);
        REQUIRE(joins.size() == 1);
        CHECK(joins[0].kind == NodeKind::Concat);
        REQUIRE(joins[0].producers.size() == 2);
        CHECK(joins[0].producers[0].node_id == "convA");
        CHECK(joins[0].producers[1].node_id == "convB");
    }
}

// Structural invariance: a format-transparent node on a join edge must not
// change the producer set.
TEST_CASE("join tracing is invariant under inserted transparent nodes") {
    Model m = build_fixture("resnet_block");
    const auto before = find_join_points(m.graph);

    // Splice a maxpool-free transparent node (ReLU) onto the skip edge.
    Node* add = m.graph.find_node("add");
    Node extra = make("extra", NodeKind::ReLU, {add->inputs[0]}, "extra.out");
    add->inputs[0] = "extra.out";
    m.graph.nodes.push_back(extra);

    const auto after = find_join_points(m.graph);
    REQUIRE(after.size() == before.size());
    REQUIRE(after[0].producers.size() == before[0].producers.size());
    for (size_t i = 0; i < before[0].producers.size(); ++i)
        CHECK(after[0].producers[i] == before[0].producers[i]);
}

TEST_CASE("validate flags structural problems") {
    SUBCASE("fixtures are clean") {
        for (const std::string& name : fixture_names())
            CHECK(validate(build_fixture(name).graph).empty());
    }
    SUBCASE("concat with mismatched shapes") {
        Graph g;
        g.inputs.push_back({"x", {1, 2, 4, 4}});
        g.inputs.push_back({"y", {1, 2, 3, 3}});
        Node cat = make("cat", NodeKind::Concat, {"x", "y"}, "z");
        cat.attrs.axis = 1;
        g.nodes.push_back(cat);
        g.outputs = {"z"};
        CHECK(!validate(g).empty());
    }
    SUBCASE("undefined input tensor") {
        Graph g;
        g.inputs.push_back({"x", {1}});
        g.nodes.push_back(make("r", NodeKind::ReLU, {"ghost"}, "y"));
        g.outputs = {"y"};
        CHECK(!validate(g).empty());
    }
    SUBCASE("SSA violation: tensor defined twice") {
        Graph g;
        g.inputs.push_back({"x", {1, 1, 2, 2}});
        g.nodes.push_back(make("a", NodeKind::ReLU, {"x"}, "y"));
        g.nodes.push_back(make("b", NodeKind::ReLU, {"x"}, "y"));
        g.outputs = {"y"};
        CHECK(!validate(g).empty());
    }
    SUBCASE("LeakyReLU slope domain") {
        Graph g;
        g.inputs.push_back({"x", {1, 1, 2, 2}});
        Node n = make("l", NodeKind::LeakyReLU, {"x"}, "y");
        n.attrs.negative_slope = 1.5;
        g.nodes.push_back(n);
        g.outputs = {"y"};
        CHECK(!validate(g).empty());
    }
}

// Inferred shapes must agree with what the executor actually produces.
TEST_CASE("shape inference matches executor output shapes") {
    for (const std::string& name : fixture_names()) {
        const Model m = build_fixture(name);
        const auto shapes = infer_shapes(m.graph);
        FTensor input = FTensor::zeros(m.graph.inputs[0].shape);
        const auto trace = run_fp32_trace(m, input);
        for (const auto& [tensor, value] : trace) {
            CAPTURE(name);
            CAPTURE(tensor);
            CHECK(shapes.at(tensor) == value.shape);
        }
    }
}
