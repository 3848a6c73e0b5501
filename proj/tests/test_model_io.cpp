#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fxemu/engine.hpp"
#include "fxemu/model_io.hpp"
#include "fxemu/pipeline.hpp"
#include "test_util.hpp"

using namespace fxemu;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "fxemu_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

QuantizedModel pipeline_fixture(const std::string& name, int wl) {
    const Model m = build_fixture(name);
    PipelineConfig cfg;
    cfg.wl.wl_weight = cfg.wl.wl_activation = wl;
    return quantize_pipeline(m, make_inputs(m, 6, 55, -2, 2), cfg).model;
}

} // namespace

TEST_CASE("fixtures are deterministic and well formed") {
    for (const std::string& name : fixture_names()) {
        const Model a = build_fixture(name);
        const Model b = build_fixture(name);
        CHECK(validate(a.graph).empty());
        for (const auto& [wname, t] : a.weights) {
            REQUIRE(b.weights.count(wname) == 1);
            CHECK(t.data == b.weights.at(wname).data); // bit-identical across builds
        }
        // A different seed actually changes the weights.
        const Model c = build_fixture(name, kDefaultFixtureSeed + 1);
        bool any_diff = false;
        for (const auto& [wname, t] : a.weights)
            if (t.data != c.weights.at(wname).data) any_diff = true;
        CHECK(any_diff);
    }
    CHECK_THROWS_AS(build_fixture("nope"), ConfigError);
}

TEST_CASE("csp fixture contains the BN-after-concat motif") {
    const Model m = build_fixture("csp_concat_bn");
    const Node* bn = m.graph.find_node("bn");
    REQUIRE(bn != nullptr);
    const Node* producer = m.graph.producer_of(bn->inputs[0]);
    REQUIRE(producer != nullptr);
    CHECK(producer->kind == NodeKind::Concat);
}

TEST_CASE("model files round trip byte-exactly") {
    for (const std::string& name : fixture_names()) {
        const Model m = build_fixture(name);
        const fs::path p1 = tmp_file(name + ".fxm");
        const fs::path p2 = tmp_file(name + ".again.fxm");
        save_model(m, p1.string());
        const Model loaded = load_model(p1.string());
        save_model(loaded, p2.string());
        CHECK(slurp(p1) == slurp(p2));
        for (const auto& [wname, t] : m.weights) {
            const FTensor& l = loaded.weights.at(wname);
            CHECK(0 == std::memcmp(l.data.data(), t.data.data(), t.data.size() * 4));
        }
    }
}

TEST_CASE("quantized files round trip bit-exactly and re-run identically") {
    for (const std::string& name : fixture_names()) {
        const QuantizedModel qm = pipeline_fixture(name, 10);
        const fs::path p1 = tmp_file(name + ".fxq");
        const fs::path p2 = tmp_file(name + ".again.fxq");
        export_quantized(qm, p1.string());
        const QuantizedModel loaded = load_quantized(p1.string());
        export_quantized(loaded, p2.string());
        CHECK(slurp(p1) == slurp(p2));

        // A loaded model runs without re-calibration, bit-identically.
        const auto inputs = make_inputs(Model{qm.graph, qm.weights}, 3, 77, -2, 2);
        for (const FTensor& in : inputs) {
            const RunResult a = run_quantized(qm, in);
            const RunResult b = run_quantized(loaded, in);
            CHECK(a.output_q.raw == b.output_q.raw);
        }
    }
}

TEST_CASE("export size matches the index arithmetic") {
    const QuantizedModel qm = pipeline_fixture("tiny_cnn", 10);
    const fs::path p = tmp_file("size.fxq");
    export_quantized(qm, p.string());
    const std::string bytes = slurp(p);

    uint32_t mlen;
    std::memcpy(&mlen, bytes.data() + 8, 4);
    int64_t blob = 0;
    for (const auto& [name, t] : qm.weights) blob += t.numel() * 4;
    for (const auto& [name, t] : qm.qweights) blob += t.numel() * 4;
    const int64_t qtable = 4 + int64_t(qm.annotation.tensor_params.size()) * 4;
    CHECK(int64_t(bytes.size()) == 8 + 4 + int64_t(mlen) + qtable + blob);
}

TEST_CASE("tampered files are rejected with the documented categories") {
    const Model m = build_fixture("tiny_cnn");
    const fs::path good = tmp_file("good.fxm");
    save_model(m, good.string());
    const std::string bytes = slurp(good);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'Z';
        const fs::path p = tmp_file("badmagic.fxm");
        spit(p, bad);
        CHECK_THROWS_AS(load_model(p.string()), ManifestError);
    }
    SUBCASE("version mismatch") {
        std::string bad = bytes;
        const size_t pos = bad.find("fxemu.model.v1");
        REQUIRE(pos != std::string::npos);
        bad[pos + 13] = '9';
        const fs::path p = tmp_file("badversion.fxm");
        spit(p, bad);
        CHECK_THROWS_AS(load_model(p.string()), VersionError);
    }
    SUBCASE("unknown node kind") {
        std::string bad = bytes;
        const size_t pos = bad.find("Conv2D");
        REQUIRE(pos != std::string::npos);
        bad[pos] = 'K';
        const fs::path p = tmp_file("badkind.fxm");
        spit(p, bad);
        CHECK_THROWS_AS(load_model(p.string()), ManifestError);
    }
    SUBCASE("truncated blob") {
        const fs::path p = tmp_file("trunc.fxm");
        spit(p, bytes.substr(0, bytes.size() - 64));
        CHECK_THROWS_AS(load_model(p.string()), BlobError);
    }
    SUBCASE("malformed manifest JSON") {
        std::string bad = bytes;
        const size_t pos = bad.find("\"graph\"");
        REQUIRE(pos != std::string::npos);
        bad[pos] = '?';
        const fs::path p = tmp_file("badjson.fxm");
        spit(p, bad);
        CHECK_THROWS_AS(load_model(p.string()), ManifestError);
    }
}

TEST_CASE("out-of-range raw is a validation error") {
    QuantizedModel qm = pipeline_fixture("tiny_cnn", 8);
    // Tamper one stored raw beyond the wl=8 range; export does not
    // re-validate, the loader must.
    qm.qweights.at("conv1.w").raw[0] = 200;
    const fs::path p = tmp_file("tampered.fxq");
    export_quantized(qm, p.string());
    CHECK_THROWS_AS(load_quantized(p.string()), ValidationError);
}

TEST_CASE("tensor batches round trip") {
    std::mt19937_64 rng(88);
    std::vector<FTensor> batch;
    batch.push_back(oracle::random_ftensor(rng, {1, 3, 4, 4}, -2, 2));
    batch.push_back(oracle::random_ftensor(rng, {2, 5}, -1, 1));
    const fs::path p = tmp_file("batch.fxt");
    save_tensors(batch, p.string());
    const auto loaded = load_tensors(p.string());
    REQUIRE(loaded.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(loaded[i].shape == batch[i].shape);
        CHECK(loaded[i].data == batch[i].data);
    }
    CHECK_THROWS_AS(load_tensors((tmp_file("missing.fxt")).string()), ManifestError);
}
