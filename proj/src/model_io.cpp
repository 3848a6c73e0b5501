#include "fxemu/model_io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace fxemu {

using nlohmann::json;

namespace {

// ---- low-level little-endian I/O ----------------------------------------

void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ManifestError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

struct Cursor {
    const std::string& bytes;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw BlobError(std::string("file truncated while reading ") + what);
    }
    void read(void* p, size_t n, const char* what) {
        need(n, what);
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        read(&v, 4, what);
        return v;
    }
};

// ---- graph <-> json ------------------------------------------------------

json attrs_to_json(const Node& n) {
    json a = json::object();
    switch (n.kind) {
        case NodeKind::Conv2D:
            a["stride"] = {n.attrs.stride_h, n.attrs.stride_w};
            a["pad"] = {n.attrs.pad_h, n.attrs.pad_w};
            break;
        case NodeKind::MaxPool2D:
            a["kernel"] = {n.attrs.kernel_h, n.attrs.kernel_w};
            a["stride"] = {n.attrs.stride_h, n.attrs.stride_w};
            a["pad"] = {n.attrs.pad_h, n.attrs.pad_w};
            break;
        case NodeKind::BatchNorm2D:
            a["eps"] = n.attrs.eps;
            break;
        case NodeKind::LeakyReLU:
            a["negative_slope"] = n.attrs.negative_slope;
            break;
        case NodeKind::Concat:
            a["axis"] = n.attrs.axis;
            break;
        case NodeKind::UpsampleNearest:
            a["scale"] = n.attrs.scale;
            break;
        case NodeKind::Mul:
            a["value"] = n.attrs.value;
            break;
        default:
            break;
    }
    if (n.attrs.qconst) {
        a["qconst"] = {{"raw", n.attrs.qconst->raw},
                       {"wl", n.attrs.qconst->params.wl},
                       {"fl", n.attrs.qconst->params.fl}};
    }
    return a;
}

void attrs_from_json(const json& a, Node& n) {
    if (a.contains("stride")) {
        n.attrs.stride_h = a["stride"][0];
        n.attrs.stride_w = a["stride"][1];
    }
    if (a.contains("pad")) {
        n.attrs.pad_h = a["pad"][0];
        n.attrs.pad_w = a["pad"][1];
    }
    if (a.contains("kernel")) {
        n.attrs.kernel_h = a["kernel"][0];
        n.attrs.kernel_w = a["kernel"][1];
    }
    if (a.contains("eps")) n.attrs.eps = a["eps"];
    if (a.contains("negative_slope")) n.attrs.negative_slope = a["negative_slope"];
    if (a.contains("axis")) n.attrs.axis = a["axis"];
    if (a.contains("scale")) n.attrs.scale = a["scale"];
    if (a.contains("value")) n.attrs.value = a["value"];
    if (a.contains("qconst")) {
        const json& q = a["qconst"];
        n.attrs.qconst = QuantConst{
            q.at("raw").get<int64_t>(),
            QuantParams::checked(q.at("wl").get<int>(), q.at("fl").get<int>())};
    }
}

json graph_to_json(const Graph& g) {
    json j;
    j["inputs"] = json::array();
    for (const TensorInfo& t : g.inputs) j["inputs"].push_back({{"name", t.name}, {"shape", t.shape}});
    j["outputs"] = g.outputs;
    j["nodes"] = json::array();
    for (const Node& n : g.nodes) {
        j["nodes"].push_back({{"id", n.id},
                              {"kind", to_string(n.kind)},
                              {"inputs", n.inputs},
                              {"output", n.output},
                              {"attrs", attrs_to_json(n)}});
    }
    return j;
}

Graph graph_from_json(const json& j) {
    Graph g;
    try {
        for (const json& t : j.at("inputs"))
            g.inputs.push_back({t.at("name").get<std::string>(),
                                t.at("shape").get<std::vector<int64_t>>()});
        g.outputs = j.at("outputs").get<std::vector<std::string>>();
        for (const json& nj : j.at("nodes")) {
            Node n;
            n.id = nj.at("id").get<std::string>();
            const std::string kind = nj.at("kind").get<std::string>();
            auto k = node_kind_from_string(kind);
            if (!k) throw ManifestError("unknown node kind '" + kind + "' in node '" + n.id + "'");
            n.kind = *k;
            n.inputs = nj.at("inputs").get<std::vector<std::string>>();
            n.output = nj.at("output").get<std::string>();
            attrs_from_json(nj.at("attrs"), n);
            g.nodes.push_back(std::move(n));
        }
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed graph manifest: ") + e.what());
    }
    return g;
}

// ---- container helpers ---------------------------------------------------

json parse_container(const std::string& path, const char magic[8], const char* version_key,
                     const char* expected_version, Cursor& cur) {
    char m[8];
    cur.read(m, 8, "magic");
    if (std::memcmp(m, magic, 8) != 0)
        throw ManifestError("'" + path + "' is not in the expected container format");
    const uint32_t mlen = cur.u32("manifest length");
    cur.need(mlen, "manifest");
    json manifest;
    try {
        manifest = json::parse(cur.bytes.substr(cur.pos, mlen));
    } catch (const json::exception& e) {
        throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
    }
    cur.pos += mlen;
    const std::string version = manifest.value(version_key, std::string());
    if (version != expected_version)
        throw VersionError("'" + path + "': format version '" + version + "', expected '" +
                           expected_version + "'");
    return manifest;
}

struct BlobWriter {
    std::string bytes;

    // Returns the byte offset the values were placed at.
    uint64_t put_f32(const std::vector<float>& v) {
        const uint64_t off = bytes.size();
        bytes.resize(bytes.size() + v.size() * 4);
        std::memcpy(bytes.data() + off, v.data(), v.size() * 4);
        return off;
    }
    uint64_t put_i32(const std::vector<int64_t>& v) {
        const uint64_t off = bytes.size();
        bytes.resize(bytes.size() + v.size() * 4);
        for (size_t i = 0; i < v.size(); ++i) {
            const int32_t x = static_cast<int32_t>(v[i]);
            std::memcpy(bytes.data() + off + i * 4, &x, 4);
        }
        return off;
    }
};

std::vector<float> blob_f32(const std::string& blob, uint64_t off, int64_t count,
                            const std::string& name) {
    if (off + uint64_t(count) * 4 > blob.size())
        throw BlobError("weight '" + name + "' extends past the end of the blob");
    std::vector<float> v(static_cast<size_t>(count));
    std::memcpy(v.data(), blob.data() + off, static_cast<size_t>(count) * 4);
    return v;
}

std::vector<int64_t> blob_i32(const std::string& blob, uint64_t off, int64_t count,
                              const std::string& name) {
    if (off + uint64_t(count) * 4 > blob.size())
        throw BlobError("quantized weight '" + name + "' extends past the end of the blob");
    std::vector<int64_t> v(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        int32_t x;
        std::memcpy(&x, blob.data() + off + uint64_t(i) * 4, 4);
        v[static_cast<size_t>(i)] = x;
    }
    return v;
}

void write_container(const std::string& path, const char magic[8], const json& manifest,
                     const std::string& mid, const std::string& blob) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ManifestError("cannot write '" + path + "'");
    write_bytes(os, magic, 8);
    const std::string mstr = manifest.dump();
    write_u32(os, static_cast<uint32_t>(mstr.size()));
    write_bytes(os, mstr.data(), mstr.size());
    if (!mid.empty()) write_bytes(os, mid.data(), mid.size());
    write_bytes(os, blob.data(), blob.size());
    if (!os) throw ManifestError("write failed for '" + path + "'");
}

void check_model_invariants(const Model& m) {
    auto violations = validate(m.graph);
    if (!violations.empty())
        throw ManifestError("model graph is malformed: " + violations[0].where + ": " +
                            violations[0].what);
    for (const TensorInfo& t : m.graph.weights) {
        auto it = m.weights.find(t.name);
        if (it == m.weights.end()) throw BlobError("weight '" + t.name + "' missing from blob index");
        if (it->second.numel() != shape_numel(t.shape))
            throw BlobError("weight '" + t.name + "' element count mismatch");
        check_finite(it->second, t.name);
    }
}

} // namespace

// ---- FP32 model (.fxm) ---------------------------------------------------

void save_model(const Model& m, const std::string& path) {
    BlobWriter blob;
    json windex = json::array();
    for (const TensorInfo& t : m.graph.weights) {
        const FTensor& w = m.weight(t.name);
        windex.push_back({{"name", t.name}, {"shape", w.shape}, {"offset", blob.put_f32(w.data)}});
    }
    json manifest = {{"format_version", kModelVersion},
                     {"graph", graph_to_json(m.graph)},
                     {"weights", windex}};
    write_container(path, kModelMagic, manifest, "", blob.bytes);
}

Model load_model(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor cur{bytes};
    const json manifest = parse_container(path, kModelMagic, "format_version", kModelVersion, cur);
    const std::string blob = bytes.substr(cur.pos);

    Model m;
    m.graph = graph_from_json(manifest.at("graph"));
    try {
        for (const json& w : manifest.at("weights")) {
            const std::string name = w.at("name").get<std::string>();
            const std::vector<int64_t> shape = w.at("shape").get<std::vector<int64_t>>();
            const uint64_t off = w.at("offset").get<uint64_t>();
            m.graph.weights.push_back({name, shape});
            m.weights[name] = FTensor{shape, blob_f32(blob, off, shape_numel(shape), name)};
        }
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed weight index: ") + e.what());
    }
    check_model_invariants(m);
    return m;
}

// ---- quantized model (.fxq) ----------------------------------------------

void export_quantized(const QuantizedModel& qm, const std::string& path) {
    BlobWriter blob;
    json windex = json::array();
    for (const TensorInfo& t : qm.graph.weights) {
        auto it = qm.weights.find(t.name);
        if (it == qm.weights.end()) throw BlobError("weight '" + t.name + "' missing");
        windex.push_back(
            {{"name", t.name}, {"shape", it->second.shape}, {"offset", blob.put_f32(it->second.data)}});
    }
    json qindex = json::array();
    for (const TensorInfo& t : qm.graph.weights) {
        auto it = qm.qweights.find(t.name);
        if (it == qm.qweights.end()) continue; // only MAC operands are quantized
        qindex.push_back(
            {{"name", t.name}, {"shape", it->second.shape}, {"offset", blob.put_i32(it->second.raw)}});
    }

    // QuantParams table: names in the manifest, (wl, fl) as i16 pairs after it.
    json qnames = json::array();
    std::string table;
    {
        uint32_t count = static_cast<uint32_t>(qm.annotation.tensor_params.size());
        table.resize(4 + size_t(count) * 4);
        std::memcpy(table.data(), &count, 4);
        size_t i = 0;
        for (const auto& [name, p] : qm.annotation.tensor_params) {
            qnames.push_back(name);
            const int16_t wl = static_cast<int16_t>(p.wl);
            const int16_t fl = static_cast<int16_t>(p.fl);
            std::memcpy(table.data() + 4 + i * 4, &wl, 2);
            std::memcpy(table.data() + 4 + i * 4 + 2, &fl, 2);
            ++i;
        }
    }

    json guard = json::object();
    for (const auto& [id, bits] : qm.annotation.guard_bits) guard[id] = bits;
    json divfree = json::object();
    for (const auto& [id, free] : qm.annotation.division_free) divfree[id] = free;

    json manifest = {{"format_version", kQuantVersion},
                     {"graph", graph_to_json(qm.graph)},
                     {"weights", windex},
                     {"qweights", qindex},
                     {"qparams", qnames},
                     {"annotation",
                      {{"add_strategy", to_string(qm.annotation.add_strategy)},
                       {"guard_bits", guard},
                       {"division_free", divfree}}},
                     {"wl_config",
                      {{"wl_weight", qm.wl_config.wl_weight},
                       {"wl_activation", qm.wl_config.wl_activation},
                       {"wl_bias", qm.wl_config.wl_bias},
                       {"fl_internal_offset", qm.wl_config.fl_internal_offset}}},
                     {"guard_bits_global", qm.guard_bits}};
    write_container(path, kQuantMagic, manifest, table, blob.bytes);
}

QuantizedModel load_quantized(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor cur{bytes};
    const json manifest = parse_container(path, kQuantMagic, "format_version", kQuantVersion, cur);

    QuantizedModel qm;
    qm.graph = graph_from_json(manifest.at("graph"));

    std::vector<std::string> qnames;
    try {
        qnames = manifest.at("qparams").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed qparams index: ") + e.what());
    }
    const uint32_t count = cur.u32("qparams count");
    if (count != qnames.size())
        throw BlobError("qparams table count disagrees with the manifest index");
    for (const std::string& name : qnames) {
        int16_t wl, fl;
        cur.read(&wl, 2, "qparams wl");
        cur.read(&fl, 2, "qparams fl");
        try {
            qm.annotation.tensor_params[name] = QuantParams::checked(wl, fl);
        } catch (const DomainError& e) {
            throw ValidationError("qparams for '" + name + "': " + e.what());
        }
    }
    const std::string blob = bytes.substr(cur.pos);

    try {
        for (const json& w : manifest.at("weights")) {
            const std::string name = w.at("name").get<std::string>();
            const std::vector<int64_t> shape = w.at("shape").get<std::vector<int64_t>>();
            qm.graph.weights.push_back({name, shape});
            qm.weights[name] =
                FTensor{shape, blob_f32(blob, w.at("offset").get<uint64_t>(), shape_numel(shape), name)};
        }
        for (const json& w : manifest.at("qweights")) {
            const std::string name = w.at("name").get<std::string>();
            const std::vector<int64_t> shape = w.at("shape").get<std::vector<int64_t>>();
            QTensor q;
            q.shape = shape;
            q.raw = blob_i32(blob, w.at("offset").get<uint64_t>(), shape_numel(shape), name);
            auto it = qm.annotation.tensor_params.find(name);
            if (it == qm.annotation.tensor_params.end())
                throw ValidationError("quantized weight '" + name + "' has no entry in the qparams table");
            q.params = it->second;
            for (int64_t r : q.raw)
                if (r < q.params.lo() || r > q.params.hi())
                    throw ValidationError("raw value " + std::to_string(r) + " in '" + name +
                                          "' is outside its declared wl=" + std::to_string(q.params.wl) +
                                          " range");
            qm.qweights[name] = std::move(q);
        }

        const json& ann = manifest.at("annotation");
        const std::string strategy = ann.at("add_strategy").get<std::string>();
        auto s = add_strategy_from_string(strategy);
        if (!s) throw ManifestError("unknown add strategy '" + strategy + "'");
        qm.annotation.add_strategy = *s;
        for (const auto& [id, bits] : ann.at("guard_bits").items())
            qm.annotation.guard_bits[id] = bits.get<int>();
        for (const auto& [id, free] : ann.at("division_free").items())
            qm.annotation.division_free[id] = free.get<bool>();

        const json& wc = manifest.at("wl_config");
        qm.wl_config.wl_weight = wc.at("wl_weight").get<int>();
        qm.wl_config.wl_activation = wc.at("wl_activation").get<int>();
        qm.wl_config.wl_bias = wc.at("wl_bias").get<int>();
        qm.wl_config.fl_internal_offset = wc.at("fl_internal_offset").get<int>();
        qm.guard_bits = manifest.at("guard_bits_global").get<int>();
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed quantized manifest: ") + e.what());
    }

    auto violations = validate(qm.graph);
    if (!violations.empty())
        throw ManifestError("quantized graph is malformed: " + violations[0].where + ": " +
                            violations[0].what);
    return qm;
}

// ---- tensor batches (.fxt) -----------------------------------------------

void save_tensors(const std::vector<FTensor>& tensors, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ManifestError("cannot write '" + path + "'");
    write_bytes(os, kTensorMagic, 8);
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const FTensor& t : tensors) {
        write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) write_u32(os, static_cast<uint32_t>(d));
        write_bytes(os, t.data.data(), t.data.size() * 4);
    }
}

std::vector<FTensor> load_tensors(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor cur{bytes};
    char m[8];
    cur.read(m, 8, "magic");
    if (std::memcmp(m, kTensorMagic, 8) != 0)
        throw ManifestError("'" + path + "' is not a tensor batch file");
    const uint32_t count = cur.u32("tensor count");
    std::vector<FTensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t ndim = cur.u32("ndim");
        if (ndim > 8) throw ManifestError("tensor rank " + std::to_string(ndim) + " is implausible");
        std::vector<int64_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = cur.u32("dim");
        const int64_t n = shape_numel(shape);
        FTensor t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<size_t>(n));
        cur.read(t.data.data(), static_cast<size_t>(n) * 4, "tensor data");
        check_finite(t, "tensor[" + std::to_string(i) + "]");
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace fxemu
