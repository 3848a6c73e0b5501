#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fxemu/engine.hpp"
#include "fxemu/model_io.hpp"
#include "fxemu/pipeline.hpp"
#include "fxemu/refexec.hpp"

namespace py = pybind11;
using namespace fxemu;

namespace {

FTensor ftensor_from_array(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a) throw py::type_error("expected an array convertible to float32");
    FTensor t;
    t.shape.assign(a.shape(), a.shape() + a.ndim());
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

py::array ftensor_to_array(const FTensor& t) {
    py::array_t<float> a(t.shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

py::array qtensor_to_array(const QTensor& t) {
    py::array_t<int64_t> a(t.shape);
    std::copy(t.raw.begin(), t.raw.end(), a.mutable_data());
    return a;
}

std::vector<FTensor> tensors_from_list(const std::vector<py::array>& arrays) {
    std::vector<FTensor> out;
    out.reserve(arrays.size());
    for (const py::array& a : arrays) out.push_back(ftensor_from_array(a));
    return out;
}

PipelineConfig make_config(int wl, int wl_activation, int wl_weight, int wl_bias,
                           int fl_activation_offset, const std::string& add_strategy,
                           int guard_bits) {
    PipelineConfig cfg;
    cfg.wl.wl_weight = wl_weight > 0 ? wl_weight : wl;
    cfg.wl.wl_activation = wl_activation > 0 ? wl_activation : wl;
    cfg.wl.wl_bias = wl_bias;
    cfg.wl.fl_internal_offset = fl_activation_offset;
    cfg.guard_bits = guard_bits;
    auto s = add_strategy_from_string(add_strategy);
    if (!s) throw ConfigError("unknown add strategy '" + add_strategy + "'");
    cfg.strategy = *s;
    return cfg;
}

py::dict overflow_to_dict(const OverflowReport& rep) {
    py::list nodes;
    for (const NodeOverflow& n : rep.nodes) {
        py::dict d;
        d["node"] = n.node_id;
        d["total_macs"] = n.total_macs;
        d["overflow_count"] = n.overflow_count;
        d["max_abs_acc"] = uwide_to_string(n.max_abs_acc);
        d["min_acc_bits"] = n.min_acc_bits();
        d["acc_bits"] = n.acc_bits;
        nodes.append(d);
    }
    py::dict out;
    out["nodes"] = nodes;
    out["total_overflows"] = rep.total_overflows();
    out["text"] = rep.text();
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "bit-exact fixed-point quantization emulator";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(PyExc_RuntimeError,
                            (std::string(to_string(e.category())) + ": " + e.what()).c_str());
        }
    });

    py::class_<QuantParams>(m, "QuantParams")
        .def(py::init([](int wl, int fl) { return QuantParams::checked(wl, fl); }), py::arg("wl"),
             py::arg("fl"))
        .def_readonly("wl", &QuantParams::wl)
        .def_readonly("fl", &QuantParams::fl)
        .def("__repr__", [](const QuantParams& p) {
            return "QuantParams(wl=" + std::to_string(p.wl) + ", fl=" + std::to_string(p.fl) + ")";
        });

    m.def(
        "quantize_value",
        [](double x, int wl, int fl) { return quantize_raw(x, QuantParams::checked(wl, fl)); },
        py::arg("x"), py::arg("wl"), py::arg("fl"),
        "clamp(round_half_away_from_zero(x * 2^fl)) in the signed wl-bit range");
    m.def(
        "dequantize_value",
        [](int64_t raw, int wl, int fl) { return dequantize(raw, QuantParams::checked(wl, fl)); },
        py::arg("raw"), py::arg("wl"), py::arg("fl"), "raw * 2^-fl");
    m.def(
        "rescale_value",
        [](int64_t raw, int wl, int fl, int to_wl, int to_fl) {
            return rescale(FixedScalar{raw, QuantParams::checked(wl, fl)},
                           QuantParams::checked(to_wl, to_fl))
                .raw;
        },
        py::arg("raw"), py::arg("wl"), py::arg("fl"), py::arg("to_wl"), py::arg("to_fl"));

    m.def(
        "quantize_array",
        [](const py::array& x, int wl, int fl) {
            return qtensor_to_array(quantize_tensor(ftensor_from_array(x), QuantParams::checked(wl, fl)));
        },
        py::arg("x"), py::arg("wl"), py::arg("fl"));
    m.def(
        "dequantize_array",
        [](const py::array& raw, int wl, int fl) {
            auto a = py::array_t<int64_t, py::array::c_style | py::array::forcecast>::ensure(raw);
            if (!a) throw py::type_error("expected an integer array");
            QTensor q;
            q.shape.assign(a.shape(), a.shape() + a.ndim());
            q.raw.assign(a.data(), a.data() + a.size());
            q.params = QuantParams::checked(wl, fl);
            return ftensor_to_array(dequantize_tensor(q));
        },
        py::arg("raw"), py::arg("wl"), py::arg("fl"));

    py::class_<Model>(m, "Model")
        .def_property_readonly("input_shape",
                               [](const Model& mm) { return mm.graph.inputs.at(0).shape; })
        .def_property_readonly("node_ids",
                               [](const Model& mm) {
                                   std::vector<std::string> ids;
                                   for (const Node& n : mm.graph.nodes) ids.push_back(n.id);
                                   return ids;
                               })
        .def("run_fp32",
             [](const Model& mm, const py::array& x) {
                 return ftensor_to_array(run_fp32(mm, ftensor_from_array(x)));
             })
        .def("save", [](const Model& mm, const std::string& path) { save_model(mm, path); });

    py::class_<QuantizedModel>(m, "QuantizedModel")
        .def_property_readonly("input_shape",
                               [](const QuantizedModel& qm) { return qm.graph.inputs.at(0).shape; })
        .def(
            "params_of",
            [](const QuantizedModel& qm, const std::string& tensor) {
                return qm.annotation.params_of(tensor);
            },
            py::arg("tensor"))
        .def(
            "run",
            [](const QuantizedModel& qm, const py::array& x, bool detect_overflow, int guard_bits) {
                RunOptions opts;
                opts.detect = detect_overflow;
                opts.guard_bits_override = guard_bits;
                RunResult r = run_quantized(qm, ftensor_from_array(x), opts);
                py::object report = py::none();
                if (r.overflow) report = overflow_to_dict(*r.overflow);
                return py::make_tuple(ftensor_to_array(r.output), report);
            },
            py::arg("x"), py::arg("detect_overflow") = false, py::arg("guard_bits") = -1,
            "integer-domain inference; returns (output, overflow_report_or_None)")
        .def(
            "run_raw",
            [](const QuantizedModel& qm, const py::array& x) {
                RunResult r = run_quantized(qm, ftensor_from_array(x));
                return py::make_tuple(qtensor_to_array(r.output_q), r.output_q.params);
            },
            py::arg("x"), "integer-domain inference; returns (raw int64 array, QuantParams)")
        .def("run_fp32_reference",
             [](const QuantizedModel& qm, const py::array& x) {
                 return ftensor_to_array(run_fp32(Model{qm.graph, qm.weights}, ftensor_from_array(x)));
             })
        .def("save", [](const QuantizedModel& qm, const std::string& path) {
            export_quantized(qm, path);
        });

    m.def("build_fixture", &build_fixture, py::arg("name"), py::arg("seed") = kDefaultFixtureSeed);
    m.def("fixture_names", &fixture_names);
    m.def("load_model", &load_model, py::arg("path"));
    m.def("load_quantized", &load_quantized, py::arg("path"));

    m.def(
        "quantize",
        [](const Model& model, const std::vector<py::array>& calib, int wl, int wl_activation,
           int wl_weight, int wl_bias, int fl_activation_offset, const std::string& add_strategy,
           int guard_bits) {
            const PipelineConfig cfg = make_config(wl, wl_activation, wl_weight, wl_bias,
                                                   fl_activation_offset, add_strategy, guard_bits);
            return quantize_pipeline(model, tensors_from_list(calib), cfg).model;
        },
        py::arg("model"), py::arg("calib"), py::arg("wl") = 12, py::arg("wl_activation") = -1,
        py::arg("wl_weight") = -1, py::arg("wl_bias") = 0, py::arg("fl_activation_offset") = 0,
        py::arg("add_strategy") = "min-fl", py::arg("guard_bits") = -1,
        "run the full quantization pipeline and return the quantized model");

    m.def(
        "compare",
        [](const py::array& a, const py::array& b) {
            const CompareResult c = compare(ftensor_from_array(a), ftensor_from_array(b));
            py::dict d;
            d["max_abs_diff"] = c.max_abs_diff;
            d["mse"] = c.mse;
            d["argmax_agreement"] = c.argmax_agreement;
            return d;
        },
        py::arg("a"), py::arg("b"));
}
