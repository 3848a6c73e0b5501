#include "fxemu/cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "fxemu/engine.hpp"
#include "fxemu/model_io.hpp"
#include "fxemu/pipeline.hpp"
#include "fxemu/refexec.hpp"

namespace fxemu {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int thread_count() {
    const char* env = std::getenv("FXEMU_THREADS");
    if (!env || !*env) return static_cast<int>(std::thread::hardware_concurrency());
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (!end || *end != '\0' || v < 1)
        throw ConfigError("FXEMU_THREADS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<int>(v);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
    os << text;
}

json report_to_json(const PassReport& r) {
    json fl = json::object();
    for (const auto& [t, ch] : r.fl_changes) fl[t] = {ch.first, ch.second};
    return {{"pass", r.pass_name},     {"removed", r.removed}, {"added", r.added},
            {"modified", r.modified},  {"fl_changes", fl},     {"warnings", r.warnings}};
}

json records_to_json(const std::vector<CalibRecord>& records) {
    json out = json::array();
    for (const CalibRecord& r : records)
        out.push_back({{"tensor", r.tensor},
                       {"max_abs", r.max_abs},
                       {"wl", r.params.wl},
                       {"fl", r.params.fl},
                       {"role", r.role}});
    return out;
}

json overflow_to_json(const OverflowReport& rep) {
    json nodes = json::array();
    for (const NodeOverflow& n : rep.nodes)
        nodes.push_back({{"node", n.node_id},
                         {"total_macs", n.total_macs},
                         {"overflow_count", n.overflow_count},
                         {"max_abs_acc", uwide_to_string(n.max_abs_acc)},
                         {"min_acc_bits", n.min_acc_bits()},
                         {"acc_bits", n.acc_bits}});
    return {{"nodes", nodes}, {"total_overflows", rep.total_overflows()}};
}

struct Metrics {
    double max_abs_diff = 0.0;
    double mse = 0.0;
    double argmax_agreement = 1.0;
    int inputs = 0;

    void merge(const CompareResult& c) {
        max_abs_diff = std::max(max_abs_diff, c.max_abs_diff);
        if (inputs == 0) argmax_agreement = 0.0;
        mse += c.mse;
        argmax_agreement += c.argmax_agreement;
        ++inputs;
    }
    void finish() {
        if (inputs == 0) return;
        mse /= inputs;
        argmax_agreement /= inputs;
    }
    json to_json() const {
        return {{"max_abs_diff", max_abs_diff},
                {"mse", mse},
                {"argmax_agreement", argmax_agreement},
                {"inputs", inputs}};
    }
    std::string text() const {
        std::ostringstream os;
        os << "inputs:           " << inputs << "\n"
           << "max |diff|:       " << max_abs_diff << "\n"
           << "mse:              " << mse << "\n"
           << "argmax agreement: " << argmax_agreement * 100.0 << "%\n";
        return os.str();
    }
};

Metrics run_metrics(const QuantizedModel& qm, const std::vector<FTensor>& inputs,
                    const std::vector<FTensor>& refs, const RunOptions& opts,
                    OverflowReport* agg) {
    Metrics metrics;
    for (size_t i = 0; i < inputs.size(); ++i) {
        RunResult r = run_quantized(qm, inputs[i], opts);
        metrics.merge(compare(r.output, refs[i]));
        if (agg && r.overflow) {
            for (const NodeOverflow& n : r.overflow->nodes) {
                NodeOverflow* slot = nullptr;
                for (NodeOverflow& existing : agg->nodes)
                    if (existing.node_id == n.node_id) slot = &existing;
                if (!slot) {
                    agg->nodes.push_back(n);
                } else {
                    slot->total_macs += n.total_macs;
                    slot->overflow_count += n.overflow_count;
                    slot->max_abs_acc = std::max(slot->max_abs_acc, n.max_abs_acc);
                }
            }
        }
    }
    metrics.finish();
    return metrics;
}

std::vector<FTensor> reference_outputs(const Model& m, const std::vector<FTensor>& inputs) {
    std::vector<FTensor> refs;
    refs.reserve(inputs.size());
    for (const FTensor& in : inputs) refs.push_back(run_fp32(m, in));
    return refs;
}

// Values from --config are defaults; explicit flags win.
struct ConfigFile {
    json values = json::object();

    void load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file '" + path + "'");
        try {
            is >> values;
        } catch (const json::exception& e) {
            throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
        }
    }
    template <typename T>
    void apply(const CLI::Option* opt, const char* key, T& target) const {
        if (opt->count() > 0 || !values.contains(key)) return;
        try {
            target = values.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type");
        }
    }
};

struct QuantizeFlags {
    std::string model, calib, out;
    std::string run_dir = "fxemu_run";
    std::string strategy = "min-fl";
    std::string config_path;
    int wl = 12;
    int wl_activation = -1;
    int wl_weight = -1;
    int wl_bias = 0;
    int fl_activation_offset = 0;
    int guard_bits = -1;
};

PipelineConfig to_pipeline_config(const QuantizeFlags& f) {
    PipelineConfig cfg;
    cfg.wl.wl_weight = f.wl_weight > 0 ? f.wl_weight : f.wl;
    cfg.wl.wl_activation = f.wl_activation > 0 ? f.wl_activation : f.wl;
    cfg.wl.wl_bias = f.wl_bias;
    cfg.wl.fl_internal_offset = f.fl_activation_offset;
    cfg.guard_bits = f.guard_bits;
    auto s = add_strategy_from_string(f.strategy);
    if (!s) throw ConfigError("unknown add strategy '" + f.strategy + "'");
    cfg.strategy = *s;
    return cfg;
}

json config_echo(const PipelineConfig& cfg) {
    return {{"wl_weight", cfg.wl.wl_weight},
            {"wl_activation", cfg.wl.wl_activation},
            {"wl_bias", cfg.wl.wl_bias},
            {"fl_activation_offset", cfg.wl.fl_internal_offset},
            {"add_strategy", to_string(cfg.strategy)},
            {"guard_bits", cfg.guard_bits}};
}

fs::path prepare_run_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

int cmd_quantize(const QuantizeFlags& flags) {
    const PipelineConfig cfg = to_pipeline_config(flags);
    Model model = load_model(flags.model);
    const std::vector<FTensor> calib = load_tensors(flags.calib);

    const auto t0 = Clock::now();
    PipelineResult result = quantize_pipeline(std::move(model), calib, cfg);
    const double pipeline_ms = ms_since(t0);
    export_quantized(result.model, flags.out);

    const fs::path dir = prepare_run_dir(flags.run_dir);
    json manifest = {{"command", "quantize"},
                     {"model", flags.model},
                     {"calib", flags.calib},
                     {"out", flags.out},
                     {"config", config_echo(cfg)},
                     {"pass_reports", json::array()},
                     {"calib_records", records_to_json(result.calib_records)},
                     {"timings_ms", {{"pipeline", pipeline_ms}}}};
    std::string passes_text;
    for (const PassReport& r : result.pass_reports) {
        manifest["pass_reports"].push_back(report_to_json(r));
        passes_text += r.text();
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "passes.txt", passes_text);

    std::cout << passes_text;
    std::cout << "quantized model written to " << flags.out << " (pipeline " << pipeline_ms
              << " ms)\n";
    return 0;
}

struct RunFlags {
    std::string model, inputs;
    std::string run_dir = "fxemu_run";
    std::string config_path;
    bool detect = false;
    int guard_bits = -1;
};

int cmd_run(const RunFlags& flags) {
    const QuantizedModel qm = load_quantized(flags.model);
    const std::vector<FTensor> inputs = load_tensors(flags.inputs);
    if (inputs.empty()) throw ConfigError("input tensor file is empty");

    const std::vector<FTensor> refs = reference_outputs(Model{qm.graph, qm.weights}, inputs);

    RunOptions plain;
    plain.guard_bits_override = flags.guard_bits;
    const auto t0 = Clock::now();
    const Metrics metrics = run_metrics(qm, inputs, refs, plain, nullptr);
    const double plain_ms = ms_since(t0);

    json timings = {{"run_plain", plain_ms}};
    OverflowReport agg;
    double detect_ms = 0.0;
    if (flags.detect) {
        RunOptions detect = plain;
        detect.detect = true;
        const auto t1 = Clock::now();
        run_metrics(qm, inputs, refs, detect, &agg);
        detect_ms = ms_since(t1);
        timings["run_detect"] = detect_ms;

        // Mode invariance: detection may never perturb the numbers.
        for (const FTensor& in : inputs) {
            const RunResult a = run_quantized(qm, in, plain);
            const RunResult b = run_quantized(qm, in, detect);
            if (a.output_q.raw != b.output_q.raw)
                throw ContractError("detect mode changed numeric outputs");
        }
    }

    const fs::path dir = prepare_run_dir(flags.run_dir);
    json manifest = {{"command", "run"},
                     {"model", flags.model},
                     {"inputs", flags.inputs},
                     {"guard_bits_override", flags.guard_bits},
                     {"detect_overflow", flags.detect},
                     {"metrics", metrics.to_json()},
                     {"timings_ms", timings}};
    if (flags.detect) manifest["overflow"] = overflow_to_json(agg);
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "metrics.txt", metrics.text());

    std::cout << metrics.text();
    if (flags.detect) {
        write_text(dir / "overflow.txt", agg.text());
        std::cout << agg.text();
        std::cout << "plain " << plain_ms << " ms, detect " << detect_ms << " ms\n";
    }
    return 0;
}

struct SweepFlags {
    std::string model, calib, eval;
    std::string run_dir = "fxemu_run";
    std::string strategy = "min-fl";
    std::string config_path;
    int wl_min = 6;
    int wl_max = 16;
    int fl_activation_offset = 0;
};

int cmd_sweep(const SweepFlags& flags) {
    if (flags.wl_min < 2 || flags.wl_max > 24 || flags.wl_min > flags.wl_max)
        throw ConfigError("sweep range must satisfy 2 <= wl-min <= wl-max <= 24");
    const Model model = load_model(flags.model);
    const std::vector<FTensor> calib = load_tensors(flags.calib);
    const std::vector<FTensor> eval = load_tensors(flags.eval);
    if (eval.empty()) throw ConfigError("evaluation tensor file is empty");

    // WL-independent reference: the fused FP32 model before any constant
    // quantization.
    Model fused = model;
    distribute_bn_over_concat(fused);
    fuse_conv_bn(fused);
    const std::vector<FTensor> refs = reference_outputs(fused, eval);

    const int points = flags.wl_max - flags.wl_min + 1;
    std::vector<Metrics> rows(points);
    std::vector<std::string> errors(points);

    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= points) return;
            try {
                QuantizeFlags qf;
                qf.wl = flags.wl_min + i;
                qf.fl_activation_offset = flags.fl_activation_offset;
                qf.strategy = flags.strategy;
                const PipelineConfig cfg = to_pipeline_config(qf);
                PipelineResult r = quantize_pipeline(model, calib, cfg);
                rows[i] = run_metrics(r.model, eval, refs, RunOptions{}, nullptr);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int threads = std::min(points, std::max(1, thread_count()));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    for (int i = 0; i < points; ++i)
        if (!errors[i].empty())
            throw PipelineError("sweep point WL=" + std::to_string(flags.wl_min + i) +
                                " failed: " + errors[i]);

    std::ostringstream table;
    table << "WL   max|diff|      mse            argmax%\n";
    json record = json::array();
    for (int i = 0; i < points; ++i) {
        const int wl = flags.wl_min + i;
        table.width(4);
        table << std::left << wl << " ";
        table.width(14);
        table << std::left << rows[i].max_abs_diff << " ";
        table.width(14);
        table << std::left << rows[i].mse << " ";
        table << rows[i].argmax_agreement * 100.0 << "\n";
        json row = rows[i].to_json();
        row["wl"] = wl;
        record.push_back(row);
    }

    const fs::path dir = prepare_run_dir(flags.run_dir);
    json manifest = {{"command", "sweep"},
                     {"model", flags.model},
                     {"calib", flags.calib},
                     {"eval", flags.eval},
                     {"wl_min", flags.wl_min},
                     {"wl_max", flags.wl_max},
                     {"fl_activation_offset", flags.fl_activation_offset},
                     {"add_strategy", flags.strategy},
                     {"threads", threads},
                     {"sweep", record}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "sweep.txt", table.str());
    write_text(dir / "sweep.json", record.dump(2) + "\n");

    std::cout << table.str();
    return 0;
}

struct FixtureFlags {
    std::string name;
    std::string out_dir = ".";
    uint64_t seed = kDefaultFixtureSeed;
    int calib_count = 16;
    int eval_count = 32;
};

int cmd_fixture(const FixtureFlags& flags) {
    const Model m = build_fixture(flags.name, flags.seed);
    const fs::path dir = prepare_run_dir(flags.out_dir);
    const fs::path model_path = dir / (flags.name + ".fxm");
    save_model(m, model_path.string());
    save_tensors(make_inputs(m, flags.calib_count, flags.seed + 1, -2.0, 2.0),
                 (dir / "calib.fxt").string());
    save_tensors(make_inputs(m, flags.eval_count, flags.seed + 2, -2.0, 2.0),
                 (dir / "eval.fxt").string());
    std::cout << "wrote " << model_path.string() << ", calib.fxt (" << flags.calib_count
              << "), eval.fxt (" << flags.eval_count << ")\n";
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"bit-exact fixed-point emulator for divider-free integer inference"};
    app.require_subcommand(1);

    QuantizeFlags qf;
    CLI::App* quantize = app.add_subcommand("quantize", "run the six-step quantization pipeline");
    quantize->add_option("model", qf.model, "FP32 model (.fxm)")->required();
    quantize->add_option("calib", qf.calib, "calibration tensors (.fxt)")->required();
    auto* q_out = quantize->add_option("--out", qf.out, "output quantized model (.fxq)");
    auto* q_wl = quantize->add_option("--wl", qf.wl, "base word length");
    auto* q_wla = quantize->add_option("--wl-activation", qf.wl_activation, "activation word length");
    auto* q_wlw = quantize->add_option("--wl-weight", qf.wl_weight, "weight word length");
    auto* q_wlb = quantize->add_option("--wl-bias", qf.wl_bias, "bias word length (0 = derived)");
    auto* q_off = quantize->add_option("--fl-activation-offset", qf.fl_activation_offset,
                                       "extra WL/FL for activation-internal constants");
    auto* q_strat = quantize->add_option("--add-strategy", qf.strategy, "min-fl | align-max");
    auto* q_guard = quantize->add_option("--guard-bits", qf.guard_bits,
                                         "global guard bits (-1 = per-node ceil(log2 K))");
    auto* q_dir = quantize->add_option("--run-dir", qf.run_dir, "directory for manifest and reports");
    quantize->add_option("--config", qf.config_path, "JSON config mirroring the flags");

    RunFlags rf;
    CLI::App* run = app.add_subcommand("run", "execute a quantized model in the integer domain");
    run->add_option("model", rf.model, "quantized model (.fxq)")->required();
    run->add_option("inputs", rf.inputs, "input tensors (.fxt)")->required();
    run->add_flag("--detect-overflow", rf.detect, "count MAC accumulator excursions");
    auto* r_guard = run->add_option("--guard-bits", rf.guard_bits, "override guard bits");
    auto* r_dir = run->add_option("--run-dir", rf.run_dir, "directory for manifest and reports");
    run->add_option("--config", rf.config_path, "JSON config mirroring the flags");

    SweepFlags sf;
    CLI::App* sweep = app.add_subcommand("sweep", "quantize+run across a word-length range");
    sweep->add_option("model", sf.model, "FP32 model (.fxm)")->required();
    sweep->add_option("calib", sf.calib, "calibration tensors (.fxt)")->required();
    sweep->add_option("eval", sf.eval, "evaluation tensors (.fxt)")->required();
    auto* s_min = sweep->add_option("--wl-min", sf.wl_min, "first word length");
    auto* s_max = sweep->add_option("--wl-max", sf.wl_max, "last word length");
    auto* s_off = sweep->add_option("--fl-activation-offset", sf.fl_activation_offset,
                                    "extra WL/FL for activation-internal constants");
    auto* s_strat = sweep->add_option("--add-strategy", sf.strategy, "min-fl | align-max");
    auto* s_dir = sweep->add_option("--run-dir", sf.run_dir, "directory for manifest and reports");
    sweep->add_option("--config", sf.config_path, "JSON config mirroring the flags");

    FixtureFlags ff;
    CLI::App* fixture = app.add_subcommand("fixture", "materialize a seeded fixture model");
    fixture->add_option("name", ff.name, "tiny_cnn | resnet_block | csp_concat_bn")->required();
    fixture->add_option("--out-dir", ff.out_dir, "output directory");
    fixture->add_option("--seed", ff.seed, "fixture seed");
    fixture->add_option("--calib-count", ff.calib_count, "calibration inputs to generate");
    fixture->add_option("--eval-count", ff.eval_count, "evaluation inputs to generate");

    try {
        app.parse(argc, argv);

        if (quantize->parsed()) {
            if (!qf.config_path.empty()) {
                ConfigFile cf;
                cf.load(qf.config_path);
                cf.apply(q_out, "out", qf.out);
                cf.apply(q_wl, "wl", qf.wl);
                cf.apply(q_wla, "wl-activation", qf.wl_activation);
                cf.apply(q_wlw, "wl-weight", qf.wl_weight);
                cf.apply(q_wlb, "wl-bias", qf.wl_bias);
                cf.apply(q_off, "fl-activation-offset", qf.fl_activation_offset);
                cf.apply(q_strat, "add-strategy", qf.strategy);
                cf.apply(q_guard, "guard-bits", qf.guard_bits);
                cf.apply(q_dir, "run-dir", qf.run_dir);
            }
            if (qf.out.empty()) throw ConfigError("quantize needs --out (or 'out' in --config)");
            return cmd_quantize(qf);
        }
        if (run->parsed()) {
            if (!rf.config_path.empty()) {
                ConfigFile cf;
                cf.load(rf.config_path);
                cf.apply(r_guard, "guard-bits", rf.guard_bits);
                cf.apply(r_dir, "run-dir", rf.run_dir);
                if (cf.values.contains("detect-overflow") && !rf.detect)
                    rf.detect = cf.values["detect-overflow"].get<bool>();
            }
            return cmd_run(rf);
        }
        if (sweep->parsed()) {
            if (!sf.config_path.empty()) {
                ConfigFile cf;
                cf.load(sf.config_path);
                cf.apply(s_min, "wl-min", sf.wl_min);
                cf.apply(s_max, "wl-max", sf.wl_max);
                cf.apply(s_off, "fl-activation-offset", sf.fl_activation_offset);
                cf.apply(s_strat, "add-strategy", sf.strategy);
                cf.apply(s_dir, "run-dir", sf.run_dir);
            }
            return cmd_sweep(sf);
        }
        if (fixture->parsed()) return cmd_fixture(ff);
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.category()) << "): " << e.what() << "\n";
        switch (e.category()) {
            case ErrorCategory::Config: return 2;
            case ErrorCategory::Contract: return 4;
            case ErrorCategory::Manifest:
            case ErrorCategory::Version:
            case ErrorCategory::Blob:
            case ErrorCategory::Validation: return 5;
            default: return 3;
        }
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace fxemu
