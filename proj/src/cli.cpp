// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "tinyforge/bytes.hpp"
#include "tinyforge/codegen.hpp"
#include "tinyforge/dataset.hpp"
#include "tinyforge/graphopt.hpp"
#include "tinyforge/memplan.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/pack.hpp"
#include "tinyforge/pipeline.hpp"
#include "tinyforge/presets.hpp"
#include "tinyforge/prune.hpp"
#include "tinyforge/qat.hpp"
#include "tinyforge/refrun.hpp"

namespace tinyforge {

namespace {

struct KeyDef {
    std::string key;
    std::string flag;
    std::string def;
    std::string help;
    std::vector<std::string> commands;
    bool boolean = false;
};

const std::vector<std::string> kDataCmds{"train", "prune", "quantize", "run"};
const std::vector<std::string> kTrainCmds{"train", "prune", "quantize", "sweep"};

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> keys = {
        {"io.model", "--model", "", "input model bundle (.json/.bin stem)",
         {"prune", "quantize", "optimize", "pack", "plan", "emit", "run", "report", "train"}},
        {"io.out", "--out,-o", "", "output path",
         {"train", "prune", "quantize", "optimize", "pack", "plan", "emit", "report", "sweep"}},
        {"model.preset", "--preset", "mlp", "architecture when training from scratch", {"train"}},
        {"model.hidden", "--hidden", "32,32", "hidden widths of the mlp preset", {"train"}},
        {"data.source", "--data", "blobs", "blobs, idx, or a dataset bundle path", kDataCmds},
        {"data.images", "--images", "", "IDX image file (with --data idx)", kDataCmds},
        {"data.labels", "--labels", "", "IDX label file (with --data idx)", kDataCmds},
        {"data.samples", "--samples", "1000", "number of blob samples", {"train", "prune", "quantize", "run", "sweep"}},
        {"data.classes", "--classes", "2", "number of blob classes", {"train", "prune", "quantize", "run", "sweep"}},
        {"data.dims", "--dims", "2", "blob dimensionality", kDataCmds},
        {"data.seed", "--data-seed", "0", "blob generator seed", kDataCmds},
        {"data.test_fraction", "--test-fraction", "0.2", "held-out fraction",
         {"train", "prune", "quantize", "run", "sweep"}},
        {"train.lr", "--lr", "0.001", "learning rate", kTrainCmds},
        {"train.momentum", "--momentum", "0.9", "SGD momentum", kTrainCmds},
        {"train.batch_size", "--batch-size", "32", "minibatch size", kTrainCmds},
        {"train.epochs", "--epochs", "10", "training epochs", kTrainCmds},
        {"train.seed", "--seed", "0", "initialization and shuffling seed", {"train", "prune", "quantize"}},
        {"prune.mode", "--mode", "element", "element or structural", {"prune"}},
        {"prune.heuristic", "--heuristic", "level", "level, random, l1, l2, gradient, activation-zeros", {"prune"}},
        {"prune.kind", "--schedule", "agp", "agp or one-shot", {"prune"}},
        {"prune.s_f", "--target", "0.9", "final sparsity", {"prune"}},
        {"prune.s_i", "--initial", "0", "initial sparsity (agp)", {"prune"}},
        {"prune.t0", "--t0", "0", "first pruning epoch", {"prune"}},
        {"prune.n", "--steps", "5", "number of pruning steps", {"prune", "sweep"}},
        {"prune.dt", "--step-width", "1", "epochs between pruning steps", {"prune"}},
        {"quant.mode", "--mode", "ppq", "ppq or qat", {"quantize"}},
        {"quant.calib_samples", "--calib-samples", "256", "samples used to observe ranges", {"quantize", "sweep"}},
        {"quant.optimize", "--optimize", "false", "fold batch-norm before and fuse ReLU after quantizing", {"quantize"},
         true},
        {"pack.crs", "--crs", "auto", "auto, never or always", {"pack", "report"}},
        {"emit.plan", "--plan", "", "memory plan from the plan command", {"emit", "report"}},
        {"emit.weights", "--weights", "", "weight stream from the pack command", {"emit", "report"}},
        {"emit.name", "--name", "", "identifier prefix (default: model name)", {"emit"}},
        {"run.index", "--index", "-1", "run one test sample and print its output", {"run"}},
        {"run.backend", "--backend", "reference", "reference or blas", {"run"}},
        {"run.input", "--input", "", "raw little-endian input tensor file", {"run"}},
        {"run.output", "--output", "", "write the raw output tensor here", {"run"}},
        {"sweep.seeds", "--seeds", "0", "comma-separated seeds", {"sweep"}},
        {"sweep.modes", "--modes", "element,structural", "pruning modes", {"sweep"}},
        {"sweep.heuristics", "--heuristics", "level", "pruning heuristics", {"sweep"}},
        {"sweep.quant", "--quant", "f32,ppq", "f32, ppq, qat", {"sweep"}},
        {"sweep.targets", "--targets", "0,0.5,0.75,0.9,0.95,0.99", "pruning targets", {"sweep"}},
        {"sweep.hidden", "--hidden", "128,128", "hidden widths of the swept mlp", {"sweep"}},
        {"sweep.retrain_epochs", "--retrain-epochs", "10", "epochs of each pruning run", {"sweep"}},
        {"sweep.qat_epochs", "--qat-epochs", "3", "epochs of quantization-aware training", {"sweep"}},
    };
    return keys;
}

// Defaults that differ per command.
const std::map<std::string, std::map<std::string, std::string>>& command_defaults() {
    static const std::map<std::string, std::map<std::string, std::string>> d = {
        {"sweep", {{"train.lr", "0.01"}}},
    };
    return d;
}

bool applies(const KeyDef& k, const std::string& cmd) {
    return std::find(k.commands.begin(), k.commands.end(), cmd) != k.commands.end();
}

class Settings {
public:
    std::map<std::string, std::string> values;

    const std::string& str(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw Error("internal: setting '" + key + "' is not defined");
        return it->second;
    }
    bool has(const std::string& key) const { return !str(key).empty(); }

    double num(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } catch (const std::exception&) {
        }
        throw UsageError(key + ": expected a number, got '" + v + "'");
    }

    long long integer(const std::string& key) const {
        double d = num(key);
        if (d != static_cast<double>(static_cast<long long>(d))) throw UsageError(key + ": expected an integer");
        return static_cast<long long>(d);
    }

    std::size_t count(const std::string& key) const {
        auto v = integer(key);
        if (v < 0) throw UsageError(key + ": must not be negative");
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0" || v.empty()) return false;
        throw UsageError(key + ": expected true or false");
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> items;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item.erase(0, item.find_first_not_of(" \t"));
            item.erase(item.find_last_not_of(" \t") + 1);
            if (!item.empty()) items.push_back(item);
        }
        return items;
    }

    std::vector<double> numbers(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : list(key)) {
            try {
                std::size_t used = 0;
                double d = std::stod(item, &used);
                if (used != item.size()) throw std::invalid_argument(item);
                out.push_back(d);
            } catch (const std::exception&) {
                throw UsageError(key + ": '" + item + "' is not a number");
            }
        }
        return out;
    }

    const std::string& path(const std::string& key, const std::string& flag) const {
        if (!has(key)) throw UsageError(flag + " is required");
        return str(key);
    }
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

TrainConfig train_config(const Settings& s) {
    TrainConfig c;
    c.lr = s.num("train.lr");
    c.momentum = s.num("train.momentum");
    c.batch_size = s.count("train.batch_size");
    c.epochs = static_cast<int>(s.integer("train.epochs"));
    if (s.values.count("train.seed")) c.seed = s.count("train.seed");
    c.check();
    return c;
}

Split load_data(const Settings& s) {
    const auto& src = s.str("data.source");
    const double tf = s.num("data.test_fraction");
    if (!(tf >= 0.0 && tf < 1.0)) throw UsageError("data.test_fraction must lie in [0, 1)");
    Dataset d;
    if (src == "blobs") {
        d = make_blobs(s.count("data.samples"), static_cast<int>(s.integer("data.classes")), s.count("data.seed"),
                       static_cast<int>(s.integer("data.dims")));
    } else if (src == "idx") {
        d = load_idx(s.path("data.images", "--images"), s.path("data.labels", "--labels"));
    } else {
        d = load_dataset(src);
    }
    return split(d, tf);
}

Graph build_model(const Settings& s, const Split& data) {
    if (s.has("io.model")) return load_model(s.str("io.model"));
    Graph g;
    if (s.str("model.preset") == "mlp") {
        std::vector<std::int64_t> sizes{static_cast<std::int64_t>(data.train.sample_size())};
        for (double h : s.numbers("model.hidden")) sizes.push_back(static_cast<std::int64_t>(h));
        sizes.push_back(data.train.classes);
        g = mlp_preset(sizes);
    } else {
        g = preset(s.str("model.preset"));
    }
    init_params(g, s.count("train.seed"));
    return g;
}

void print_history(std::ostream& out, const TrainResult& r) {
    for (const auto& m : r.history) {
        out << "epoch " << m.epoch << " loss " << fmt(m.train_loss, 6) << " test_accuracy " << fmt(m.test_accuracy)
            << "\n";
    }
}

void print_reports(std::ostream& out, const std::vector<PassReport>& reports) {
    for (const auto& r : reports) {
        out << r.pass << ": " << r.applied.size() << " applied, " << r.skipped.size() << " skipped\n";
        for (const auto& a : r.applied) out << "  applied " << a << "\n";
        for (const auto& a : r.skipped) out << "  skipped " << a << "\n";
    }
}

PackOptions pack_options(const Settings& s) {
    PackOptions o;
    const auto& v = s.str("pack.crs");
    if (v == "auto") o.crs = PackOptions::Crs::Auto;
    else if (v == "never") o.crs = PackOptions::Crs::Never;
    else if (v == "always") o.crs = PackOptions::Crs::Always;
    else throw UsageError("pack.crs must be auto, never or always");
    return o;
}

nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ModelError(path + ": " + e.what());
    }
}

/// Loads a plan file and checks it against the model.
MemoryPlan load_plan(const Graph& g, const std::string& path) {
    auto plan = plan_from_json(read_json(path));
    auto table = graph_lifetimes(g);
    auto check = verify_plan(plan, table);
    if (!check.ok) throw ModelError(path + " does not fit the model: " + check.message);
    return plan;
}

Tensor read_raw(const std::string& path, const Shape& shape, ElemType type) {
    const auto bytes = read_file(path);
    const auto n = static_cast<std::size_t>(numel(shape));
    if (bytes.size() != n * elem_size(type)) {
        throw ModelError(path + ": expected " + std::to_string(n * elem_size(type)) + " bytes for " +
                         std::string(to_string(type)) + " " + shape_str(shape) + ", got " +
                         std::to_string(bytes.size()));
    }
    Tensor t = Tensor::zeros(shape, type);
    std::visit(
        [&](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            for (std::size_t i = 0; i < n; ++i) v[i] = get_le<T>(bytes.data() + i * sizeof(T));
        },
        t.data);
    return t;
}

Bytes raw_bytes(const Tensor& t) {
    Bytes out;
    std::visit([&](const auto& v) { for (auto x : v) put_le(out, x); }, t.data);
    return out;
}

int cmd_train(const Settings& s, std::ostream& out) {
    auto data = load_data(s);
    Graph g = build_model(s, data);
    auto r = train(g, data.train, &data.test, train_config(s));
    print_history(out, r);
    save_model(r.graph, s.path("io.out", "--out"));
    out << "final_accuracy " << fmt(r.final_accuracy) << "\n";
    return kExitOk;
}

int cmd_prune(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    auto data = load_data(s);
    PruneSchedule sched;
    sched.kind = schedule_kind_from_string(s.str("prune.kind"));
    sched.s_i = sched.kind == PruneSchedule::Kind::Agp ? s.num("prune.s_i") : 0.0;
    sched.s_f = s.num("prune.s_f");
    sched.t0 = static_cast<int>(s.integer("prune.t0"));
    sched.n = static_cast<int>(s.integer("prune.n"));
    sched.dt = static_cast<int>(s.integer("prune.dt"));
    sched.check();
    auto mode = prune_mode_from_string(s.str("prune.mode"));
    auto h = heuristic_from_string(s.str("prune.heuristic"));
    auto r = prune_and_retrain(g, data.train, &data.test, train_config(s), sched, mode, h);
    print_history(out, r.trained);
    save_model(r.graph, s.path("io.out", "--out"));
    out << "pruning_events " << r.events << "\n";
    out << "realized_sparsity " << fmt(realized_sparsity(r.graph)) << "\n";
    out << "accuracy " << fmt(evaluate(r.graph, data.test).accuracy) << "\n";
    return kExitOk;
}

int cmd_quantize(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    auto data = load_data(s);
    auto mode = quant_mode_from_string(s.str("quant.mode"));
    if (mode == QuantMode::F32) throw UsageError("quantize --mode must be ppq or qat");
    const bool opt = s.flag("quant.optimize");
    std::vector<PassReport> reports;
    if (opt) {
        reports.emplace_back();
        g = fold_batchnorm(g, &reports.back());
    }
    Graph q = quantize_graph(g, mode, data.train, train_config(s), s.count("quant.calib_samples"));
    if (opt) {
        reports.emplace_back();
        q = fuse_relu(q, &reports.back());
    }
    print_reports(out, reports);
    save_model(q, s.path("io.out", "--out"));
    out << "accuracy " << fmt(evaluate(q, data.test).accuracy) << "\n";
    out << "agreement " << fmt(argmax_agreement(g, q, data.test)) << "\n";
    return kExitOk;
}

int cmd_optimize(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    std::vector<PassReport> reports;
    Graph o = optimize_graph(g, &reports);
    print_reports(out, reports);
    save_model(o, s.path("io.out", "--out"));
    return kExitOk;
}

int cmd_pack(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    auto stream = pack(g, pack_options(s));
    write_stream(s.path("io.out", "--out"), stream);
    for (const auto& e : stream.entries) {
        out << e.name << " " << to_string(e.type) << " " << shape_str(e.shape) << " " << to_string(e.layout)
            << " offset " << e.offset << " bytes " << e.nbytes << "\n";
    }
    out << "flash_bytes " << stream.bytes.size() << "\n";
    return kExitOk;
}

int cmd_plan(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    auto table = graph_lifetimes(g);
    auto plan = first_fit_plan(table, buffer_sizes(g));
    auto check = verify_plan(plan, table);
    if (!check.ok) throw Error("planner produced an invalid plan: " + check.message);
    write_text(s.path("io.out", "--out"), plan_to_json(plan, table).dump(2) + "\n");
    out << "peak_bytes " << plan.peak << "\n" << "naive_bytes " << plan.naive << "\n";
    return kExitOk;
}

int cmd_emit(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    if (!s.has("emit.plan")) throw PrerequisiteError("emit needs a memory plan: run 'plan' first and pass --plan");
    if (!s.has("emit.weights")) throw PrerequisiteError("emit needs a weight stream: run 'pack' first and pass --weights");
    auto plan = load_plan(g, s.str("emit.plan"));
    const auto bytes = read_file(s.str("emit.weights"));
    load_weights(g, bytes); // throws if the stream belongs to another model
    auto stream = parse_stream(bytes);
    auto names = pack_order(g);
    for (std::size_t i = 0; i < names.size(); ++i) stream.entries[i].name = names[i];
    const auto name = s.has("emit.name") ? s.str("emit.name") : g.name;
    auto src = emit(g, stream, plan, name);
    const auto& dir = s.path("io.out", "--out");
    write_sources(dir, src);
    out << "wrote model.h, model.c, model_data.c, dnnrt.h to " << dir << "\n";
    return kExitOk;
}

int cmd_run(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    RunOptions opts;
    const auto& backend = s.str("run.backend");
    if (backend == "blas") opts.backend = RunOptions::Backend::Blas;
    else if (backend != "reference") throw UsageError("run.backend must be reference or blas");
    if (s.has("run.input")) {
        if (g.inputs.size() != 1) throw UsageError("--input needs a single-input model");
        const auto& d = g.edges.at(g.inputs[0]);
        auto x = read_raw(s.str("run.input"), d.shape, d.type);
        auto y = run(g, x, opts);
        if (s.has("run.output")) write_file(s.str("run.output"), raw_bytes(y));
        out << "predicted " << argmax(y) << "\n";
        return kExitOk;
    }
    auto data = load_data(s);
    const auto index = s.integer("run.index");
    if (index >= 0) {
        if (static_cast<std::size_t>(index) >= data.test.size()) throw UsageError("--index beyond the test set");
        auto y = run(g, data.test.input(static_cast<std::size_t>(index)), opts);
        out << "label " << data.test.labels[static_cast<std::size_t>(index)] << " predicted " << argmax(y) << "\n";
        out << "output";
        if (y.type() == ElemType::U8) {
            for (auto v : y.values<std::uint8_t>()) out << " " << int(v);
        } else {
            for (auto v : y.values<float>()) out << " " << v;
        }
        out << "\n";
        return kExitOk;
    }
    auto r = evaluate(g, data.test, opts);
    out << "accuracy " << fmt(r.accuracy) << " (" << r.correct << "/" << r.total << ")\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& pc = r.per_class[c];
        out << "class " << c << " " << pc.correct << "/" << pc.total << "\n";
    }
    return kExitOk;
}

int cmd_report(const Settings& s, std::ostream& out) {
    Graph g = load_model(s.path("io.model", "--model"));
    PackedStream stream;
    if (s.has("emit.weights")) {
        const auto bytes = read_file(s.str("emit.weights"));
        load_weights(g, bytes);
        stream = parse_stream(bytes);
        auto names = pack_order(g);
        // Candidates and costs are not stored in the stream; recompute them.
        auto fresh = pack(g, pack_options(s));
        for (std::size_t i = 0; i < names.size(); ++i) {
            stream.entries[i].name = names[i];
            stream.entries[i].crs_candidate = fresh.entries[i].crs_candidate;
            stream.entries[i].cost = fresh.entries[i].cost;
        }
    } else {
        stream = pack(g, pack_options(s));
    }
    MemoryPlan plan = s.has("emit.plan") ? load_plan(g, s.str("emit.plan")) : plan_memory(g);
    auto j = emit_report(g, stream, plan);
    if (s.has("io.out")) write_text(s.str("io.out"), j.dump(2) + "\n");
    out << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_sweep(const Settings& s, std::ostream& out) {
    SweepConfig c;
    c.seeds.clear();
    for (double v : s.numbers("sweep.seeds")) c.seeds.push_back(static_cast<std::uint64_t>(v));
    c.modes.clear();
    for (const auto& m : s.list("sweep.modes")) c.modes.push_back(prune_mode_from_string(m));
    c.heuristics.clear();
    for (const auto& h : s.list("sweep.heuristics")) c.heuristics.push_back(heuristic_from_string(h));
    c.quant.clear();
    for (const auto& q : s.list("sweep.quant")) c.quant.push_back(quant_mode_from_string(q));
    c.targets = s.numbers("sweep.targets");
    c.hidden.clear();
    for (double h : s.numbers("sweep.hidden")) c.hidden.push_back(static_cast<std::int64_t>(h));
    c.samples = s.count("data.samples");
    c.classes = static_cast<int>(s.integer("data.classes"));
    c.test_fraction = s.num("data.test_fraction");
    c.train = train_config(s);
    c.prune_steps = static_cast<int>(s.integer("prune.n"));
    c.retrain_epochs = static_cast<int>(s.integer("sweep.retrain_epochs"));
    c.qat_epochs = static_cast<int>(s.integer("sweep.qat_epochs"));
    c.calib_samples = s.count("quant.calib_samples");
    if (c.seeds.empty() || c.modes.empty() || c.heuristics.empty() || c.quant.empty() || c.targets.empty()) {
        throw UsageError("sweep needs at least one seed, mode, heuristic, quant mode and target");
    }

    std::unique_ptr<std::ofstream> file;
    std::ostream* csv = &out;
    if (s.has("io.out")) {
        const std::filesystem::path p = s.str("io.out");
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        file = std::make_unique<std::ofstream>(p);
        if (!*file) throw PrerequisiteError("cannot write " + p.string());
        csv = file.get();
    }
    *csv << sweep_csv_header() << "\n";
    run_sweep(c, [&](const SweepRow& r) {
        *csv << to_csv(r) << "\n";
        csv->flush();
    });
    if (file) out << "wrote " << s.str("io.out") << "\n";
    return kExitOk;
}

using Handler = int (*)(const Settings&, std::ostream&);

struct Command {
    std::string name;
    std::string help;
    Handler handler;
};

const std::vector<Command>& commands() {
    static const std::vector<Command> c = {
        {"train", "train a preset or an existing model", cmd_train},
        {"prune", "prune with retraining (element or structural)", cmd_prune},
        {"quantize", "convert to the full-integer u8 scheme (ppq or qat)", cmd_quantize},
        {"optimize", "fold batch-norm and fuse ReLU", cmd_optimize},
        {"pack", "write the weight stream", cmd_pack},
        {"plan", "plan activation memory", cmd_plan},
        {"emit", "emit C sources", cmd_emit},
        {"run", "evaluate a model or run one sample", cmd_run},
        {"report", "flash, SRAM and compression figures as JSON", cmd_report},
        {"sweep", "pruning x quantization sweep as CSV", cmd_sweep},
    };
    return c;
}

} // namespace

std::map<std::string, std::string> flatten_config(const nlohmann::json& j) {
    std::map<std::string, std::string> out;
    std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& v,
                                                                              const std::string& prefix) {
        if (v.is_object()) {
            for (const auto& [k, child] : v.items()) walk(child, prefix.empty() ? k : prefix + "." + k);
            return;
        }
        if (prefix.empty()) throw UsageError("config file must hold a JSON object");
        if (v.is_array()) {
            std::string joined;
            for (const auto& item : v) {
                if (!joined.empty()) joined += ",";
                joined += item.is_string() ? item.get<std::string>() : item.dump();
            }
            out[prefix] = joined;
        } else if (v.is_string()) {
            out[prefix] = v.get<std::string>();
        } else {
            out[prefix] = v.dump();
        }
    };
    walk(j, "");
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& k : key_table()) keys.push_back(k.key);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"tinyforge: train, compress and compile small neural networks for microcontrollers", "tinyforge"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "tinyforge 0.1.0");

    struct Bound {
        std::string command;
        CLI::App* app;
        std::string config;
        std::map<std::string, std::string> strings;
        std::map<std::string, bool> flags;
        std::map<std::string, CLI::Option*> options;
    };
    std::vector<std::unique_ptr<Bound>> bound;
    for (const auto& cmd : commands()) {
        auto b = std::make_unique<Bound>();
        b->command = cmd.name;
        b->app = app.add_subcommand(cmd.name, cmd.help);
        b->app->add_option("--config,-c", b->config, "JSON config file (flattened to dotted keys)");
        for (const auto& k : key_table()) {
            if (!applies(k, cmd.name)) continue;
            if (k.boolean) b->options[k.key] = b->app->add_flag(k.flag, b->flags[k.key], k.help);
            else b->options[k.key] = b->app->add_option(k.flag, b->strings[k.key], k.help);
        }
        bound.push_back(std::move(b));
    }

    std::vector<std::string> argv_store{"tinyforge"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << app.version() << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
        if (dynamic_cast<const CLI::CallForHelp*>(&e) == nullptr && sub && e.get_exit_code() == 0) {
            out << sub->help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    for (const auto& b : bound) {
        if (!b->app->parsed()) continue;
        const auto* cmd = &*std::find_if(commands().begin(), commands().end(),
                                         [&](const Command& c) { return c.name == b->command; });
        try {
            Settings s;
            for (const auto& k : key_table()) s.values.emplace(k.key, k.def);
            if (auto it = command_defaults().find(b->command); it != command_defaults().end()) {
                for (const auto& [k, v] : it->second) s.values[k] = v;
            }
            if (!b->config.empty()) {
                auto known = config_keys();
                for (const auto& [k, v] : flatten_config(read_json(b->config))) {
                    if (!std::binary_search(known.begin(), known.end(), k)) {
                        throw UsageError(b->config + ": unknown config key '" + k + "'");
                    }
                    s.values[k] = v;
                }
            }
            for (const auto& [key, opt] : b->options) {
                if (opt->count() == 0) continue;
                s.values[key] = b->flags.count(key) ? (b->flags[key] ? "true" : "false") : b->strings[key];
            }
            return cmd->handler(s, out);
        } catch (const UsageError& e) {
            err << "error: " << e.what() << "\n";
            return kExitUsage;
        } catch (const PrerequisiteError& e) {
            err << "error: " << e.what() << "\n";
            return kExitData;
        } catch (const ModelError& e) {
            err << "error: " << e.what() << "\n";
            return kExitData;
        } catch (const std::exception& e) {
            err << "internal error: " << e.what() << "\n";
            return kExitInternal;
        }
    }
    err << "error: no subcommand\n";
    return kExitUsage;
}

} // namespace tinyforge
