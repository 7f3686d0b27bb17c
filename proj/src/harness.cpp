#include "cmatch/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmatch/pca.hpp"
#include "cmatch/random.hpp"

namespace cmatch {

using json = nlohmann::json;

namespace {

[[noreturn]] void reject(const std::string& where, const std::string& what) { throw ConfigError(where + ": " + what); }

/// One JSON object of the config; tracks which keys were consumed so that
/// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
        if (!node_.is_object()) reject(where_, "expected an object");
    }

    bool has(const std::string& key) const { return node_.contains(key); }
    std::string at(const std::string& key) const { return where_ + "." + key; }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (auto* v = get(key)) {
            if (!v->is_number()) reject(at(key), "expected a number, got " + std::string(v->type_name()));
            out = v->get<double>();
        }
    }

    void count(const std::string& key, std::size_t& out) {
        if (auto* v = get(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0) {
                reject(at(key), "expected a non-negative integer, got " + v->dump());
            }
            out = v->get<std::size_t>();
        }
    }

    void boolean(const std::string& key, bool& out) {
        if (auto* v = get(key)) {
            if (!v->is_boolean()) reject(at(key), "expected true or false, got " + v->dump());
            out = v->get<bool>();
        }
    }

    void text(const std::string& key, std::string& out) {
        if (auto* v = get(key)) {
            if (!v->is_string()) reject(at(key), "expected a string, got " + v->dump());
            out = v->get<std::string>();
        }
    }

    template <class T, class Parse>
    void choice(const std::string& key, T& out, Parse parse) {
        std::string name;
        if (!has(key)) {
            seen_.insert(key);
            return;
        }
        text(key, name);
        try {
            out = parse(name);
        } catch (const std::invalid_argument& e) {
            reject(at(key), e.what());
        }
    }

    void finish() const {
        for (const auto& [key, _] : node_.items()) {
            if (!seen_.count(key)) reject(at(key), "unknown key");
        }
    }

private:
    const json& node_;
    std::string where_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& where, const std::string& what) {
    if (!ok) reject(where, what);
}

std::string num(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

}  // namespace

void ExperimentConfig::validate() const {
    const auto& sc = scenario;
    const auto& syn = sc.synthetic;
    require(sc.n_tasks > 0, "scenario.n_tasks", "must be positive");
    require(sc.classes_per_task > 0, "scenario.classes_per_task", "must be positive");
    if (sc.train_csv.empty()) {
        require(syn.n_classes > 0, "scenario.n_classes", "must be positive");
        require(syn.input_dim > 0, "scenario.input_dim", "must be positive");
        require(syn.train_per_class > 0, "scenario.train_per_class", "must be positive");
        require(syn.test_per_class > 0, "scenario.test_per_class", "must be positive");
        require(syn.separation > 0.0 && std::isfinite(syn.separation), "scenario.separation",
                "must be a finite value > 0, got " + num(syn.separation));
        require(syn.noise > 0.0 && std::isfinite(syn.noise), "scenario.noise",
                "must be a finite value > 0, got " + num(syn.noise));
        require(syn.stretch >= 0.0 && std::isfinite(syn.stretch), "scenario.stretch",
                "must be a finite value >= 0, got " + num(syn.stretch));
        require(sc.n_tasks * sc.classes_per_task <= syn.n_classes, "scenario.n_tasks",
                std::to_string(sc.n_tasks) + " tasks x " + std::to_string(sc.classes_per_task) +
                    " classes need more than the " + std::to_string(syn.n_classes) + " available classes");
        require(train.support_size < sc.classes_per_task * syn.train_per_class, "train.support_size",
                "support size " + std::to_string(train.support_size) + " leaves no training samples out of " +
                    std::to_string(sc.classes_per_task * syn.train_per_class) + " per task");
    }
    require(std::isfinite(train.lambda) && train.lambda >= 0.0, "train.lambda",
            "must be a finite value >= 0, got " + num(train.lambda));
    require(train.support_size >= sc.classes_per_task, "train.support_size",
            "must hold at least one sample per class (" + std::to_string(sc.classes_per_task) + ")");
    require(train.memory_capacity > 0, "train.memory", "must be positive");
    require(train.epochs > 0, "train.epochs", "must be positive");
    require(train.batch_size > 0, "train.batch_size", "must be positive");
    require(train.mix_fraction > 0.0 && train.mix_fraction < 1.0, "train.mix_fraction",
            "must lie in (0, 1), got " + num(train.mix_fraction));
    require(train.sgd.learning_rate > 0.0 && std::isfinite(train.sgd.learning_rate), "train.learning_rate",
            "must be positive, got " + num(train.sgd.learning_rate));
    require(train.sgd.momentum >= 0.0 && train.sgd.momentum < 1.0, "train.momentum",
            "must lie in [0, 1), got " + num(train.sgd.momentum));
    require(train.sgd.max_grad_norm >= 0.0, "train.max_grad_norm",
            "must be non-negative, got " + num(train.sgd.max_grad_norm));
    require(model.backbone_hidden > 0, "model.backbone_hidden", "must be positive");
    require(model.feature_dim > 0, "model.feature_dim", "must be positive");
    require(model.head_hidden > 0, "model.head_hidden", "must be positive");
    require(model.embedding_dim > 0, "model.embedding_dim", "must be positive");
    require(model.projection_hidden > 0, "model.projection_hidden", "must be positive");
    require(!seeds.empty(), "seeds", "must list at least one seed");
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    require(unique.size() == seeds.size(), "seeds", "contains duplicates");
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
    const std::string src(source);
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(src + ": " + e.what());
    }
    ExperimentConfig cfg;
    try {
        Section top(root, "config");
        if (auto* s = top.get("scenario")) {
            Section sc(*s, "scenario");
            auto& syn = cfg.scenario.synthetic;
            sc.choice("generator", syn.generator, parse_generator);
            sc.count("n_tasks", cfg.scenario.n_tasks);
            sc.count("classes_per_task", cfg.scenario.classes_per_task);
            sc.count("n_classes", syn.n_classes);
            sc.count("input_dim", syn.input_dim);
            sc.count("train_per_class", syn.train_per_class);
            sc.count("test_per_class", syn.test_per_class);
            sc.number("separation", syn.separation);
            sc.number("noise", syn.noise);
            sc.count("stretch_axes", syn.stretch_axes);
            sc.number("stretch", syn.stretch);
            sc.choice("mode", cfg.scenario.mode, parse_mode);
            sc.choice("grouping", cfg.scenario.grouping, parse_grouping);
            std::string path;
            sc.text("train_csv", path);
            cfg.scenario.train_csv = path;
            path.clear();
            sc.text("test_csv", path);
            cfg.scenario.test_csv = path;
            sc.finish();
        }
        top.choice("strategy", cfg.strategy, parse_strategy);
        if (auto* t = top.get("train")) {
            Section tr(*t, "train");
            tr.number("lambda", cfg.train.lambda);
            tr.count("support_size", cfg.train.support_size);
            tr.count("memory", cfg.train.memory_capacity);
            tr.choice("merging", cfg.train.merging, parse_merge_variant);
            tr.count("epochs", cfg.train.epochs);
            tr.count("batch_size", cfg.train.batch_size);
            tr.number("mix_fraction", cfg.train.mix_fraction);
            tr.number("learning_rate", cfg.train.sgd.learning_rate);
            tr.number("momentum", cfg.train.sgd.momentum);
            tr.number("max_grad_norm", cfg.train.sgd.max_grad_norm);
            tr.finish();
        }
        if (auto* m = top.get("model")) {
            Section md(*m, "model");
            md.count("backbone_hidden", cfg.model.backbone_hidden);
            md.count("feature_dim", cfg.model.feature_dim);
            md.count("head_hidden", cfg.model.head_hidden);
            md.count("embedding_dim", cfg.model.embedding_dim);
            md.count("projection_hidden", cfg.model.projection_hidden);
            md.boolean("normalization", cfg.model.normalization);
            md.boolean("share_projection", cfg.model.share_projection);
            md.finish();
        }
        if (auto* s = top.get("seeds")) {
            if (!s->is_array()) reject("config.seeds", "expected an array of non-negative integers");
            cfg.seeds.clear();
            for (std::size_t i = 0; i < s->size(); ++i) {
                const auto& v = (*s)[i];
                if (!v.is_number_integer() || v.get<long long>() < 0) {
                    reject("config.seeds[" + std::to_string(i) + "]", "expected a non-negative integer, got " + v.dump());
                }
                cfg.seeds.push_back(v.get<std::uint64_t>());
            }
        }
        std::string out;
        top.text("output", out);
        if (!out.empty()) cfg.output = out;
        top.finish();
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(src + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.string());
}

void apply_overrides(ExperimentConfig& config, const ConfigOverrides& o) {
    auto wrap = [](const char* flag, auto&& fn) {
        try {
            fn();
        } catch (const std::invalid_argument& e) {
            reject(flag, e.what());
        }
    };
    if (o.strategy) wrap("--strategy", [&] { config.strategy = parse_strategy(*o.strategy); });
    if (o.mode) wrap("--mode", [&] { config.scenario.mode = parse_mode(*o.mode); });
    if (o.merging) wrap("--merging", [&] { config.train.merging = parse_merge_variant(*o.merging); });
    if (o.lambda) config.train.lambda = *o.lambda;
    if (o.support_size) config.train.support_size = *o.support_size;
    if (o.memory) config.train.memory_capacity = *o.memory;
    if (o.seeds) config.seeds = *o.seeds;
    if (o.output) config.output = *o.output;
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("command line: ") + e.what());
    }
}

Dataset make_dataset(const ScenarioConfig& config, std::uint64_t seed) {
    if (!config.train_csv.empty()) return load_dataset_csv(config.train_csv, config.test_csv);
    return make_synthetic_dataset(config.synthetic, derive_seed(seed, 1));
}

Scenario make_scenario(const ExperimentConfig& config, std::uint64_t seed) {
    ScenarioOptions options;
    options.n_tasks = config.scenario.n_tasks;
    options.classes_per_task = config.scenario.classes_per_task;
    options.mode = config.scenario.mode;
    options.support_size = config.train.support_size;
    options.grouping = config.scenario.grouping;
    return Scenario::build(make_dataset(config.scenario, seed), options, derive_seed(seed, 2));
}

// ---------------------------------------------------------------------------
// Running

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return s;
}

bool ExperimentResult::all_ok() const {
    for (const auto& s : seeds) {
        if (!s.ok) return false;
    }
    return !seeds.empty();
}

Summary ExperimentResult::accuracy() const {
    std::vector<double> v;
    for (const auto& s : seeds) {
        if (s.ok) v.push_back(s.accuracy);
    }
    return summarize(v);
}

Summary ExperimentResult::bwt() const {
    std::vector<double> v;
    for (const auto& s : seeds) {
        if (s.ok) v.push_back(s.bwt);
    }
    return summarize(v);
}

std::optional<Summary> ExperimentResult::regularizer() const {
    std::vector<double> v;
    for (const auto& s : seeds) {
        if (s.ok && s.regularizer) v.push_back(*s.regularizer);
    }
    if (v.empty()) return std::nullopt;
    return summarize(v);
}

double evaluate_task(Strategy& strategy, const TaskSpec& task, Mode mode) {
    if (task.test.empty()) throw std::invalid_argument("task " + std::to_string(task.task_id) + " has no test samples");
    std::vector<std::vector<double>> rows;
    rows.reserve(task.test.size());
    for (const auto& s : task.test) rows.push_back(s.x);
    const auto predicted = strategy.predict(stack_rows(rows), task.task_id);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < task.test.size(); ++i) {
        const int expected = mode == Mode::til ? task.test[i].label : task.global_label(task.test[i].label);
        if (predicted[i] == expected) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(task.test.size());
}

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, std::unique_ptr<Strategy>* keep) {
    SeedResult r;
    r.seed = seed;
    try {
        const auto scenario = make_scenario(config, seed);
        const auto mode = config.scenario.mode;
        ModelConfig model = config.model;
        model.input_dim = scenario.input_dim();
        auto strategy = make_strategy(config.strategy, mode, model, config.train, derive_seed(seed, 3));
        std::mt19937_64 rng(derive_seed(seed, 4));
        TaskStream stream(scenario);
        const std::size_t n = scenario.size();
        ResultsMatrix results(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto start = std::chrono::steady_clock::now();
            strategy->train_task(stream, rng);
            strategy->finalize_task(stream);
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            r.runtime.record(static_cast<int>(i), elapsed.count());
            for (std::size_t j = 0; j <= i; ++j) results.record(i, j, evaluate_task(*strategy, scenario.task(j), mode));
        }
        r.accuracy = cmatch::accuracy(results);
        r.bwt = cmatch::bwt(results);
        r.bwt_defined = bwt_defined(results);
        const auto ledger = strategy->memory_ledger();
        r.memory_method = ledger.method;
        r.memory_footprint = memory_footprint(ledger);
        r.regularizer = strategy->regularizer_value();
        r.results = std::move(results);
        r.ok = true;
        if (keep) *keep = std::move(strategy);
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    ExperimentResult out;
    out.config = config;
    for (auto seed : config.seeds) out.seeds.push_back(run_seed(config, seed));
    return out;
}

// ---------------------------------------------------------------------------
// Output

std::string seed_record(const ExperimentConfig& config, const SeedResult& r) {
    nlohmann::ordered_json j;
    j["seed"] = r.seed;
    j["strategy"] = to_string(config.strategy);
    j["mode"] = to_string(config.scenario.mode);
    j["status"] = r.ok ? "ok" : "aborted";
    if (!r.ok) {
        j["error"] = r.error;
        return j.dump(2) + "\n";
    }
    j["accuracy"] = r.accuracy;
    j["bwt"] = r.bwt;
    j["bwt_defined"] = r.bwt_defined;
    auto matrix = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.results->size(); ++i) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < r.results->size(); ++k) {
            if (auto v = r.results->get(i, k)) {
                row.push_back(*v);
            } else {
                row.push_back(nullptr);
            }
        }
        matrix.push_back(row);
    }
    j["results_matrix"] = matrix;
    j["memory"] = {{"method", to_string(r.memory_method)}, {"footprint", r.memory_footprint}};
    if (r.regularizer) {
        j["regularizer"] = *r.regularizer;
    } else {
        j["regularizer"] = nullptr;
    }
    j["config"] = {{"lambda", config.train.lambda},
                   {"support_size", config.train.support_size},
                   {"memory", config.train.memory_capacity},
                   {"merging", to_string(config.train.merging)},
                   {"epochs", config.train.epochs},
                   {"batch_size", config.train.batch_size},
                   {"learning_rate", config.train.sgd.learning_rate},
                   {"momentum", config.train.sgd.momentum},
                   {"max_grad_norm", config.train.sgd.max_grad_norm},
                   {"n_tasks", config.scenario.n_tasks},
                   {"classes_per_task", config.scenario.classes_per_task}};
    return j.dump(2) + "\n";
}

void write_aggregate_header(std::ostream& out) {
    out << "axis,value,strategy,mode,seeds_ok,seeds_total,accuracy_mean,accuracy_std,bwt_mean,bwt_std,bwt_defined,"
           "memory_method,memory_footprint,regularizer_mean,regularizer_std\n";
}

void write_aggregate_row(std::ostream& out, const ExperimentResult& result, std::string_view axis,
                         std::string_view value) {
    const auto& cfg = result.config;
    const auto acc = result.accuracy();
    const auto b = result.bwt();
    const SeedResult* first = nullptr;
    for (const auto& s : result.seeds) {
        if (s.ok) {
            first = &s;
            break;
        }
    }
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << axis << ',' << value << ',' << to_string(cfg.strategy) << ',' << to_string(cfg.scenario.mode) << ','
        << acc.count << ',' << result.seeds.size() << ',' << acc.mean << ',' << acc.stddev << ',' << b.mean << ','
        << b.stddev << ',' << (first && first->bwt_defined ? "true" : "false") << ','
        << (first ? to_string(first->memory_method) : "") << ',';
    if (first) out << first->memory_footprint;
    out << ',';
    if (auto reg = result.regularizer()) out << reg->mean << ',' << reg->stddev;
    else out << ',';
    out << '\n';
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

}  // namespace

void write_results(const ExperimentResult& result) {
    const auto& dir = result.config.output;
    std::filesystem::create_directories(dir);
    for (const auto& s : result.seeds) {
        const auto tag = std::to_string(s.seed);
        write_file(dir / ("seed_" + tag + ".json"), seed_record(result.config, s));
        if (s.results) {
            std::ostringstream r;
            s.results->write_csv(r);
            write_file(dir / ("R_seed_" + tag + ".csv"), r.str());
        }
    }
    std::ostringstream agg;
    write_aggregate_header(agg);
    write_aggregate_row(agg, result);
    write_file(dir / "aggregate.csv", agg.str());

    std::ostringstream rt;
    rt << "seed,task,seconds\n";
    for (const auto& s : result.seeds) {
        for (const auto& [task, seconds] : s.runtime.entries()) rt << s.seed << ',' << task << ',' << seconds << '\n';
    }
    write_file(dir / "runtime.csv", rt.str());
}

// ---------------------------------------------------------------------------
// Sweeps

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::lambda: return "lambda";
        case SweepAxis::support_size: return "support_size";
        case SweepAxis::memory_capacity: return "memory_capacity";
        case SweepAxis::merging_variant: return "merging_variant";
    }
    return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
    for (auto a : {SweepAxis::lambda, SweepAxis::support_size, SweepAxis::memory_capacity, SweepAxis::merging_variant}) {
        if (name == to_string(a)) return a;
    }
    throw std::invalid_argument("unknown sweep axis '" + std::string(name) +
                                "' (expected lambda, support_size, memory_capacity or merging_variant)");
}

namespace {

std::size_t parse_count(std::string_view text, const std::string& where) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(std::string(text), &pos);
    } catch (const std::exception&) {
        reject(where, "expected a non-negative integer, got '" + std::string(text) + "'");
    }
    if (pos != text.size() || text.starts_with('-')) {
        reject(where, "expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return static_cast<std::size_t>(v);
}

}  // namespace

void apply_axis_value(ExperimentConfig& config, SweepAxis axis, std::string_view value) {
    const std::string where = "sweep value " + std::string(value);
    switch (axis) {
        case SweepAxis::lambda: {
            std::size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(std::string(value), &pos);
            } catch (const std::exception&) {
                reject(where, "expected a number");
            }
            if (pos != value.size()) reject(where, "expected a number");
            config.train.lambda = v;
            break;
        }
        case SweepAxis::support_size: config.train.support_size = parse_count(value, where); break;
        case SweepAxis::memory_capacity: config.train.memory_capacity = parse_count(value, where); break;
        case SweepAxis::merging_variant:
            try {
                config.train.merging = parse_merge_variant(value);
            } catch (const std::invalid_argument& e) {
                reject(where, e.what());
            }
            break;
    }
    try {
        config.validate();
    } catch (const ConfigError& e) {
        reject(where, e.what());
    }
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("sweep: the value list is empty");
    std::vector<ExperimentConfig> configs;
    for (const auto& v : values) {
        auto c = config;
        apply_axis_value(c, axis, v);
        c.output = config.output / (to_string(axis) + "_" + v);
        configs.push_back(std::move(c));
    }
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) rows.push_back({values[i], run_experiment(configs[i])});
    return rows;
}

void write_sweep(const std::vector<SweepRow>& rows, SweepAxis axis, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ostringstream table;
    write_aggregate_header(table);
    for (const auto& row : rows) {
        write_aggregate_row(table, row.result, to_string(axis), row.value);
        write_results(row.result);
    }
    write_file(out_dir / "sweep.csv", table.str());
}

// ---------------------------------------------------------------------------
// Embedding export

std::vector<EmbeddingPoint> embedding_points(Strategy& strategy, const Scenario& scenario) {
    const auto& store = strategy.centroids();
    const auto tasks = store.task_ids();
    if (tasks.empty()) throw std::logic_error("no task has been finalized");
    auto& model = strategy.model();
    const auto mode = strategy.mode();
    const bool merged = mode == Mode::cil && strategy.kind() == StrategyKind::cm;
    const auto variant = model.config().merging;

    std::vector<std::vector<double>> vectors;
    std::vector<EmbeddingPoint> points;
    auto collect = [&](const Tensor& t, int task_id, const std::vector<int>& classes, bool centroid) {
        for (std::size_t r = 0; r < t.rows(); ++r) {
            vectors.push_back(t.row(r));
            points.push_back({task_id, classes[r], centroid, 0.0, 0.0});
        }
    };

    for (int task_id : tasks) {
        const auto& task = scenario.task(static_cast<std::size_t>(task_id));
        std::vector<std::vector<double>> rows;
        std::vector<int> sample_classes;
        for (const auto& s : task.test) {
            rows.push_back(s.x);
            sample_classes.push_back(task.global_label(s.label));
        }
        std::vector<int> centroid_classes;
        for (std::size_t k = 0; k < task.num_classes(); ++k) centroid_classes.push_back(task.global_label(static_cast<int>(k)));

        Tape tape;
        tape.set_recording(false);
        const auto x = stack_rows(rows);
        const auto& c = store.centroids(task_id);
        if (merged) {
            const auto features = model.features(tape, x);
            Tensor z;
            for (std::size_t j = 0; j < tasks.size(); ++j) {
                const int h = tasks[j];
                const auto p = model.project(tape, model.head(tape, features, h), h, variant);
                z = j == 0 ? p : tape.add(z, p);
            }
            z = tape.scale(z, 1.0 / static_cast<double>(tasks.size()));
            collect(z, task_id, sample_classes, false);
            collect(model.project(tape, c, task_id, variant, ProjectionSide::centroid), task_id, centroid_classes, true);
        } else if (mode == Mode::til) {
            NormStatsScope scope(model, task_id);
            collect(model.embed(tape, x, task_id), task_id, sample_classes, false);
            collect(c, task_id, centroid_classes, true);
        } else {
            collect(model.embed(tape, x, 0), task_id, sample_classes, false);
            collect(c, task_id, centroid_classes, true);
        }
    }

    const auto pca = Pca::fit(vectors);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto xy = pca.transform(vectors[i]);
        points[i].x = xy[0];
        points[i].y = xy[1];
    }
    return points;
}

void write_embeddings(std::ostream& out, const std::vector<EmbeddingPoint>& points) {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "task_id,global_class,is_centroid,x,y\n";
    for (const auto& p : points) {
        out << p.task_id << ',' << p.global_class << ',' << (p.is_centroid ? 1 : 0) << ',' << p.x << ',' << p.y << '\n';
    }
}

}  // namespace cmatch
