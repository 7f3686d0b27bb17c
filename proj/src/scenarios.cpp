#include "cmatch/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cmatch/random.hpp"

namespace cmatch {

std::vector<int> Dataset::classes() const {
    std::set<int> labels;
    for (const auto& s : train) labels.insert(s.label);
    return {labels.begin(), labels.end()};
}

std::string to_string(Generator g) {
    switch (g) {
        case Generator::gaussian_clusters: return "gaussian_clusters";
        case Generator::concentric_rings: return "concentric_rings";
        case Generator::interleaved_moons: return "interleaved_moons";
    }
    return "unknown";
}

Generator parse_generator(std::string_view name) {
    if (name == "gaussian_clusters") return Generator::gaussian_clusters;
    if (name == "concentric_rings") return Generator::concentric_rings;
    if (name == "interleaved_moons") return Generator::interleaved_moons;
    throw std::invalid_argument("unknown generator '" + std::string(name) +
                                "' (expected gaussian_clusters, concentric_rings or interleaved_moons)");
}

std::string to_string(Mode m) { return m == Mode::til ? "til" : "cil"; }

Mode parse_mode(std::string_view name) {
    if (name == "til") return Mode::til;
    if (name == "cil") return Mode::cil;
    throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected til or cil)");
}

std::string to_string(Grouping g) { return g == Grouping::sequential ? "sequential" : "shuffled"; }

Grouping parse_grouping(std::string_view name) {
    if (name == "sequential") return Grouping::sequential;
    if (name == "shuffled") return Grouping::shuffled;
    throw std::invalid_argument("unknown class grouping '" + std::string(name) + "' (expected sequential or shuffled)");
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<Sample> make_synthetic_task(Generator generator, std::span<const ClassParams> classes,
                                        std::size_t n_per_class, std::uint64_t seed, int first_label,
                                        std::size_t first_id) {
    if (classes.empty()) throw std::invalid_argument("synthetic task needs at least one class");
    if (n_per_class == 0) throw std::invalid_argument("n_per_class must be positive");
    const std::size_t dim = classes.front().center.size();
    if (dim == 0) throw std::invalid_argument("class centers must be non-empty");
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const auto& c = classes[k];
        if (c.center.size() != dim) throw std::invalid_argument("class centers have different dimensions");
        for (const auto& a : c.axes) {
            if (a.size() != dim) throw std::invalid_argument("class " + std::to_string(k) + " has an axis of the wrong dimension");
        }
        if (!(c.spread > 0.0)) {
            throw std::invalid_argument("class " + std::to_string(k) + " has non-positive spread " +
                                        std::to_string(c.spread));
        }
        if (generator != Generator::gaussian_clusters && !(c.radius > 0.0)) {
            throw std::invalid_argument("class " + std::to_string(k) + " has non-positive radius");
        }
    }
    if (generator != Generator::gaussian_clusters && dim < 2) {
        throw std::invalid_argument(to_string(generator) + " needs at least two input dimensions");
    }
    if (generator == Generator::concentric_rings) {
        for (std::size_t a = 0; a < classes.size(); ++a) {
            for (std::size_t b = a + 1; b < classes.size(); ++b) {
                if (classes[a].center == classes[b].center && classes[a].radius == classes[b].radius) {
                    throw std::invalid_argument("classes " + std::to_string(a) + " and " + std::to_string(b) +
                                                " are identical rings");
                }
            }
        }
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Sample> out;
    out.reserve(classes.size() * n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) {
        for (std::size_t k = 0; k < classes.size(); ++k) {
            const auto& c = classes[k];
            Sample s;
            s.x.resize(dim);
            for (std::size_t d = 0; d < dim; ++d) s.x[d] = c.center[d] + c.spread * gauss(rng);
            for (const auto& axis : c.axes) {
                const double g = gauss(rng);
                for (std::size_t d = 0; d < dim; ++d) s.x[d] += g * axis[d];
            }
            if (generator == Generator::concentric_rings) {
                const double angle = 2.0 * std::numbers::pi * unit(rng);
                s.x[0] += c.radius * std::cos(angle);
                s.x[1] += c.radius * std::sin(angle);
            } else if (generator == Generator::interleaved_moons) {
                const double angle = std::numbers::pi * unit(rng);
                if (k % 2 == 0) {
                    s.x[0] += c.radius * std::cos(angle);
                    s.x[1] += c.radius * std::sin(angle);
                } else {
                    s.x[0] += c.radius * (1.0 - std::cos(angle));
                    s.x[1] += c.radius * (0.5 - std::sin(angle));
                }
            }
            s.label = first_label + static_cast<int>(k);
            s.id = first_id + out.size();
            out.push_back(std::move(s));
        }
    }
    return out;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.n_classes == 0 || spec.input_dim == 0) throw std::invalid_argument("synthetic dataset needs classes and dims");
    if (spec.train_per_class == 0 || spec.test_per_class == 0) {
        throw std::invalid_argument("synthetic dataset needs train and test samples per class");
    }
    if (!(spec.separation > 0.0)) throw std::invalid_argument("separation must be positive");
    if (!(spec.stretch >= 0.0)) throw std::invalid_argument("stretch must be non-negative");
    std::mt19937_64 rng(derive_seed(seed, 101));
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<ClassParams> params(spec.n_classes);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        auto& p = params[k];
        p.spread = spec.noise;
        p.center.resize(spec.input_dim);
        switch (spec.generator) {
            case Generator::gaussian_clusters:
                for (auto& v : p.center) v = spec.separation * gauss(rng);
                for (std::size_t a = 0; a < spec.stretch_axes; ++a) {
                    std::vector<double> axis(spec.input_dim);
                    double n = 0.0;
                    for (auto& v : axis) {
                        v = gauss(rng);
                        n += v * v;
                    }
                    for (auto& v : axis) v *= spec.stretch / std::sqrt(n);
                    p.axes.push_back(std::move(axis));
                }
                break;
            case Generator::concentric_rings:
            case Generator::interleaved_moons:
                // Pairs of classes share a random center; rings differ in radius.
                if (k % 2 == 0) {
                    for (auto& v : p.center) v = 4.0 * spec.separation * gauss(rng);
                } else {
                    p.center = params[k - 1].center;
                }
                p.radius = spec.generator == Generator::concentric_rings ? spec.separation * static_cast<double>(1 + k % 2)
                                                                         : spec.separation;
                break;
        }
    }

    const std::size_t per_class = spec.train_per_class + spec.test_per_class;
    auto samples = make_synthetic_task(spec.generator, params, per_class, derive_seed(seed, 102));
    Dataset ds;
    ds.input_dim = spec.input_dim;
    std::map<int, std::size_t> seen;
    for (auto& s : samples) {
        if (seen[s.label]++ < spec.train_per_class) {
            ds.train.push_back(std::move(s));
        } else {
            ds.test.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Delimited text ingestion

namespace {

bool parse_row(const std::string& line, std::vector<double>& fields) {
    fields.clear();
    std::string token;
    std::string normalized = line;
    for (auto& ch : normalized) {
        if (ch == ',' || ch == ';' || ch == '\t') ch = ' ';
    }
    std::istringstream in(normalized);
    while (in >> token) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(token, &used);
        } catch (const std::exception&) {
            return false;
        }
        if (used != token.size()) return false;
        fields.push_back(v);
    }
    return true;
}

}  // namespace

std::vector<Sample> load_samples_csv(const std::filesystem::path& path, std::size_t first_id) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
    std::vector<Sample> out;
    std::vector<double> fields;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (!parse_row(line, fields)) {
            if (out.empty() && line_no == 1) continue;  // header
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
        }
        if (fields.size() < 2) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected a label and features");
        }
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(width) + " fields, got " + std::to_string(fields.size()));
        }
        const double label = fields.front();
        if (label != std::floor(label) || label < 0) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": label must be a nonnegative integer");
        }
        Sample s;
        s.label = static_cast<int>(label);
        s.x.assign(fields.begin() + 1, fields.end());
        s.id = first_id + out.size();
        out.push_back(std::move(s));
    }
    if (out.empty()) throw std::runtime_error("dataset file " + path.string() + " has no rows");
    return out;
}

Dataset load_dataset_csv(const std::filesystem::path& train_path, const std::filesystem::path& test_path,
                         double test_fraction) {
    Dataset ds;
    auto rows = load_samples_csv(train_path);
    ds.input_dim = rows.front().x.size();
    if (!test_path.empty()) {
        ds.train = std::move(rows);
        ds.test = load_samples_csv(test_path, ds.train.size());
    } else {
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must lie in (0,1)");
        std::map<int, std::size_t> totals, seen;
        for (const auto& s : rows) ++totals[s.label];
        for (auto& s : rows) {
            const auto total = totals[s.label];
            const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(total)));
            if (seen[s.label]++ < total - n_test) {
                ds.train.push_back(std::move(s));
            } else {
                ds.test.push_back(std::move(s));
            }
        }
    }
    for (const auto* split : {&ds.train, &ds.test}) {
        for (const auto& s : *split) {
            if (s.x.size() != ds.input_dim) throw std::runtime_error("train and test files have different widths");
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Scenario

int TaskSpec::global_label(int local) const {
    if (local < 0 || static_cast<std::size_t>(local) >= class_set.size()) {
        throw std::out_of_range("local label " + std::to_string(local) + " out of range for task " +
                                std::to_string(task_id) + " with " + std::to_string(class_set.size()) + " classes");
    }
    return label_offset + local;
}

int TaskSpec::local_label(int global) const {
    const int local = global - label_offset;
    if (local < 0 || static_cast<std::size_t>(local) >= class_set.size()) {
        throw std::out_of_range("global label " + std::to_string(global) + " does not belong to task " +
                                std::to_string(task_id));
    }
    return local;
}

std::size_t Scenario::total_classes() const {
    std::size_t n = 0;
    for (const auto& t : tasks_) n += t.num_classes();
    return n;
}

Scenario Scenario::build(const Dataset& dataset, const ScenarioOptions& options, std::uint64_t seed) {
    if (options.n_tasks == 0 || options.classes_per_task == 0) {
        throw std::invalid_argument("scenario needs at least one task and one class per task");
    }
    auto classes = dataset.classes();
    const std::size_t needed = options.n_tasks * options.classes_per_task;
    if (needed > classes.size()) {
        throw std::invalid_argument("scenario needs " + std::to_string(needed) + " classes (" +
                                    std::to_string(options.n_tasks) + " tasks x " +
                                    std::to_string(options.classes_per_task) + "), dataset has " +
                                    std::to_string(classes.size()));
    }
    std::mt19937_64 rng(derive_seed(seed, 201));
    if (options.grouping == Grouping::shuffled) std::shuffle(classes.begin(), classes.end(), rng);

    std::map<int, std::vector<const Sample*>> train_by_class, test_by_class;
    for (const auto& s : dataset.train) train_by_class[s.label].push_back(&s);
    for (const auto& s : dataset.test) test_by_class[s.label].push_back(&s);

    Scenario scenario;
    scenario.mode_ = options.mode;
    scenario.input_dim_ = dataset.input_dim;
    for (std::size_t t = 0; t < options.n_tasks; ++t) {
        TaskSpec task;
        task.task_id = static_cast<int>(t);
        task.label_offset = static_cast<int>(t * options.classes_per_task);
        task.class_set.assign(classes.begin() + static_cast<std::ptrdiff_t>(t * options.classes_per_task),
                              classes.begin() + static_cast<std::ptrdiff_t>((t + 1) * options.classes_per_task));
        std::sort(task.class_set.begin(), task.class_set.end());

        const std::size_t n_cls = task.class_set.size();
        for (std::size_t local = 0; local < n_cls; ++local) {
            const int raw = task.class_set[local];
            const std::size_t quota = options.support_size / n_cls + (local < options.support_size % n_cls ? 1 : 0);
            auto pool = train_by_class[raw];
            if (pool.size() <= quota) {
                throw std::invalid_argument("class " + std::to_string(raw) + " has " + std::to_string(pool.size()) +
                                            " train samples, support needs " + std::to_string(quota) +
                                            " and training needs at least one more");
            }
            std::vector<std::size_t> order(pool.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            std::vector<bool> in_support(pool.size(), false);
            for (std::size_t i = 0; i < quota; ++i) in_support[order[i]] = true;
            for (std::size_t i = 0; i < pool.size(); ++i) {
                Sample s = *pool[i];
                s.label = static_cast<int>(local);
                (in_support[i] ? task.support : task.train).push_back(std::move(s));
            }
            for (const auto* p : test_by_class[raw]) {
                Sample s = *p;
                s.label = static_cast<int>(local);
                task.test.push_back(std::move(s));
            }
            if (test_by_class[raw].empty()) {
                throw std::invalid_argument("class " + std::to_string(raw) + " has no test samples");
            }
        }
        auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
        std::sort(task.train.begin(), task.train.end(), by_id);
        std::sort(task.support.begin(), task.support.end(), by_id);
        std::sort(task.test.begin(), task.test.end(), by_id);
        scenario.tasks_.push_back(std::move(task));
    }
    return scenario;
}

const TaskSpec& TaskStream::open(std::size_t task) const {
    if (task != current_) {
        throw std::logic_error("training data of task " + std::to_string(task) + " is not accessible while task " +
                               std::to_string(current_) + " is current");
    }
    return scenario_->task(task);
}

const TaskSpec& TaskStream::revisit(std::size_t task) const {
    if (task > current_) {
        throw std::logic_error("training data of future task " + std::to_string(task) + " is not accessible");
    }
    return scenario_->task(task);
}

void TaskStream::finish(std::size_t task) {
    if (task != current_) {
        throw std::logic_error("cannot finish task " + std::to_string(task) + "; current task is " +
                               std::to_string(current_));
    }
    ++current_;
}

// ---------------------------------------------------------------------------
// Batches

Tensor Batch::inputs() const {
    if (x.empty()) throw std::invalid_argument("empty batch");
    std::vector<double> flat;
    flat.reserve(x.size() * x.front().size());
    for (const auto& r : x) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor(Shape{x.size(), x.front().size()}, std::move(flat));
}

void Batch::append(const Batch& other) {
    x.insert(x.end(), other.x.begin(), other.x.end());
    local_labels.insert(local_labels.end(), other.local_labels.begin(), other.local_labels.end());
    global_labels.insert(global_labels.end(), other.global_labels.begin(), other.global_labels.end());
    task_ids.insert(task_ids.end(), other.task_ids.begin(), other.task_ids.end());
}

Batch Batch::rows_of_task(int task_id) const {
    Batch out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (task_ids[i] != task_id) continue;
        out.x.push_back(x[i]);
        out.local_labels.push_back(local_labels[i]);
        out.global_labels.push_back(global_labels[i]);
        out.task_ids.push_back(task_ids[i]);
    }
    return out;
}

Batch Batch::from_samples(std::span<const Sample> samples, const TaskSpec& task) {
    Batch b;
    for (const auto& s : samples) {
        b.x.push_back(s.x);
        b.local_labels.push_back(s.label);
        b.global_labels.push_back(task.global_label(s.label));
        b.task_ids.push_back(task.task_id);
    }
    return b;
}

std::vector<Batch> split_batches(const Batch& rows, std::size_t batch_size, std::mt19937_64& rng) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        Batch b;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
            const auto r = order[i];
            b.x.push_back(rows.x[r]);
            b.local_labels.push_back(rows.local_labels[r]);
            b.global_labels.push_back(rows.global_labels[r]);
            b.task_ids.push_back(rows.task_ids[r]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Batch> make_batches(std::span<const Sample> samples, const TaskSpec& task, std::size_t batch_size,
                                std::mt19937_64& rng) {
    return split_batches(Batch::from_samples(samples, task), batch_size, rng);
}

// ---------------------------------------------------------------------------
// Replay memory

ReplayMemory::ReplayMemory(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw std::invalid_argument("memory capacity must be positive");
}

std::size_t ReplayMemory::size() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.items.size();
    return n;
}

bool ReplayMemory::contains_task(int task_id) const {
    return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) { return s.task_id == task_id; });
}

const std::vector<MemoryItem>& ReplayMemory::slot(int task_id) const {
    for (const auto& s : slots_) {
        if (s.task_id == task_id) return s.items;
    }
    throw std::out_of_range("memory holds no samples of task " + std::to_string(task_id));
}

std::vector<int> ReplayMemory::task_ids() const {
    std::vector<int> ids;
    for (const auto& s : slots_) ids.push_back(s.task_id);
    return ids;
}

const MemoryItem& ReplayMemory::item(std::size_t flat_index) const {
    for (const auto& s : slots_) {
        if (flat_index < s.items.size()) return s.items[flat_index];
        flat_index -= s.items.size();
    }
    throw std::out_of_range("memory index out of range");
}

void ReplayMemory::store(std::span<const Sample> samples, const TaskSpec& task) {
    if (contains_task(task.task_id)) {
        throw std::logic_error("task " + std::to_string(task.task_id) + " is already stored in memory");
    }
    const std::size_t t = slots_.size() + 1;
    auto share = [&](std::size_t k) { return capacity_ / t + (k < capacity_ % t ? 1 : 0); };

    for (std::size_t k = 0; k < slots_.size(); ++k) {
        auto& items = slots_[k].items;
        const std::size_t keep = share(k);
        if (items.size() > keep) {
            std::shuffle(items.begin(), items.end(), rng_);
            items.resize(keep);
            std::sort(items.begin(), items.end(), [](const MemoryItem& a, const MemoryItem& b) { return a.id < b.id; });
        }
    }

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng_);
    order.resize(std::min(order.size(), share(slots_.size())));
    std::sort(order.begin(), order.end());

    Slot slot{task.task_id, {}};
    for (auto i : order) {
        const auto& s = samples[i];
        slot.items.push_back(MemoryItem{s.x, s.label, task.global_label(s.label), task.task_id, s.id});
    }
    slots_.push_back(std::move(slot));
}

Batch sample_mixed_batch(const ReplayMemory& memory, const Batch& current_batch, double mix_fraction,
                         std::mt19937_64& rng) {
    if (!(mix_fraction > 0.0 && mix_fraction < 1.0)) throw std::invalid_argument("mix_fraction must lie in (0, 1)");
    if (memory.empty()) throw std::logic_error("cannot mix memory samples: memory is empty");
    const auto extra =
        static_cast<std::size_t>(std::ceil(mix_fraction * static_cast<double>(current_batch.size()) - 1e-12));
    Batch out = current_batch;
    std::uniform_int_distribution<std::size_t> pick(0, memory.size() - 1);
    for (std::size_t i = 0; i < extra; ++i) {
        const auto& item = memory.item(pick(rng));
        out.x.push_back(item.x);
        out.local_labels.push_back(item.local_label);
        out.global_labels.push_back(item.global_label);
        out.task_ids.push_back(item.task_id);
    }
    return out;
}

}  // namespace cmatch
