#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmatch/autodiff.hpp"

namespace cmatch {

struct Sample {
    std::vector<double> x;
    int label = 0;
    /// Unique within a dataset; lets splits be checked for disjointness.
    std::size_t id = 0;
};

struct Dataset {
    std::size_t input_dim = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;

    /// Sorted distinct labels present in the train split.
    std::vector<int> classes() const;
};

enum class Generator { gaussian_clusters, concentric_rings, interleaved_moons };

std::string to_string(Generator g);
Generator parse_generator(std::string_view name);

/// Per-class generator parameters. `center` has the input dimension.
/// gaussian_clusters: N(center, spread^2 I).
/// concentric_rings: circle of `radius` in the first two coordinates around
///   center, isotropic noise `spread` everywhere.
/// interleaved_moons: classes come in pairs; the even class is the upper
///   half-moon and the odd class the lower one, both scaled by `radius`.
struct ClassParams {
    std::vector<double> center;
    double spread = 1.0;
    double radius = 1.0;
    /// gaussian_clusters only: extra noise directions; each sample adds
    /// g_a * axes[a] with independent standard normal g_a.
    std::vector<std::vector<double>> axes;
};

/// n_per_class samples for each entry of `classes`, labelled
/// first_label, first_label+1, ... and interleaved by class.
std::vector<Sample> make_synthetic_task(Generator generator, std::span<const ClassParams> classes,
                                        std::size_t n_per_class, std::uint64_t seed, int first_label = 0,
                                        std::size_t first_id = 0);

struct SyntheticSpec {
    Generator generator = Generator::gaussian_clusters;
    std::size_t n_classes = 10;
    std::size_t input_dim = 16;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 100;
    /// Scale of the random class centers (gaussian) or ring/moon radius.
    double separation = 1.0;
    /// Per-sample noise standard deviation.
    double noise = 1.0;
    /// gaussian_clusters: every class is additionally stretched along this
    /// many random unit directions, each with standard deviation `stretch`.
    std::size_t stretch_axes = 8;
    double stretch = 2.0;
};

/// Class centers are drawn from N(0, separation^2 I) with `seed`; samples
/// use an independent stream derived from the same seed.
Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Rows of `label,f1,...,fI`, comma/semicolon/tab/space delimited. A first
/// row that does not parse as numbers is treated as a header.
std::vector<Sample> load_samples_csv(const std::filesystem::path& path, std::size_t first_id = 0);

/// Builds a dataset from a train file and an optional test file. Without a
/// test file, the last `test_fraction` of each class (file order) is held out.
Dataset load_dataset_csv(const std::filesystem::path& train_path, const std::filesystem::path& test_path = {},
                         double test_fraction = 0.2);

enum class Mode { til, cil };
enum class Grouping { sequential, shuffled };

std::string to_string(Mode m);
Mode parse_mode(std::string_view name);
std::string to_string(Grouping g);
Grouping parse_grouping(std::string_view name);

/// One task of a scenario. Sample labels inside a TaskSpec are local
/// (0..|Y_i|-1); class_set maps local labels back to dataset labels.
struct TaskSpec {
    int task_id = 0;
    std::vector<int> class_set;
    std::vector<Sample> train;
    std::vector<Sample> support;
    std::vector<Sample> test;
    int label_offset = 0;

    std::size_t num_classes() const { return class_set.size(); }
    int global_label(int local_label) const;
    int local_label(int global) const;
};

struct ScenarioOptions {
    std::size_t n_tasks = 5;
    std::size_t classes_per_task = 2;
    Mode mode = Mode::til;
    std::size_t support_size = 100;
    Grouping grouping = Grouping::sequential;
};

class Scenario {
public:
    static Scenario build(const Dataset& dataset, const ScenarioOptions& options, std::uint64_t seed);

    std::size_t size() const { return tasks_.size(); }
    Mode mode() const { return mode_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t total_classes() const;
    /// Unrestricted access; the training loop goes through TaskStream.
    const TaskSpec& task(std::size_t i) const { return tasks_.at(i); }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }

private:
    std::vector<TaskSpec> tasks_;
    Mode mode_ = Mode::til;
    std::size_t input_dim_ = 0;
};

/// Enforces sequential access to training data: the train and support
/// splits of task i become readable only after task i-1 is finished and
/// stop being readable once task i is finished. Test splits are always
/// readable.
class TaskStream {
public:
    explicit TaskStream(const Scenario& scenario) : scenario_(&scenario) {}

    std::size_t current() const { return current_; }
    bool done() const { return current_ >= scenario_->size(); }

    const TaskSpec& open(std::size_t task) const;
    const std::vector<Sample>& train(std::size_t task) const { return open(task).train; }
    const std::vector<Sample>& support(std::size_t task) const { return open(task).support; }
    const std::vector<Sample>& test(std::size_t task) const { return scenario_->task(task).test; }
    /// Splits of an already finished task. Only methods that are defined to
    /// revisit past data (the cumulative upper bound) call this.
    const TaskSpec& revisit(std::size_t task) const;
    /// Metadata (class set, offset) is public for every task.
    const TaskSpec& info(std::size_t task) const { return scenario_->task(task); }
    void finish(std::size_t task);

    const Scenario& scenario() const { return *scenario_; }

private:
    const Scenario* scenario_;
    std::size_t current_ = 0;
};

/// A training batch; every row carries its task and both label forms.
struct Batch {
    std::vector<std::vector<double>> x;
    std::vector<int> local_labels;
    std::vector<int> global_labels;
    std::vector<int> task_ids;

    std::size_t size() const { return x.size(); }
    bool empty() const { return x.empty(); }
    Tensor inputs() const;
    void append(const Batch& other);
    Batch rows_of_task(int task_id) const;

    static Batch from_samples(std::span<const Sample> samples, const TaskSpec& task);
};

/// Shuffled mini-batches of `rows`; the last batch may be short.
std::vector<Batch> split_batches(const Batch& rows, std::size_t batch_size, std::mt19937_64& rng);

/// Shuffled mini-batches over `samples`; the last batch may be short.
std::vector<Batch> make_batches(std::span<const Sample> samples, const TaskSpec& task, std::size_t batch_size,
                                std::mt19937_64& rng);

struct MemoryItem {
    std::vector<double> x;
    int local_label = 0;
    int global_label = 0;
    int task_id = 0;
    std::size_t id = 0;
};

/// Fixed-capacity rehearsal memory shared by all tasks. Storing task t
/// rebalances to equal shares: floor(capacity/t), with the remainder going
/// to the earliest tasks. Existing slots are randomly down-sampled.
class ReplayMemory {
public:
    ReplayMemory(std::size_t capacity, std::uint64_t seed);

    void store(std::span<const Sample> samples, const TaskSpec& task);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const;
    bool empty() const { return size() == 0; }
    std::size_t task_count() const { return slots_.size(); }
    bool contains_task(int task_id) const;
    const std::vector<MemoryItem>& slot(int task_id) const;
    std::vector<int> task_ids() const;
    const MemoryItem& item(std::size_t flat_index) const;

private:
    struct Slot {
        int task_id;
        std::vector<MemoryItem> items;
    };
    std::size_t capacity_;
    std::mt19937_64 rng_;
    std::vector<Slot> slots_;
};

/// current_batch followed by ceil(mix_fraction * |current_batch|) memory
/// items drawn uniformly with replacement.
Batch sample_mixed_batch(const ReplayMemory& memory, const Batch& current_batch, double mix_fraction,
                         std::mt19937_64& rng);

}  // namespace cmatch
