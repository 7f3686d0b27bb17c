#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cmatch/baselines.hpp"
#include "cmatch/cm_core.hpp"
#include "cmatch/metrics.hpp"
#include "cmatch/nn.hpp"
#include "cmatch/scenarios.hpp"

namespace cmatch {

/// Raised for any rejected configuration; the message starts with the
/// location of the offending value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
    /// Synthetic generator, or data from delimited files when train_csv is set.
    SyntheticSpec synthetic;
    std::filesystem::path train_csv;
    std::filesystem::path test_csv;
    std::size_t n_tasks = 5;
    std::size_t classes_per_task = 2;
    Mode mode = Mode::til;
    Grouping grouping = Grouping::sequential;
};

struct ExperimentConfig {
    ScenarioConfig scenario;
    StrategyKind strategy = StrategyKind::cm;
    TrainConfig train;
    ModelConfig model;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output = "results";

    /// Cross-field checks; throws ConfigError.
    void validate() const;
};

/// Parses JSON text. `source` names the input in error messages.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
    std::optional<std::string> strategy;
    std::optional<std::string> mode;
    std::optional<double> lambda;
    std::optional<std::size_t> support_size;
    std::optional<std::size_t> memory;
    std::optional<std::string> merging;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::filesystem::path> output;
};

void apply_overrides(ExperimentConfig& config, const ConfigOverrides& overrides);

/// Builds the data for one seed; the same seed gives the same data for
/// every strategy.
Dataset make_dataset(const ScenarioConfig& config, std::uint64_t seed);
Scenario make_scenario(const ExperimentConfig& config, std::uint64_t seed);

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::optional<ResultsMatrix> results;
    double accuracy = 0.0;
    double bwt = 0.0;
    bool bwt_defined = false;
    MemoryMethod memory_method = MemoryMethod::none;
    std::uint64_t memory_footprint = 0;
    std::optional<double> regularizer;
    RuntimeLog runtime;
};

struct Summary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

/// Mean and sample standard deviation (0 for a single value).
Summary summarize(const std::vector<double>& values);

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedResult> seeds;

    bool all_ok() const;
    Summary accuracy() const;
    Summary bwt() const;
    std::optional<Summary> regularizer() const;
};

/// Test accuracy of `strategy` on a task's test split.
double evaluate_task(Strategy& strategy, const TaskSpec& task, Mode mode);

/// Trains one seed start to finish. Failures are reported in the result,
/// never thrown. When `keep` is given it receives the trained strategy.
SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, std::unique_ptr<Strategy>* keep = nullptr);
ExperimentResult run_experiment(const ExperimentConfig& config);

/// JSON record of one seed (deterministic: no wall-clock values).
std::string seed_record(const ExperimentConfig& config, const SeedResult& result);

/// Aggregate table header plus one row per result.
void write_aggregate_header(std::ostream& out);
void write_aggregate_row(std::ostream& out, const ExperimentResult& result, std::string_view axis = {},
                         std::string_view value = {});

/// Writes seed_<s>.json, R_seed_<s>.csv, aggregate.csv and runtime.csv
/// (the only file with wall-clock values) into config.output.
void write_results(const ExperimentResult& result);

enum class SweepAxis { lambda, support_size, memory_capacity, merging_variant };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);
void apply_axis_value(ExperimentConfig& config, SweepAxis axis, std::string_view value);

struct SweepRow {
    std::string value;
    ExperimentResult result;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<std::string>& values);

/// sweep.csv with one aggregate row per value, plus per-value subdirectories.
void write_sweep(const std::vector<SweepRow>& rows, SweepAxis axis, const std::filesystem::path& out_dir);

struct EmbeddingPoint {
    int task_id = 0;
    int global_class = 0;
    bool is_centroid = false;
    double x = 0.0;
    double y = 0.0;
};

/// Test samples of every finalized task and every frozen centroid, in the
/// space the strategy classifies in (task embedding spaces for
/// task-incremental runs, the merged space for class-incremental CM),
/// projected on the two leading principal components.
std::vector<EmbeddingPoint> embedding_points(Strategy& strategy, const Scenario& scenario);
void write_embeddings(std::ostream& out, const std::vector<EmbeddingPoint>& points);

}  // namespace cmatch
