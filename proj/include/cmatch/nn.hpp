#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cmatch/autodiff.hpp"

namespace cmatch {

/// How a task's embedding space is mapped into the shared space.
enum class MergeVariant {
    scale_translate,  // v * sigmoid(s(v)) + t(v)
    linear,           // W v + b
    offset,           // v + W v + b
    none,             // identity
};

std::string to_string(MergeVariant variant);
MergeVariant parse_merge_variant(std::string_view name);

struct ModelConfig {
    std::size_t input_dim = 16;
    std::size_t backbone_hidden = 64;
    std::size_t feature_dim = 64;
    std::size_t head_hidden = 128;
    std::size_t embedding_dim = 128;
    std::size_t projection_hidden = 128;
    bool normalization = true;
    MergeVariant merging = MergeVariant::scale_translate;
    /// When false, centroids are projected by their own networks instead
    /// of the ones applied to sample embeddings.
    bool share_projection = true;
};

/// Affine map x W + b with W stored [in, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
    static Linear zeros(std::size_t in, std::size_t out);

    Tensor forward(Tape& tape, const Tensor& x) const;
    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }
};

/// affine -> relu -> affine
struct TwoLayerNet {
    Linear first;
    Linear second;

    static TwoLayerNet init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);
    static TwoLayerNet zeros(std::size_t in, std::size_t hidden, std::size_t out);
    Tensor forward(Tape& tape, const Tensor& x) const;
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> variance;
};

/// Per-feature standardization with running statistics. Statistics are
/// constants of the forward pass; they only change through update().
class Standardizer {
public:
    explicit Standardizer(std::size_t dim);

    void update(const Tensor& batch);
    Tensor forward(Tape& tape, const Tensor& x) const;
    /// Standardizes with the given statistics instead of the running ones.
    static Tensor forward(Tape& tape, const Tensor& x, const NormStats& stats);

    const NormStats& stats() const { return stats_; }
    void load(const NormStats& stats);

    static constexpr double momentum = 0.1;
    static constexpr double epsilon = 1e-5;

private:
    NormStats stats_;
};

struct Backbone {
    std::optional<Standardizer> norm;
    Linear first;
    Linear second;

    Tensor forward(Tape& tape, const Tensor& x, const NormStats* stats = nullptr) const;
};

struct Head {
    TwoLayerNet net;
    Tensor forward(Tape& tape, const Tensor& features) const { return net.forward(tape, features); }
};

/// Networks used by one task's merging function. Only the networks the
/// variant needs are present.
struct Projection {
    MergeVariant variant = MergeVariant::none;
    std::optional<TwoLayerNet> scale;
    std::optional<TwoLayerNet> translate;
    std::optional<Linear> affine;

    static Projection init(MergeVariant variant, std::size_t dim, std::size_t hidden, std::mt19937_64& rng);
    Tensor forward(Tape& tape, const Tensor& v, MergeVariant requested) const;
};

enum class ProjectionSide { embedding, centroid };

class ModelSnapshot;

/// Shared backbone plus one head and one projection per task.
class MultiHeadModel {
public:
    MultiHeadModel(ModelConfig config, std::uint64_t seed);
    MultiHeadModel(const MultiHeadModel&) = delete;
    MultiHeadModel& operator=(const MultiHeadModel&) = delete;
    MultiHeadModel(MultiHeadModel&&) = default;
    MultiHeadModel& operator=(MultiHeadModel&&) = default;

    /// Independent deep copy.
    MultiHeadModel clone() const;

    const ModelConfig& config() const { return config_; }

    /// Appends a head and projection; returns the new task id (0, 1, ...).
    int add_task();
    std::size_t task_count() const { return tasks_.size(); }
    bool has_task(int task_id) const;

    Tensor features(Tape& tape, const Tensor& x) const;
    /// Backbone output under the normalization statistics recorded for
    /// `task_id` (the running statistics if none were recorded yet).
    Tensor task_features(Tape& tape, const Tensor& x, int task_id) const;
    Tensor head(Tape& tape, const Tensor& features, int task_id) const;
    /// head_{task}(backbone(x))
    Tensor embed(Tape& tape, const Tensor& x, int task_id) const;
    Tensor project(Tape& tape, const Tensor& v, int task_id, MergeVariant variant,
                   ProjectionSide side = ProjectionSide::embedding) const;

    /// Folds a training batch into the running normalization statistics.
    void update_norm_stats(const Tensor& x);
    void capture_norm_stats(int task_id);
    void apply_norm_stats(int task_id);
    bool has_norm_stats(int task_id) const;
    std::optional<NormStats> current_norm_stats() const;
    void set_current_norm_stats(const NormStats& stats);
    std::optional<NormStats> norm_stats(int task_id) const;

    std::vector<Tensor> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::vector<Tensor> head_parameters(int task_id) const;
    std::vector<Tensor> backbone_parameters() const;
    std::size_t parameter_count() const;

    ModelSnapshot snapshot() const;

    Head& head_module(int task_id);
    Projection& projection_module(int task_id, ProjectionSide side = ProjectionSide::embedding);
    Backbone& backbone() { return backbone_; }

    void save(std::ostream& out) const;
    static MultiHeadModel load(std::istream& in);

private:
    struct TaskModules {
        Head head;
        Projection projection;
        std::optional<Projection> centroid_projection;
    };

    const TaskModules& task(int task_id) const;

    ModelConfig config_;
    std::mt19937_64 rng_;
    Backbone backbone_;
    std::vector<TaskModules> tasks_;
    std::map<int, NormStats> norm_records_;
};

/// Frozen deep copy of a model. Forward passes never record on a tape.
class ModelSnapshot {
public:
    explicit ModelSnapshot(std::shared_ptr<const MultiHeadModel> model);

    Tensor embed(Tape& tape, const Tensor& x, int task_id) const;
    Tensor features(Tape& tape, const Tensor& x) const;
    /// Backbone output under the normalization statistics recorded for
    /// `task_id` (the running statistics if none were recorded yet).
    Tensor task_features(Tape& tape, const Tensor& x, int task_id) const;
    Tensor head(Tape& tape, const Tensor& features, int task_id) const;
    std::size_t task_count() const { return model_->task_count(); }
    bool has_task(int task_id) const { return model_->has_task(task_id); }

private:
    std::shared_ptr<const MultiHeadModel> model_;
};

/// Applies a task's recorded normalization statistics for the lifetime of
/// the scope, then restores the running statistics.
class NormStatsScope {
public:
    NormStatsScope(MultiHeadModel& model, int task_id);
    ~NormStatsScope();
    NormStatsScope(const NormStatsScope&) = delete;
    NormStatsScope& operator=(const NormStatsScope&) = delete;

private:
    MultiHeadModel& model_;
    std::optional<NormStats> saved_;
};

/// Stacks rows into a [n, d] tensor.
Tensor stack_rows(const std::vector<std::vector<double>>& rows);

}  // namespace cmatch
