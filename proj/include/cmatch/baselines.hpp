#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cmatch/cm_core.hpp"
#include "cmatch/metrics.hpp"
#include "cmatch/nn.hpp"
#include "cmatch/scenarios.hpp"

namespace cmatch {

enum class StrategyKind { naive, cumulative, er, cm };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

// Baselines use the same prototypical heads and centroids as the method.
// In task-incremental mode every task has its own head. In class-incremental
// mode baselines keep one head (task 0) whose centroid set grows with every
// task, and predictions range over all centroids seen so far.

/// Prototypical loss over a batch that may span several tasks, each row
/// scored by its own head against `centroids_for(task)`. Rows are weighted
/// equally.
Tensor multitask_loss(Tape& tape, const MultiHeadModel& model, const Batch& batch,
                      const std::function<Tensor(int task_id)>& centroids_for);

/// Cross-entropy of the single head (task 0) against all class centroids,
/// indexed by global label.
Tensor single_head_loss(Tape& tape, const MultiHeadModel& model, const Batch& batch, const Tensor& all_centroids);

/// Frozen centroids of tasks 0..task_id-1 followed by live centroids of the
/// current task, all computed by head 0.
Tensor single_head_centroids(Tape& tape, const MultiHeadModel& model, const CentroidStore& store,
                             const Batch& support, int task_id, std::size_t num_classes);

/// Trains without any forgetting countermeasure.
double naive_step(MultiHeadModel& model, const CentroidStore& store, const Batch& batch, const Batch& support,
                  int task_id, std::size_t num_classes, Mode mode, Sgd& sgd);

/// Union of the train splits of tasks 0..t-1 with global labels.
Batch cumulative_dataset(const Scenario& scenario, std::size_t t);

/// One step on a batch from cumulative_dataset; every task's centroids are
/// recomputed live from its own support set.
double cumulative_step(MultiHeadModel& model, const Batch& batch, const std::vector<Batch>& supports, Mode mode,
                       Sgd& sgd);

/// Prototypical loss over current and replayed samples, no distillation.
/// Past-task rows are scored against their frozen centroids.
double er_step(MultiHeadModel& model, const CentroidStore& store, const Batch& mixed_batch, const Batch& support,
               int task_id, std::size_t num_classes, Mode mode, Sgd& sgd);

/// Nearest centroid over every class in the store, using head 0.
std::vector<int> predict_single_head(const MultiHeadModel& model, const Tensor& x, const CentroidStore& store);

/// A complete continual-learning method driven task by task by the harness.
class Strategy {
public:
    virtual ~Strategy() = default;

    virtual StrategyKind kind() const = 0;
    virtual Mode mode() const = 0;
    /// Trains on the stream's current task for the configured epochs.
    virtual void train_task(TaskStream& stream, std::mt19937_64& rng) = 0;
    /// Freezes what the method keeps and advances the stream.
    virtual void finalize_task(TaskStream& stream) = 0;
    /// Task-incremental: local labels of `task_id`. Class-incremental:
    /// global labels over all finalized tasks (`task_id` is ignored).
    virtual std::vector<int> predict(const Tensor& x, int task_id) = 0;

    virtual MultiHeadModel& model() = 0;
    virtual const CentroidStore& centroids() const = 0;
    virtual MemoryLedger memory_ledger() const = 0;
    /// Mean end-of-task regularizer value over tasks 2..N (method only).
    virtual std::optional<double> regularizer_value() const { return std::nullopt; }
};

std::unique_ptr<Strategy> make_strategy(StrategyKind kind, Mode mode, const ModelConfig& model_config,
                                        const TrainConfig& train_config, std::uint64_t seed);

}  // namespace cmatch
