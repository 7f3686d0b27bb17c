#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cmatch/autodiff.hpp"
#include "cmatch/nn.hpp"
#include "cmatch/scenarios.hpp"

namespace cmatch {

struct TrainConfig {
    double lambda = 0.1;
    std::size_t support_size = 100;
    std::size_t memory_capacity = 500;
    MergeVariant merging = MergeVariant::scale_translate;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double mix_fraction = 0.5;
    SgdConfig sgd{.learning_rate = 0.01, .momentum = 0.9, .max_grad_norm = 2.0};

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;
};

/// Per-task class centroids, frozen once a task is finalized.
/// Row k of a task's matrix is the centroid of local class k.
class CentroidStore {
public:
    void freeze(int task_id, Tensor centroids);

    bool frozen(int task_id) const { return tasks_.count(task_id) > 0; }
    const Tensor& centroids(int task_id) const;
    std::size_t task_count() const { return tasks_.size(); }
    std::vector<int> task_ids() const;
    std::size_t total_classes() const;
    std::size_t dim() const;

    /// One row per centroid: task_id,class,v_1,...,v_E (17 significant digits).
    void write_csv(std::ostream& out) const;
    static CentroidStore read_csv(std::istream& in);

private:
    std::map<int, Tensor> tasks_;
};

/// [K, n] matrix whose row k averages the samples of class k.
/// Rejects a class with no samples.
Tensor class_average_matrix(std::span<const int> labels, std::size_t num_classes);

/// Mean embedding per class of the support set under the live model;
/// gradients flow back through the model.
Tensor compute_centroids(Tape& tape, const MultiHeadModel& model, const Batch& support, int task_id,
                         std::size_t num_classes);

/// Negative Euclidean distance between every embedding and every centroid, [B, K].
Tensor centroid_logits(Tape& tape, const Tensor& embeddings, const Tensor& centroids);

/// softmax(-d(c_k, e)) over classes, [B, K].
Tensor class_probabilities(Tape& tape, const Tensor& embeddings, const Tensor& centroids);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& scores);

/// Mean of -log p(y | x) for rows of `log_probs` [B, K].
Tensor nll_loss(Tape& tape, const Tensor& log_probs, std::span<const int> labels);

/// Mean over the batch of -log p(y = label | x).
Tensor prototypical_loss(Tape& tape, const Tensor& embeddings, const Tensor& centroids, std::span<const int> labels);

/// (1/t) * sum over past heads i < t-1 of d(snapshot_i(x), live_i(x)),
/// averaged over the batch; t = current_task + 1. `live_features` is the
/// live backbone output for x, reused across heads.
Tensor distill_regularizer(Tape& tape, const MultiHeadModel& model, const ModelSnapshot& snapshot, const Tensor& x,
                           const Tensor& live_features, int current_task);
Tensor distill_regularizer(Tape& tape, const MultiHeadModel& model, const ModelSnapshot& snapshot, const Tensor& x,
                           int current_task);

/// Loss for one task-incremental step: prototypical loss against live
/// centroids, plus lambda * regularizer from the second task on.
Tensor til_loss(Tape& tape, const MultiHeadModel& model, const ModelSnapshot* snapshot, const Batch& batch,
                const Batch& support, int task_id, double lambda);

/// Folds the batch into the normalization statistics, then takes one SGD step
/// on til_loss. Returns the loss value.
double til_training_step(MultiHeadModel& model, const ModelSnapshot* snapshot, const Batch& batch,
                         const Batch& support, int task_id, const TrainConfig& config, Sgd& sgd);

/// Nearest frozen centroid of `task_id`, evaluated with that task's
/// normalization statistics.
std::vector<int> predict_til(MultiHeadModel& model, const Tensor& x, int task_id, const CentroidStore& store);

/// Distribution over the classes of tasks 0..n_tasks-1 in the merged space.
/// The sample is represented by the average of its projected embeddings
/// over all heads; each centroid is projected by its own task. Centroids
/// come from the store, except the task given in `live_task` which uses
/// `live_centroids` (gradients flow through it).
Tensor projected_logits(Tape& tape, const MultiHeadModel& model, const Tensor& x, std::size_t n_tasks,
                        const CentroidStore& store, MergeVariant variant, int live_task = -1,
                        const Tensor* live_centroids = nullptr);
Tensor projected_probabilities(Tape& tape, const MultiHeadModel& model, const Tensor& x, std::size_t n_tasks,
                               const CentroidStore& store, MergeVariant variant, int live_task = -1,
                               const Tensor* live_centroids = nullptr);

/// Class-incremental loss: til_loss on the current task's rows of the mixed
/// batch plus the projected cross-entropy over the whole mixed batch
/// (global labels). On the first task it equals til_loss.
Tensor cil_loss(Tape& tape, const MultiHeadModel& model, const ModelSnapshot* snapshot, const CentroidStore& store,
                const Batch& mixed_batch, const Batch& support, int task_id, const TrainConfig& config);

double cil_training_step(MultiHeadModel& model, const ModelSnapshot* snapshot, const CentroidStore& store,
                         const Batch& mixed_batch, const Batch& support, int task_id, const TrainConfig& config,
                         Sgd& sgd);

/// Global class over all frozen tasks, without task identity.
std::vector<int> predict_cil(const MultiHeadModel& model, const Tensor& x, const CentroidStore& store,
                             MergeVariant variant);

/// Model plus everything the method keeps between tasks.
struct CmState {
    MultiHeadModel model;
    std::optional<ModelSnapshot> snapshot;
    CentroidStore centroids;
    std::optional<ReplayMemory> memory;
};

/// Freezes the task's centroids, records its normalization statistics,
/// refreshes the snapshot and, when a memory is present, stores the task's
/// training samples.
void finalize_task(CmState& state, const TaskSpec& task, std::span<const Sample> support,
                   std::span<const Sample> train_samples);

}  // namespace cmatch
