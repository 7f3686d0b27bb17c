#include "cmatch/cm_core.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cmatch {

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be a finite value >= 0");
    if (support_size == 0) throw std::invalid_argument("support_size must be positive");
    if (memory_capacity == 0) throw std::invalid_argument("memory_capacity must be positive");
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(mix_fraction > 0.0 && mix_fraction < 1.0)) throw std::invalid_argument("mix_fraction must lie in (0, 1)");
    if (!(sgd.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(sgd.max_grad_norm >= 0.0)) throw std::invalid_argument("max_grad_norm must be non-negative");
}

// ---------------------------------------------------------------------------
// CentroidStore

void CentroidStore::freeze(int task_id, Tensor centroids) {
    if (frozen(task_id)) throw std::logic_error("centroids of task " + std::to_string(task_id) + " are already frozen");
    if (centroids.rank() != 2) throw std::invalid_argument("centroids must be a [classes, dim] matrix");
    if (!tasks_.empty() && centroids.cols() != dim()) {
        throw std::invalid_argument("centroid dimension " + std::to_string(centroids.cols()) + " differs from stored " +
                                    std::to_string(dim()));
    }
    tasks_.emplace(task_id, centroids.detach());
}

const Tensor& CentroidStore::centroids(int task_id) const {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw std::out_of_range("task " + std::to_string(task_id) + " has no frozen centroids");
    return it->second;
}

std::vector<int> CentroidStore::task_ids() const {
    std::vector<int> ids;
    for (const auto& [id, _] : tasks_) ids.push_back(id);
    return ids;
}

std::size_t CentroidStore::total_classes() const {
    std::size_t n = 0;
    for (const auto& [_, c] : tasks_) n += c.rows();
    return n;
}

std::size_t CentroidStore::dim() const { return tasks_.empty() ? 0 : tasks_.begin()->second.cols(); }

void CentroidStore::write_csv(std::ostream& out) const {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& [task_id, c] : tasks_) {
        for (std::size_t k = 0; k < c.rows(); ++k) {
            out << task_id << ',' << k;
            for (std::size_t d = 0; d < c.cols(); ++d) out << ',' << c.at(k, d);
            out << '\n';
        }
    }
}

CentroidStore CentroidStore::read_csv(std::istream& in) {
    std::map<int, std::vector<std::vector<double>>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string token;
        std::vector<double> values;
        while (std::getline(fields, token, ',')) values.push_back(std::stod(token));
        if (values.size() < 3) throw std::runtime_error("centroid row " + std::to_string(line_no) + " is too short");
        const int task_id = static_cast<int>(values[0]);
        const auto cls = static_cast<std::size_t>(values[1]);
        auto& task_rows = rows[task_id];
        if (cls != task_rows.size()) {
            throw std::runtime_error("centroid row " + std::to_string(line_no) + ": classes must be listed in order");
        }
        task_rows.emplace_back(values.begin() + 2, values.end());
    }
    CentroidStore store;
    for (auto& [task_id, r] : rows) store.freeze(task_id, stack_rows(r));
    return store;
}

// ---------------------------------------------------------------------------
// Centroids and probabilities

Tensor class_average_matrix(std::span<const int> labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::out_of_range("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) throw std::invalid_argument("class " + std::to_string(k) + " has no support samples");
    }
    const std::size_t n = labels.size();
    std::vector<double> a(num_classes * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        a[k * n + i] = 1.0 / static_cast<double>(counts[k]);
    }
    return Tensor(Shape{num_classes, n}, std::move(a));
}

Tensor compute_centroids(Tape& tape, const MultiHeadModel& model, const Batch& support, int task_id,
                         std::size_t num_classes) {
    auto average = class_average_matrix(support.local_labels, num_classes);
    auto embeddings = model.embed(tape, support.inputs(), task_id);
    return tape.matmul(average, embeddings);
}

Tensor centroid_logits(Tape& tape, const Tensor& embeddings, const Tensor& centroids) {
    if (embeddings.cols() != centroids.cols()) {
        throw std::invalid_argument("embedding dim " + std::to_string(embeddings.cols()) + " != centroid dim " +
                                    std::to_string(centroids.cols()));
    }
    return tape.negate(tape.distance(embeddings, centroids));
}

Tensor class_probabilities(Tape& tape, const Tensor& embeddings, const Tensor& centroids) {
    return tape.softmax(centroid_logits(tape, embeddings, centroids));
}

Tensor nll_loss(Tape& tape, const Tensor& log_probs, std::span<const int> labels) {
    const std::size_t n = log_probs.rows(), k = log_probs.cols();
    if (labels.size() != n) throw std::invalid_argument("label count does not match batch size");
    std::vector<double> one_hot(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " outside the " + std::to_string(k) +
                                    " available classes");
        }
        one_hot[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    auto picked = tape.sum(tape.multiply(log_probs, Tensor(log_probs.shape(), std::move(one_hot))));
    return tape.scale(picked, -1.0 / static_cast<double>(n));
}

Tensor prototypical_loss(Tape& tape, const Tensor& embeddings, const Tensor& centroids, std::span<const int> labels) {
    return nll_loss(tape, tape.log_softmax(centroid_logits(tape, embeddings, centroids)), labels);
}

// ---------------------------------------------------------------------------
// Regularizer and task-incremental training

Tensor distill_regularizer(Tape& tape, const MultiHeadModel& model, const ModelSnapshot& snapshot, const Tensor& x,
                           const Tensor& live_features, int current_task) {
    if (current_task < 1) throw std::invalid_argument("the regularizer needs at least one past task");
    Tape frozen;
    frozen.set_recording(false);
    // Each past head is compared under the normalization statistics it is
    // evaluated with; without normalization one backbone pass serves all.
    const bool per_task = model.config().normalization;
    const auto shared_target = per_task ? Tensor() : snapshot.features(frozen, x);
    Tensor total;
    for (int i = 0; i < current_task; ++i) {
        if (!snapshot.has_task(i)) throw std::out_of_range("snapshot has no head for past task " + std::to_string(i));
        const auto target =
            snapshot.head(frozen, per_task ? snapshot.task_features(frozen, x, i) : shared_target, i);
        const auto live = model.head(tape, per_task ? model.task_features(tape, x, i) : live_features, i);
        auto d = tape.row_distance(target, live);
        total = i == 0 ? d : tape.add(total, d);
    }
    const double t = static_cast<double>(current_task + 1);
    return tape.scale(tape.mean(total), 1.0 / t);
}

Tensor distill_regularizer(Tape& tape, const MultiHeadModel& model, const ModelSnapshot& snapshot, const Tensor& x,
                           int current_task) {
    return distill_regularizer(tape, model, snapshot, x, model.features(tape, x), current_task);
}

namespace {

std::size_t class_count(const Batch& support, std::span<const int> labels) {
    int top = -1;
    for (int y : support.local_labels) top = std::max(top, y);
    for (int y : labels) top = std::max(top, y);
    if (top < 0) throw std::invalid_argument("support set is empty");
    return static_cast<std::size_t>(top + 1);
}

Tensor til_terms(Tape& tape, const MultiHeadModel& model, const ModelSnapshot* snapshot, const Batch& batch,
                 const Tensor& live_centroids, int task_id, double lambda) {
    const auto x = batch.inputs();
    const auto features = model.features(tape, x);
    auto loss = prototypical_loss(tape, model.head(tape, features, task_id), live_centroids, batch.local_labels);
    if (task_id > 0 && lambda != 0.0) {
        if (!snapshot) throw std::logic_error("task " + std::to_string(task_id) + " needs a snapshot to regularize");
        loss = tape.add(loss, tape.scale(distill_regularizer(tape, model, *snapshot, x, features, task_id), lambda));
    }
    return loss;
}

void apply_step(MultiHeadModel& model, Tape& tape, const Tensor& loss, Sgd& sgd) {
    tape.backward(loss);
    auto params = model.parameters();
    sgd.step(params);
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& scores) {
    std::vector<int> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < scores.cols(); ++k) {
            if (scores.at(i, k) > scores.at(i, best)) best = k;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

Tensor til_loss(Tape& tape, const MultiHeadModel& model, const ModelSnapshot* snapshot, const Batch& batch,
                const Batch& support, int task_id, double lambda) {
    const auto centroids =
        compute_centroids(tape, model, support, task_id, class_count(support, batch.local_labels));
    return til_terms(tape, model, snapshot, batch, centroids, task_id, lambda);
}

double til_training_step(MultiHeadModel& model, const ModelSnapshot* snapshot, const Batch& batch,
                         const Batch& support, int task_id, const TrainConfig& config, Sgd& sgd) {
    model.update_norm_stats(batch.inputs());
    Tape tape;
    const auto loss = til_loss(tape, model, snapshot, batch, support, task_id, config.lambda);
    const double value = loss.item();
    apply_step(model, tape, loss, sgd);
    return value;
}

std::vector<int> predict_til(MultiHeadModel& model, const Tensor& x, int task_id, const CentroidStore& store) {
    if (!store.frozen(task_id)) throw std::logic_error("task " + std::to_string(task_id) + " is not finalized");
    NormStatsScope scope(model, task_id);
    Tape tape;
    tape.set_recording(false);
    const auto embeddings = model.embed(tape, x, task_id);
    return argmax_rows(centroid_logits(tape, embeddings, store.centroids(task_id)));
}

// ---------------------------------------------------------------------------
// Class-incremental merging

Tensor projected_logits(Tape& tape, const MultiHeadModel& model, const Tensor& x, std::size_t n_tasks,
                        const CentroidStore& store, MergeVariant variant, int live_task, const Tensor* live_centroids) {
    if (n_tasks == 0) throw std::invalid_argument("projected probabilities need at least one task");
    const auto features = model.features(tape, x);
    Tensor merged;
    std::vector<Tensor> centroids;
    for (std::size_t j = 0; j < n_tasks; ++j) {
        const int task = static_cast<int>(j);
        if (!model.has_task(task)) throw std::out_of_range("model has no head/projection for task " + std::to_string(j));
        const auto projected = model.project(tape, model.head(tape, features, task), task, variant);
        merged = j == 0 ? projected : tape.add(merged, projected);
        const Tensor& c = task == live_task && live_centroids ? *live_centroids : store.centroids(task);
        centroids.push_back(model.project(tape, c, task, variant, ProjectionSide::centroid));
    }
    merged = tape.scale(merged, 1.0 / static_cast<double>(n_tasks));
    const auto all = centroids.size() == 1 ? centroids.front() : tape.concat_rows(centroids);
    return centroid_logits(tape, merged, all);
}

Tensor projected_probabilities(Tape& tape, const MultiHeadModel& model, const Tensor& x, std::size_t n_tasks,
                               const CentroidStore& store, MergeVariant variant, int live_task,
                               const Tensor* live_centroids) {
    return tape.softmax(projected_logits(tape, model, x, n_tasks, store, variant, live_task, live_centroids));
}

Tensor cil_loss(Tape& tape, const MultiHeadModel& model, const ModelSnapshot* snapshot, const CentroidStore& store,
                const Batch& mixed_batch, const Batch& support, int task_id, const TrainConfig& config) {
    const auto current = mixed_batch.rows_of_task(task_id);
    if (current.empty()) throw std::invalid_argument("mixed batch holds no samples of the current task");
    const auto live = compute_centroids(tape, model, support, task_id, class_count(support, current.local_labels));
    auto loss = til_terms(tape, model, snapshot, current, live, task_id, config.lambda);
    if (task_id == 0) return loss;
    const auto logits = projected_logits(tape, model, mixed_batch.inputs(), static_cast<std::size_t>(task_id) + 1,
                                         store, config.merging, task_id, &live);
    return tape.add(loss, nll_loss(tape, tape.log_softmax(logits), mixed_batch.global_labels));
}

double cil_training_step(MultiHeadModel& model, const ModelSnapshot* snapshot, const CentroidStore& store,
                         const Batch& mixed_batch, const Batch& support, int task_id, const TrainConfig& config,
                         Sgd& sgd) {
    model.update_norm_stats(mixed_batch.inputs());
    Tape tape;
    const auto loss = cil_loss(tape, model, snapshot, store, mixed_batch, support, task_id, config);
    const double value = loss.item();
    apply_step(model, tape, loss, sgd);
    return value;
}

std::vector<int> predict_cil(const MultiHeadModel& model, const Tensor& x, const CentroidStore& store,
                             MergeVariant variant) {
    const std::size_t n = store.task_count();
    if (n == 0) throw std::logic_error("no task has been finalized");
    for (std::size_t j = 0; j < n; ++j) {
        if (!store.frozen(static_cast<int>(j))) throw std::logic_error("task " + std::to_string(j) + " is not finalized");
    }
    Tape tape;
    tape.set_recording(false);
    return argmax_rows(projected_logits(tape, model, x, n, store, variant));
}

// ---------------------------------------------------------------------------

void finalize_task(CmState& state, const TaskSpec& task, std::span<const Sample> support,
                   std::span<const Sample> train_samples) {
    if (state.centroids.frozen(task.task_id)) {
        throw std::logic_error("task " + std::to_string(task.task_id) + " is already finalized");
    }
    {
        Tape tape;
        tape.set_recording(false);
        const auto batch = Batch::from_samples(support, task);
        state.centroids.freeze(task.task_id,
                               compute_centroids(tape, state.model, batch, task.task_id, task.num_classes()));
    }
    state.model.capture_norm_stats(task.task_id);
    state.snapshot = state.model.snapshot();
    if (state.memory) state.memory->store(train_samples, task);
}

}  // namespace cmatch
