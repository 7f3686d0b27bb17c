#include "cmatch/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "cmatch/random.hpp"

namespace cmatch {

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::naive: return "naive";
        case StrategyKind::cumulative: return "cumulative";
        case StrategyKind::er: return "er";
        case StrategyKind::cm: return "cm";
    }
    return "unknown";
}

StrategyKind parse_strategy(std::string_view name) {
    if (name == "naive") return StrategyKind::naive;
    if (name == "cumulative") return StrategyKind::cumulative;
    if (name == "er") return StrategyKind::er;
    if (name == "cm") return StrategyKind::cm;
    throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected cm, naive, cumulative or er)");
}

namespace {

constexpr int kSingleHead = 0;

std::size_t classes_in(const Batch& support) {
    int top = -1;
    for (int y : support.local_labels) top = std::max(top, y);
    if (top < 0) throw std::invalid_argument("support set is empty");
    return static_cast<std::size_t>(top + 1);
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    return parts.size() == 1 ? parts.front() : tape.concat_rows(parts);
}

double take_step(MultiHeadModel& model, Tape& tape, const Tensor& loss, Sgd& sgd) {
    const double value = loss.item();
    tape.backward(loss);
    auto params = model.parameters();
    sgd.step(params);
    return value;
}

}  // namespace

Tensor multitask_loss(Tape& tape, const MultiHeadModel& model, const Batch& batch,
                      const std::function<Tensor(int task_id)>& centroids_for) {
    if (batch.empty()) throw std::invalid_argument("batch is empty");
    std::vector<int> tasks = batch.task_ids;
    std::sort(tasks.begin(), tasks.end());
    tasks.erase(std::unique(tasks.begin(), tasks.end()), tasks.end());

    const auto features = model.features(tape, batch.inputs());
    Tensor total;
    bool first = true;
    for (int task : tasks) {
        std::vector<double> select;
        std::vector<int> labels;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (batch.task_ids[i] == task) rows.push_back(i);
        }
        // Row selector [n_task, B] keeps one backbone pass for the whole batch.
        select.assign(rows.size() * batch.size(), 0.0);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            select[r * batch.size() + rows[r]] = 1.0;
            labels.push_back(batch.local_labels[rows[r]]);
        }
        const auto picked = rows.size() == batch.size()
                                ? features
                                : tape.matmul(Tensor(Shape{rows.size(), batch.size()}, std::move(select)), features);
        const auto embeddings = model.head(tape, picked, task);
        auto loss = prototypical_loss(tape, embeddings, centroids_for(task), labels);
        loss = tape.scale(loss, static_cast<double>(rows.size()) / static_cast<double>(batch.size()));
        total = first ? loss : tape.add(total, loss);
        first = false;
    }
    return total;
}

Tensor single_head_loss(Tape& tape, const MultiHeadModel& model, const Batch& batch, const Tensor& all_centroids) {
    const auto embeddings = model.embed(tape, batch.inputs(), kSingleHead);
    return prototypical_loss(tape, embeddings, all_centroids, batch.global_labels);
}

Tensor single_head_centroids(Tape& tape, const MultiHeadModel& model, const CentroidStore& store,
                             const Batch& support, int task_id, std::size_t num_classes) {
    std::vector<Tensor> parts;
    for (int j = 0; j < task_id; ++j) parts.push_back(store.centroids(j));
    parts.push_back(compute_centroids(tape, model, support, kSingleHead, num_classes));
    return concat(tape, parts);
}

double naive_step(MultiHeadModel& model, const CentroidStore& store, const Batch& batch, const Batch& support,
                  int task_id, std::size_t num_classes, Mode mode, Sgd& sgd) {
    model.update_norm_stats(batch.inputs());
    Tape tape;
    if (mode == Mode::til) {
        const auto centroids = compute_centroids(tape, model, support, task_id, num_classes);
        const auto loss = prototypical_loss(tape, model.embed(tape, batch.inputs(), task_id), centroids,
                                            batch.local_labels);
        return take_step(model, tape, loss, sgd);
    }
    const auto centroids = single_head_centroids(tape, model, store, support, task_id, num_classes);
    return take_step(model, tape, single_head_loss(tape, model, batch, centroids), sgd);
}

Batch cumulative_dataset(const Scenario& scenario, std::size_t t) {
    if (t == 0 || t > scenario.size()) {
        throw std::out_of_range("cumulative dataset needs 1 <= t <= " + std::to_string(scenario.size()));
    }
    Batch out;
    for (std::size_t j = 0; j < t; ++j) {
        const auto& task = scenario.task(j);
        out.append(Batch::from_samples(task.train, task));
    }
    return out;
}

double cumulative_step(MultiHeadModel& model, const Batch& batch, const std::vector<Batch>& supports, Mode mode,
                       Sgd& sgd) {
    if (supports.empty()) throw std::invalid_argument("cumulative training needs at least one support set");
    model.update_norm_stats(batch.inputs());
    Tape tape;
    if (mode == Mode::til) {
        std::map<int, Tensor> live;
        const auto loss = multitask_loss(tape, model, batch, [&](int task) {
            auto it = live.find(task);
            if (it != live.end()) return it->second;
            const auto& support = supports.at(static_cast<std::size_t>(task));
            auto c = compute_centroids(tape, model, support, task, classes_in(support));
            live.emplace(task, c);
            return c;
        });
        return take_step(model, tape, loss, sgd);
    }
    // One support pass for every task keeps the centroid set consistent.
    Batch all;
    int offset = 0;
    for (const auto& s : supports) {
        Batch shifted = s;
        for (auto& y : shifted.local_labels) y += offset;
        offset += static_cast<int>(classes_in(s));
        all.append(shifted);
    }
    const auto centroids = compute_centroids(tape, model, all, kSingleHead, static_cast<std::size_t>(offset));
    return take_step(model, tape, single_head_loss(tape, model, batch, centroids), sgd);
}

double er_step(MultiHeadModel& model, const CentroidStore& store, const Batch& mixed_batch, const Batch& support,
               int task_id, std::size_t num_classes, Mode mode, Sgd& sgd) {
    model.update_norm_stats(mixed_batch.inputs());
    Tape tape;
    if (mode == Mode::til) {
        const auto live = compute_centroids(tape, model, support, task_id, num_classes);
        const auto loss = multitask_loss(tape, model, mixed_batch,
                                         [&](int task) { return task == task_id ? live : store.centroids(task); });
        return take_step(model, tape, loss, sgd);
    }
    const auto centroids = single_head_centroids(tape, model, store, support, task_id, num_classes);
    return take_step(model, tape, single_head_loss(tape, model, mixed_batch, centroids), sgd);
}

std::vector<int> predict_single_head(const MultiHeadModel& model, const Tensor& x, const CentroidStore& store) {
    const std::size_t n = store.task_count();
    if (n == 0) throw std::logic_error("no task has been finalized");
    Tape tape;
    tape.set_recording(false);
    std::vector<Tensor> parts;
    for (std::size_t j = 0; j < n; ++j) parts.push_back(store.centroids(static_cast<int>(j)));
    const auto embeddings = model.embed(tape, x, kSingleHead);
    return argmax_rows(centroid_logits(tape, embeddings, concat(tape, parts)));
}

// ---------------------------------------------------------------------------
// Strategies

namespace {

Tensor freeze_centroids(const MultiHeadModel& model, const TaskSpec& task, int head) {
    Tape tape;
    tape.set_recording(false);
    return compute_centroids(tape, model, Batch::from_samples(task.support, task), head, task.num_classes());
}

class BaselineStrategy final : public Strategy {
public:
    BaselineStrategy(StrategyKind kind, Mode mode, const ModelConfig& model_config, const TrainConfig& config,
                     std::uint64_t seed)
        : kind_(kind), mode_(mode), config_(config), model_(model_config, derive_seed(seed, 1)) {
        if (kind_ == StrategyKind::er) memory_.emplace(config.memory_capacity, derive_seed(seed, 2));
    }

    StrategyKind kind() const override { return kind_; }
    Mode mode() const override { return mode_; }

    void train_task(TaskStream& stream, std::mt19937_64& rng) override {
        const auto t = stream.current();
        const auto& task = stream.open(t);
        const int id = task.task_id;
        if (mode_ == Mode::til || model_.task_count() == 0) {
            while (model_.task_count() <= static_cast<std::size_t>(mode_ == Mode::til ? id : kSingleHead)) {
                model_.add_task();
            }
        }
        Sgd sgd(config_.sgd);
        const auto support = Batch::from_samples(task.support, task);
        const auto k = task.num_classes();

        if (kind_ == StrategyKind::cumulative) {
            Batch rows;
            std::vector<Batch> supports;
            for (std::size_t j = 0; j <= t; ++j) {
                const auto& past = j == t ? task : stream.revisit(j);
                rows.append(Batch::from_samples(past.train, past));
                supports.push_back(Batch::from_samples(past.support, past));
            }
            for (std::size_t e = 0; e < config_.epochs; ++e) {
                for (const auto& batch : split_batches(rows, config_.batch_size, rng)) {
                    check(cumulative_step(model_, batch, supports, mode_, sgd), id);
                }
            }
            return;
        }

        for (std::size_t e = 0; e < config_.epochs; ++e) {
            for (const auto& batch : make_batches(task.train, task, config_.batch_size, rng)) {
                if (kind_ == StrategyKind::er && memory_ && !memory_->empty()) {
                    const auto mixed = sample_mixed_batch(*memory_, batch, config_.mix_fraction, rng);
                    check(er_step(model_, store_, mixed, support, id, k, mode_, sgd), id);
                } else {
                    check(naive_step(model_, store_, batch, support, id, k, mode_, sgd), id);
                }
            }
        }
    }

    void finalize_task(TaskStream& stream) override {
        const auto t = stream.current();
        const auto& task = stream.open(t);
        const int head = mode_ == Mode::til ? task.task_id : kSingleHead;
        if (kind_ == StrategyKind::cumulative) {
            // Every head kept training, so all centroids are refrozen.
            CentroidStore refreshed;
            for (std::size_t j = 0; j <= t; ++j) {
                const auto& past = j == t ? task : stream.revisit(j);
                const int h = mode_ == Mode::til ? past.task_id : kSingleHead;
                refreshed.freeze(past.task_id, freeze_centroids(model_, past, h));
                if (mode_ == Mode::til) model_.capture_norm_stats(past.task_id);
            }
            store_ = std::move(refreshed);
            max_train_ = std::max(max_train_, task.train.size());
        } else {
            store_.freeze(task.task_id, freeze_centroids(model_, task, head));
            if (mode_ == Mode::til) model_.capture_norm_stats(task.task_id);
            if (memory_) memory_->store(task.train, task);
        }
        input_dim_ = stream.scenario().input_dim();
        stream.finish(t);
    }

    std::vector<int> predict(const Tensor& x, int task_id) override {
        if (mode_ == Mode::til) return predict_til(model_, x, task_id, store_);
        return predict_single_head(model_, x, store_);
    }

    MultiHeadModel& model() override { return model_; }
    const CentroidStore& centroids() const override { return store_; }

    MemoryLedger memory_ledger() const override {
        MemoryLedger l;
        switch (kind_) {
            case StrategyKind::naive: l.method = MemoryMethod::none; break;
            case StrategyKind::cumulative:
                l.method = MemoryMethod::rehearsal;
                l.input_dim = input_dim_;
                l.samples = max_train_;
                l.n_tasks = store_.task_count();
                break;
            case StrategyKind::er:
                l.method = MemoryMethod::replay_fixed;
                l.input_dim = input_dim_;
                l.samples = memory_ ? memory_->size() : 0;
                break;
            case StrategyKind::cm: break;
        }
        return l;
    }

private:
    static void check(double loss, int task_id) {
        if (!std::isfinite(loss)) {
            throw std::domain_error("non-finite loss while training task " + std::to_string(task_id));
        }
    }

    StrategyKind kind_;
    Mode mode_;
    TrainConfig config_;
    MultiHeadModel model_;
    CentroidStore store_;
    std::optional<ReplayMemory> memory_;
    std::size_t input_dim_ = 0;
    std::size_t max_train_ = 0;
};

class CmStrategy final : public Strategy {
public:
    CmStrategy(Mode mode, const ModelConfig& model_config, const TrainConfig& config, std::uint64_t seed)
        : mode_(mode), config_(config), state_{MultiHeadModel(model_config, derive_seed(seed, 1)), {}, {}, {}} {
        if (mode_ == Mode::cil) state_.memory.emplace(config.memory_capacity, derive_seed(seed, 2));
    }

    StrategyKind kind() const override { return StrategyKind::cm; }
    Mode mode() const override { return mode_; }

    void train_task(TaskStream& stream, std::mt19937_64& rng) override {
        const auto& task = stream.open(stream.current());
        const int id = task.task_id;
        while (state_.model.task_count() <= static_cast<std::size_t>(id)) state_.model.add_task();
        Sgd sgd(config_.sgd);
        const auto support = Batch::from_samples(task.support, task);
        const ModelSnapshot* snapshot = state_.snapshot ? &*state_.snapshot : nullptr;
        for (std::size_t e = 0; e < config_.epochs; ++e) {
            for (const auto& batch : make_batches(task.train, task, config_.batch_size, rng)) {
                double loss = 0.0;
                if (mode_ == Mode::til) {
                    loss = til_training_step(state_.model, snapshot, batch, support, id, config_, sgd);
                } else {
                    const auto mixed = state_.memory && !state_.memory->empty()
                                           ? sample_mixed_batch(*state_.memory, batch, config_.mix_fraction, rng)
                                           : batch;
                    loss = cil_training_step(state_.model, snapshot, state_.centroids, mixed, support, id, config_,
                                             sgd);
                }
                if (!std::isfinite(loss)) {
                    throw std::domain_error("non-finite loss while training task " + std::to_string(id));
                }
            }
        }
    }

    void finalize_task(TaskStream& stream) override {
        const auto t = stream.current();
        const auto& task = stream.open(t);
        if (task.task_id > 0 && state_.snapshot) {
            Tape tape;
            tape.set_recording(false);
            const auto x = Batch::from_samples(task.train, task).inputs();
            regularizer_.push_back(
                distill_regularizer(tape, state_.model, *state_.snapshot, x, task.task_id).item());
        }
        cmatch::finalize_task(state_, task, task.support, task.train);
        input_dim_ = stream.scenario().input_dim();
        stream.finish(t);
    }

    std::vector<int> predict(const Tensor& x, int task_id) override {
        if (mode_ == Mode::til) return predict_til(state_.model, x, task_id, state_.centroids);
        return predict_cil(state_.model, x, state_.centroids, config_.merging);
    }

    MultiHeadModel& model() override { return state_.model; }
    const CentroidStore& centroids() const override { return state_.centroids; }

    MemoryLedger memory_ledger() const override {
        MemoryLedger l;
        l.method = mode_ == Mode::til ? MemoryMethod::cm_til : MemoryMethod::cm_cil;
        l.embedding_dim = state_.model.config().embedding_dim;
        l.total_classes = state_.centroids.total_classes();
        if (mode_ == Mode::cil) {
            l.input_dim = input_dim_;
            l.samples = state_.memory ? state_.memory->size() : 0;
        }
        return l;
    }

    std::optional<double> regularizer_value() const override {
        if (regularizer_.empty()) return std::nullopt;
        double total = 0.0;
        for (double r : regularizer_) total += r;
        return total / static_cast<double>(regularizer_.size());
    }

private:
    Mode mode_;
    TrainConfig config_;
    CmState state_;
    std::vector<double> regularizer_;
    std::size_t input_dim_ = 0;
};

}  // namespace

std::unique_ptr<Strategy> make_strategy(StrategyKind kind, Mode mode, const ModelConfig& model_config,
                                        const TrainConfig& train_config, std::uint64_t seed) {
    train_config.validate();
    ModelConfig mc = model_config;
    if (kind == StrategyKind::cm) {
        mc.merging = train_config.merging;
        return std::make_unique<CmStrategy>(mode, mc, train_config, seed);
    }
    // Baselines never merge spaces; skipping the projections keeps them lean.
    mc.merging = MergeVariant::none;
    return std::make_unique<BaselineStrategy>(kind, mode, mc, train_config, seed);
}

}  // namespace cmatch
