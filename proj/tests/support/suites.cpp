#include "suites.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cmatch/cm_core.hpp"
#include "cmatch/metrics.hpp"
#include "cmatch/nn.hpp"
#include "cmatch/scenarios.hpp"
#include "gen.hpp"
#include "oracles.hpp"

namespace suites {

using namespace cmatch;
using testing::Gen;

namespace {

// Accumulates per-check maxima across random instances.
class Tally {
public:
    Tally(std::string name, double tolerance, bool exact = false)
        : tolerance_(tolerance), exact_(exact) {
        result_.name = std::move(name);
    }

    void error(double e, const std::string& where = {}) {
        ++result_.cases;
        if (!(e <= result_.measure)) result_.measure = std::isnan(e) ? INFINITY : e;
        const bool bad = exact_ ? e != 0.0 : !(e < tolerance_);
        if (bad && result_.passed) {
            result_.passed = false;
            std::ostringstream os;
            os << where << " error " << e;
            result_.detail = os.str();
        }
    }

    void check(bool ok, const std::string& what) {
        ++result_.cases;
        if (!ok) {
            result_.measure += 1.0;
            if (result_.passed) result_.detail = what;
            result_.passed = false;
        }
    }

    CheckResult done() const { return result_; }

private:
    double tolerance_;
    bool exact_;
    CheckResult result_;
};

Batch random_batch(Gen& g, std::size_t n, std::size_t dim, std::size_t k, int task, int offset) {
    Batch b;
    for (int y : g.covering_labels(n, k)) {
        b.x.push_back(g.values(dim, -2.0, 2.0));
        b.local_labels.push_back(y);
        b.global_labels.push_back(offset + y);
        b.task_ids.push_back(task);
    }
    return b;
}

TaskSpec task_spec(int task_id, std::size_t classes) {
    TaskSpec t;
    t.task_id = task_id;
    t.label_offset = task_id * static_cast<int>(classes);
    for (std::size_t k = 0; k < classes; ++k) t.class_set.push_back(t.label_offset + static_cast<int>(k));
    return t;
}

std::vector<Sample> random_samples(Gen& g, std::size_t n, std::size_t dim, std::size_t k, std::size_t first_id) {
    std::vector<Sample> out;
    for (int y : g.covering_labels(n, k)) out.push_back(Sample{g.values(dim, -2.0, 2.0), y, first_id++});
    return out;
}

void perturb(const std::vector<Tensor>& params, Gen& g, double sd) {
    for (auto p : params) {
        for (auto& v : p.mutable_values()) v += g.normal(sd);
    }
}

// Model with `tasks` heads, non-trivial normalization statistics and a
// record for every head but the last.
MultiHeadModel prepared_model(Gen& g, std::size_t tasks, const ModelConfig& config) {
    MultiHeadModel m(config, g.index(0, 1u << 30));
    for (std::size_t t = 0; t < tasks; ++t) {
        m.add_task();
        m.update_norm_stats(g.matrix(6, config.input_dim, -3.0, 3.0));
        if (t + 1 < tasks) m.capture_norm_stats(static_cast<int>(t));
    }
    return m;
}

// Whole-model losses pass through many relu units; the smaller step keeps
// the difference quotient from straddling a kink.
constexpr double kModelStep = 1e-5;

double gradient_error(const LossBuilder& loss, std::vector<Tensor> params, double step = 1e-4) {
    return gradient_check(loss, params, {}, step).max_relative_error;
}

// Weighted sum of an op's output, so every output entry matters.
double primitive_error(Gen& g, std::vector<Tensor> inputs,
                       const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& op) {
    Tape probe;
    probe.set_recording(false);
    const auto shape = op(probe, inputs).shape();
    const Tensor weights(shape, g.values(shape_numel(shape), -1.0, 1.0));
    auto loss = [&](Tape& tape) { return tape.sum(tape.multiply(op(tape, inputs), weights)); };
    return gradient_error(loss, inputs);
}

Tensor param(Gen& g, Shape shape, double lo = -2.0, double hi = 2.0) {
    return Tensor(shape, g.values(shape_numel(shape), lo, hi), true);
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> gradient_suite(std::size_t seeds, double tolerance) {
    using Op = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
    struct Primitive {
        std::string name;
        std::function<std::vector<Tensor>(Gen&)> inputs;
        Op op;
    };
    const std::vector<Primitive> primitives = {
        {"matmul", [](Gen& g) { return std::vector{param(g, {3, 4}), param(g, {4, 2})}; },
         [](Tape& t, const auto& in) { return t.matmul(in[0], in[1]); }},
        {"add", [](Gen& g) { return std::vector{param(g, {3, 4}), param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.add(in[0], in[1]); }},
        {"add (row broadcast)", [](Gen& g) { return std::vector{param(g, {3, 4}), param(g, {4})}; },
         [](Tape& t, const auto& in) { return t.add(in[0], in[1]); }},
        {"subtract", [](Gen& g) { return std::vector{param(g, {3, 4}), param(g, {4})}; },
         [](Tape& t, const auto& in) { return t.subtract(in[0], in[1]); }},
        {"multiply", [](Gen& g) { return std::vector{param(g, {2, 5}), param(g, {2, 5})}; },
         [](Tape& t, const auto& in) { return t.multiply(in[0], in[1]); }},
        {"relu",
         [](Gen& g) { return std::vector{Tensor(Shape{3, 4}, g.away_from_zero(12, 0.05, 2.0), true)}; },
         [](Tape& t, const auto& in) { return t.relu(in[0]); }},
        {"sigmoid", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.sigmoid(in[0]); }},
        {"exp", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.exp(in[0]); }},
        {"log", [](Gen& g) { return std::vector{param(g, {3, 4}, 0.2, 2.0)}; },
         [](Tape& t, const auto& in) { return t.log(in[0]); }},
        {"mean", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.mean(in[0]); }},
        {"sum", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.sum(in[0]); }},
        {"row_sum", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.row_sum(in[0]); }},
        {"squared_distance (vectors)", [](Gen& g) { return std::vector{param(g, {5}), param(g, {5})}; },
         [](Tape& t, const auto& in) { return t.squared_distance(in[0], in[1]); }},
        {"squared_distance (all pairs)", [](Gen& g) { return std::vector{param(g, {3, 4}), param(g, {2, 4})}; },
         [](Tape& t, const auto& in) { return t.squared_distance(in[0], in[1]); }},
        {"sqrt", [](Gen& g) { return std::vector{param(g, {3, 4}, 0.2, 2.0)}; },
         [](Tape& t, const auto& in) { return t.sqrt(in[0]); }},
        {"negate", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.negate(in[0]); }},
        {"scale", [](Gen& g) { return std::vector{param(g, {3, 4})}; },
         [](Tape& t, const auto& in) { return t.scale(in[0], -1.7); }},
        {"concat_rows", [](Gen& g) { return std::vector{param(g, {2, 3}), param(g, {1, 3}), param(g, {3, 3})}; },
         [](Tape& t, const auto& in) { return t.concat_rows(in); }},
        {"softmax", [](Gen& g) { return std::vector{param(g, {3, 5})}; },
         [](Tape& t, const auto& in) { return t.softmax(in[0]); }},
        {"log_softmax", [](Gen& g) { return std::vector{param(g, {3, 5})}; },
         [](Tape& t, const auto& in) { return t.log_softmax(in[0]); }},
    };

    std::vector<Tally> tallies;
    for (const auto& p : primitives) tallies.emplace_back(p.name, tolerance);
    Tally proto("prototypical loss", tolerance), reg("distillation regularizer", tolerance),
        til("task-incremental loss", tolerance), two_layer("two-layer network", tolerance);
    std::map<MergeVariant, Tally> cil;
    for (auto v : {MergeVariant::scale_translate, MergeVariant::linear, MergeVariant::offset, MergeVariant::none}) {
        cil.emplace(v, Tally("class-incremental loss (" + to_string(v) + ")", tolerance));
    }
    Tally cil_unshared("class-incremental loss (unshared projections)", tolerance);

    for (std::size_t seed = 0; seed < seeds; ++seed) {
        const std::string where = "seed " + std::to_string(seed);
        Gen g(1000 + seed);
        for (std::size_t i = 0; i < primitives.size(); ++i) {
            tallies[i].error(primitive_error(g, primitives[i].inputs(g), primitives[i].op), where);
        }

        {
            // Random two-layer relu net with squared loss to targets.
            auto net = TwoLayerNet::init(4, 6, 3, g.engine());
            const auto x = g.matrix(5, 4, -2.0, 2.0);
            const auto target = g.matrix(5, 3, -1.0, 1.0);
            auto loss = [&](Tape& t) {
                const auto diff = t.subtract(net.forward(t, x), target);
                return t.mean(t.multiply(diff, diff));
            };
            two_layer.error(gradient_error(loss, {net.first.weight, net.first.bias, net.second.weight, net.second.bias}),
                            where);
        }
        {
            // Leaf embeddings and centroids.
            auto e = param(g, {6, 3});
            auto c = param(g, {3, 3});
            const auto labels = g.covering_labels(6, 3);
            auto loss = [&](Tape& t) { return prototypical_loss(t, e, c, labels); };
            double err = gradient_error(loss, {e, c});
            // Through a model with live centroids.
            auto m = prepared_model(g, 1, testing::tiny_model());
            const auto batch = random_batch(g, 6, 4, 2, 0, 0);
            const auto support = random_batch(g, 5, 4, 2, 0, 0);
            auto model_loss = [&](Tape& t) { return til_loss(t, m, nullptr, batch, support, 0, 0.5); };
            err = std::max(err, gradient_error(model_loss, m.parameters(), kModelStep));
            proto.error(err, where);
        }
        {
            auto m = prepared_model(g, 2, testing::tiny_model());
            const auto snapshot = m.snapshot();
            perturb(m.parameters(), g, 0.1);
            m.update_norm_stats(g.matrix(6, 4, -1.0, 1.0));
            const auto x = g.matrix(5, 4, -2.0, 2.0);
            auto loss = [&](Tape& t) { return distill_regularizer(t, m, snapshot, x, 1); };
            reg.error(gradient_error(loss, m.parameters(), kModelStep), where);

            const auto batch = random_batch(g, 6, 4, 2, 1, 2);
            const auto support = random_batch(g, 5, 4, 2, 1, 2);
            auto total = [&](Tape& t) { return til_loss(t, m, &snapshot, batch, support, 1, 0.7); };
            til.error(gradient_error(total, m.parameters(), kModelStep), where);
        }
        auto cil_error = [&](MergeVariant v, bool shared) {
            auto config = testing::tiny_model(4, v);
            config.share_projection = shared;
            auto m = prepared_model(g, 2, config);
            CentroidStore store;
            {
                Tape t;
                t.set_recording(false);
                store.freeze(0, compute_centroids(t, m, random_batch(g, 5, 4, 2, 0, 0), 0, 2));
            }
            const auto snapshot = m.snapshot();
            perturb(m.parameters(), g, 0.1);
            auto mixed = random_batch(g, 5, 4, 2, 1, 2);
            mixed.append(random_batch(g, 3, 4, 2, 0, 0));
            const auto support = random_batch(g, 4, 4, 2, 1, 2);
            TrainConfig tc;
            tc.lambda = 0.3;
            tc.merging = v;
            auto loss = [&](Tape& t) { return cil_loss(t, m, &snapshot, store, mixed, support, 1, tc); };
            return gradient_error(loss, m.parameters(), kModelStep);
        };
        for (auto& [v, tally] : cil) tally.error(cil_error(v, true), where);
        cil_unshared.error(cil_error(MergeVariant::scale_translate, false), where);
    }

    std::vector<CheckResult> out;
    for (const auto& t : tallies) out.push_back(t.done());
    out.push_back(two_layer.done());
    out.push_back(proto.done());
    out.push_back(reg.done());
    out.push_back(til.done());
    for (const auto& [_, t] : cil) out.push_back(t.done());
    out.push_back(cil_unshared.done());
    return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> oracle_suite(std::size_t cases, double tolerance) {
    Tally centroids("centroids", tolerance), probs("class probabilities", tolerance),
        projected("projected probabilities", tolerance), acc("accuracy", tolerance), back("bwt", tolerance),
        til("nearest-centroid prediction (task-incremental)", 0.0, true),
        cil("nearest-centroid prediction (class-incremental)", 0.0, true);

    for (std::size_t c = 0; c < cases; ++c) {
        Gen g(5000 + c);
        const std::string where = "case " + std::to_string(c);
        {
            const std::size_t k = g.index(1, 4), n = g.index(k, 12), d = g.index(1, 6);
            const auto rows = g.rows(n, d, -3.0, 3.0);
            const auto labels = g.covering_labels(n, k);
            Tape t;
            const auto got = oracle::to_mat(t.matmul(class_average_matrix(labels, k), stack_rows(rows)));
            const auto want = oracle::class_means(rows, labels, k);
            double err = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < d; ++j) err = std::max(err, std::abs(got[i][j] - want[i][j]));
            }
            // Same through a model: embeddings from the hand-written forward pass.
            auto m = prepared_model(g, 1, testing::tiny_model());
            const auto support = random_batch(g, n, 4, k, 0, 0);
            const auto live = oracle::to_mat(compute_centroids(t, m, support, 0, k));
            oracle::Mat embedded;
            for (const auto& x : support.x) embedded.push_back(oracle::embed(m, x, 0));
            const auto ref = oracle::class_means(embedded, support.local_labels, k);
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < ref[i].size(); ++j) err = std::max(err, std::abs(live[i][j] - ref[i][j]));
            }
            centroids.error(err, where);
        }
        {
            const std::size_t b = g.index(1, 6), k = g.index(1, 5), d = g.index(1, 6);
            const auto e = g.rows(b, d, -3.0, 3.0), cs = g.rows(k, d, -3.0, 3.0);
            Tape t;
            const auto got = oracle::to_mat(class_probabilities(t, stack_rows(e), stack_rows(cs)));
            double err = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const auto want = oracle::distance_softmax(e[i], cs);
                for (std::size_t j = 0; j < k; ++j) err = std::max(err, std::abs(got[i][j] - want[j]));
            }
            probs.error(err, where);
        }
        {
            auto config = testing::tiny_model(4, g.variant());
            config.share_projection = g.coin();
            const std::size_t tasks = g.index(1, 3);
            auto m = prepared_model(g, tasks, config);
            CentroidStore store;
            std::vector<oracle::Mat> raw;
            for (std::size_t j = 0; j < tasks; ++j) {
                raw.push_back(g.rows(g.index(1, 3), config.embedding_dim, -2.0, 2.0));
                store.freeze(static_cast<int>(j), stack_rows(raw.back()));
            }
            const auto x = g.rows(g.index(1, 5), config.input_dim, -2.0, 2.0);
            Tape t;
            t.set_recording(false);
            const auto got =
                oracle::to_mat(projected_probabilities(t, m, stack_rows(x), tasks, store, config.merging));
            const auto pc = oracle::projected_centroids(m, raw, config.merging);
            double err = 0.0;
            std::vector<int> predicted = predict_cil(m, stack_rows(x), store, config.merging);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const auto z = oracle::merged_embedding(m, x[i], tasks, config.merging);
                const auto want = oracle::distance_softmax(z, pc);
                for (std::size_t j = 0; j < want.size(); ++j) err = std::max(err, std::abs(got[i][j] - want[j]));
                cil.error(predicted[i] == oracle::nearest(z, pc) ? 0.0 : 1.0, where);
            }
            projected.error(err, where);
        }
        {
            const std::size_t n = g.index(1, 6);
            ResultsMatrix r(n);
            oracle::Mat full(n, oracle::Vec(n, 0.0));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    full[i][j] = g.uniform(0.0, 1.0);
                    r.record(i, j, full[i][j]);
                }
            }
            acc.error(std::abs(accuracy(r) - oracle::accuracy(full)), where);
            back.error(std::abs(bwt(r) - oracle::bwt(full)), where);
        }
        {
            const std::size_t tasks = g.index(1, 3);
            auto m = prepared_model(g, tasks, testing::tiny_model());
            m.capture_norm_stats(static_cast<int>(tasks) - 1);
            m.update_norm_stats(g.matrix(6, 4, -1.0, 1.0));  // running stats now differ from every record
            CentroidStore store;
            std::vector<oracle::Mat> raw;
            for (std::size_t j = 0; j < tasks; ++j) {
                raw.push_back(g.rows(g.index(2, 4), 4, -1.0, 1.0));
                store.freeze(static_cast<int>(j), stack_rows(raw.back()));
            }
            const int task = static_cast<int>(g.index(0, tasks - 1));
            const auto x = g.rows(8, 4, -2.0, 2.0);
            const auto got = predict_til(m, stack_rows(x), task, store);
            const auto stats = *m.norm_stats(task);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const auto e = oracle::two_layer(m.head_module(task).net, oracle::features(m, x[i], &stats));
                til.error(got[i] == oracle::nearest(e, raw[static_cast<std::size_t>(task)]) ? 0.0 : 1.0, where);
            }
        }
    }
    return {centroids.done(), probs.done(), projected.done(), acc.done(), back.done(), til.done(), cil.done()};
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> memory_suite(std::size_t tuples) {
    std::vector<CheckResult> out;
    for (auto method : {MemoryMethod::ewc, MemoryMethod::oewc, MemoryMethod::rehearsal, MemoryMethod::emr,
                        MemoryMethod::cm_til, MemoryMethod::cm_cil, MemoryMethod::replay_fixed, MemoryMethod::none}) {
        Tally tally(to_string(method), 0.0, true);
        Gen g(9000 + static_cast<std::uint64_t>(method));
        for (std::size_t i = 0; i < tuples; ++i) {
            const std::uint64_t n = g.index(1, 100), p = g.index(1, 1000000), in = g.index(1, 4096),
                                m = g.index(1, 10000), d = g.index(1, 1024), e = g.index(1, 1024), t = g.index(1, 1000);
            MemoryLedger l{method, n, p, in, m, d, e, t};
            const auto got = memory_footprint(l);
            const auto want = oracle::footprint(method, n, p, in, m, d, e, t);
            tally.error(got == want ? 0.0 : 1.0, "tuple " + std::to_string(i));
        }
        out.push_back(tally.done());
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> property_suite(std::size_t cases) {
    Tally normal("probability normalization", 0.0), equivariance("translation equivariance", 0.0),
        frozen("frozen-centroid stability", 0.0), snapshot("snapshot immutability", 0.0),
        capacity("memory capacity bound", 0.0), disjoint("task disjointness", 0.0);

    for (std::size_t c = 0; c < cases; ++c) {
        Gen g(20000 + c);
        const std::string where = "case " + std::to_string(c);

        {
            const std::size_t b = g.index(1, 6), k = g.index(1, 6), d = g.index(1, 8);
            const double spread = g.uniform(0.1, 60.0);
            const auto e = g.matrix(b, d, -spread, spread), cs = g.matrix(k, d, -spread, spread);
            Tape t;
            const auto p = class_probabilities(t, e, cs);
            bool ok = true;
            for (std::size_t i = 0; i < b; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    ok = ok && p.at(i, j) >= 0.0;
                    s += p.at(i, j);
                }
                ok = ok && std::abs(s - 1.0) <= 1e-9;
            }
            auto config = testing::tiny_model(4, g.variant());
            const std::size_t tasks = g.index(1, 3);
            auto m = prepared_model(g, tasks, config);
            CentroidStore store;
            for (std::size_t j = 0; j < tasks; ++j) store.freeze(static_cast<int>(j), g.matrix(g.index(1, 3), 4, -2.0, 2.0));
            const auto q = projected_probabilities(t, m, g.matrix(3, 4, -spread, spread), tasks, store, config.merging);
            for (std::size_t i = 0; i < q.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < q.cols(); ++j) {
                    ok = ok && q.at(i, j) >= 0.0;
                    s += q.at(i, j);
                }
                ok = ok && std::abs(s - 1.0) <= 1e-9;
            }
            normal.check(ok, where);

            const auto shift = g.values(d, -50.0, 50.0);
            Tensor e2 = e.clone(), c2 = cs.clone();
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t j = 0; j < d; ++j) e2.mutable_values()[i * d + j] += shift[j];
            }
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < d; ++j) c2.mutable_values()[i * d + j] += shift[j];
            }
            const auto p2 = class_probabilities(t, e2, c2);
            double diff = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) diff = std::max(diff, std::abs(p[i] - p2[i]));
            equivariance.check(diff <= 1e-9, where + ": max difference " + std::to_string(diff));
        }
        {
            // Finalize task 0, train task 1 for a few steps, compare stored centroids.
            CmState state{MultiHeadModel(testing::tiny_model(), g.index(0, 1u << 30)), std::nullopt, {}, std::nullopt};
            const auto t0 = task_spec(0, 2), t1 = task_spec(1, 2);
            state.model.add_task();
            const auto support0 = random_samples(g, 6, 4, 2, 0);
            const auto train0 = random_samples(g, 8, 4, 2, 100);
            finalize_task(state, t0, support0, train0);
            const auto before = state.centroids.centroids(0).clone();
            const auto snap_x = g.matrix(4, 4, -2.0, 2.0);
            Tape ft;
            ft.set_recording(false);
            const auto snap_before = state.snapshot->embed(ft, snap_x, 0);

            state.model.add_task();
            std::vector<Tensor> params_before;
            for (const auto& p : state.model.parameters()) params_before.push_back(p.clone());
            TrainConfig tc;
            tc.lambda = g.uniform(0.0, 5.0);
            tc.sgd.learning_rate = 0.05;
            Sgd sgd(tc.sgd);
            const auto support1 = random_batch(g, 6, 4, 2, 1, 2);
            const std::size_t steps = g.index(1, 5);
            for (std::size_t s = 0; s < steps; ++s) {
                til_training_step(state.model, &*state.snapshot, random_batch(g, 6, 4, 2, 1, 2), support1, 1, tc, sgd);
            }
            const auto after = state.centroids.centroids(0);
            frozen.check(std::equal(before.values().begin(), before.values().end(), after.values().begin()),
                         where + ": stored centroids changed");

            const auto snap_after = state.snapshot->embed(ft, snap_x, 0);
            const auto params_after = state.model.parameters();
            bool moved = false;
            for (std::size_t i = 0; i < params_after.size(); ++i) {
                moved = moved || !std::equal(params_after[i].values().begin(), params_after[i].values().end(),
                                             params_before[i].values().begin());
            }
            snapshot.check(std::equal(snap_before.values().begin(), snap_before.values().end(),
                                      snap_after.values().begin()) &&
                               moved,
                           where + (moved ? ": snapshot output changed" : ": training did not move the live model"));
        }
        {
            const std::size_t cap = g.index(1, 50), tasks = g.index(1, 6);
            ReplayMemory memory(cap, g.index(0, 1000));
            std::set<std::size_t> offered;
            bool ok = true;
            std::string why;
            for (std::size_t t = 0; t < tasks; ++t) {
                const std::size_t k = g.index(1, 3);
                auto spec = task_spec(static_cast<int>(t), k);
                auto samples = random_samples(g, g.index(k, 40), 2, k, 1000 * t);
                for (const auto& s : samples) offered.insert(s.id);
                memory.store(samples, spec);
                const std::size_t seen = t + 1, hi = (cap + seen - 1) / seen;
                if (memory.size() > cap) {
                    ok = false;
                    why = "size " + std::to_string(memory.size()) + " exceeds capacity " + std::to_string(cap);
                }
                for (int id : memory.task_ids()) {
                    if (memory.slot(id).size() > hi) {
                        ok = false;
                        why = "task " + std::to_string(id) + " holds more than its share";
                    }
                    for (const auto& item : memory.slot(id)) {
                        if (!offered.count(item.id)) {
                            ok = false;
                            why = "memory holds a sample that was never stored";
                        }
                    }
                }
            }
            capacity.check(ok, where + ": " + why);
        }
        {
            SyntheticSpec spec;
            spec.n_classes = g.index(2, 8);
            spec.input_dim = g.index(2, 4);
            spec.train_per_class = g.index(4, 12);
            spec.test_per_class = g.index(1, 4);
            spec.stretch_axes = g.index(0, 2);
            const auto data = make_synthetic_dataset(spec, g.index(0, 1000));
            ScenarioOptions opt;
            opt.classes_per_task = g.index(1, spec.n_classes);
            opt.n_tasks = g.index(1, spec.n_classes / opt.classes_per_task);
            opt.support_size = g.index(1, opt.classes_per_task * (spec.train_per_class - 1));
            opt.grouping = g.coin() ? Grouping::shuffled : Grouping::sequential;
            const auto scenario = Scenario::build(data, opt, g.index(0, 1000));
            bool ok = true;
            std::set<int> classes;
            std::size_t total = 0;
            for (const auto& task : scenario.tasks()) {
                total += task.class_set.size();
                classes.insert(task.class_set.begin(), task.class_set.end());
                std::set<std::size_t> train_ids;
                for (const auto& s : task.train) train_ids.insert(s.id);
                for (const auto& s : task.support) ok = ok && !train_ids.count(s.id);
                for (const auto* split : {&task.train, &task.support, &task.test}) {
                    for (const auto& s : *split) {
                        ok = ok && s.label >= 0 && static_cast<std::size_t>(s.label) < task.num_classes();
                    }
                }
                ok = ok && task.support.size() == opt.support_size;
            }
            ok = ok && classes.size() == total && total == opt.n_tasks * opt.classes_per_task;
            disjoint.check(ok, where);
        }
    }
    return {normal.done(), equivariance.done(), frozen.done(), snapshot.done(), capacity.done(), disjoint.done()};
}

}  // namespace suites
