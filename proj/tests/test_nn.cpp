#include <doctest.h>

#include <sstream>

#include "cmatch/cm_core.hpp"
#include "cmatch/nn.hpp"
#include "support/gen.hpp"
#include "support/models.hpp"

using namespace cmatch;
using testing::Gen;

namespace {

std::vector<double> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<std::vector<double>> snapshot_params(const MultiHeadModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.push_back(values(p));
    return out;
}

}  // namespace

TEST_CASE("embed examples") {
    SUBCASE("identity layers") {
        auto m = testing::identity_model(3, 1);
        Tape tape;
        const auto x = Tensor::matrix(2, 3, {0.5, 1.0, 2.0, 3.0, 0.0, 1.5});
        CHECK(values(m.embed(tape, x, 0)) == values(x));
    }
    SUBCASE("shape contract") {
        ModelConfig c;
        c.input_dim = 8;
        c.feature_dim = 16;
        c.embedding_dim = 32;
        MultiHeadModel m(c, 1);
        m.add_task();
        Tape tape;
        Gen g(1);
        CHECK(m.embed(tape, g.matrix(4, 8, -1.0, 1.0), 0).shape() == Shape{4, 32});
        CHECK(m.features(tape, g.matrix(4, 8, -1.0, 1.0)).shape() == Shape{4, 16});
    }
    SUBCASE("composition of backbone and head") {
        Gen g(2);
        MultiHeadModel m(testing::tiny_model(), 3);
        m.add_task();
        m.add_task();
        const auto x = g.matrix(5, 4, -2.0, 2.0);
        Tape tape;
        CHECK(values(m.embed(tape, x, 1)) == values(m.head(tape, m.features(tape, x), 1)));
    }
    SUBCASE("unknown task") {
        MultiHeadModel m(testing::tiny_model(), 3);
        m.add_task();
        Tape tape;
        CHECK_THROWS_AS(m.embed(tape, Tensor::matrix(1, 4, {0, 0, 0, 0}), 1), std::out_of_range);
        CHECK_THROWS_AS(m.embed(tape, Tensor::matrix(1, 3, {0, 0, 0}), 0), std::invalid_argument);
    }
}

TEST_CASE("gradients reach backbone and head") {
    Gen g(5);
    MultiHeadModel m(testing::tiny_model(), 4);
    m.add_task();
    Tape tape;
    tape.backward(tape.sum(m.embed(tape, g.matrix(3, 4, -1.0, 1.0), 0)));
    for (const auto& p : m.backbone_parameters()) CHECK(p.has_grad());
    for (const auto& p : m.head_parameters(0)) CHECK(p.has_grad());
}

TEST_CASE("projection examples") {
    Gen g(6);
    const auto v = g.matrix(3, 4, -2.0, 2.0);
    Tape tape;
    SUBCASE("none is the identity") {
        MultiHeadModel m(testing::tiny_model(4, MergeVariant::none), 1);
        m.add_task();
        CHECK(values(m.project(tape, v, 0, MergeVariant::none)) == values(v));
    }
    SUBCASE("scale_translate with zero networks halves the input") {
        MultiHeadModel m(testing::tiny_model(4, MergeVariant::scale_translate), 1);
        m.add_task();
        auto& p = m.projection_module(0);
        for (auto* net : {&*p.scale, &*p.translate}) {
            testing::set_zero(net->first);
            testing::set_zero(net->second);
        }
        const auto out = m.project(tape, v, 0, MergeVariant::scale_translate);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(out[i] == 0.5 * v[i]);
    }
    SUBCASE("offset with a zero map is the identity") {
        MultiHeadModel m(testing::tiny_model(4, MergeVariant::offset), 1);
        m.add_task();
        testing::set_zero(*m.projection_module(0).affine);
        CHECK(values(m.project(tape, v, 0, MergeVariant::offset)) == values(v));
    }
    SUBCASE("linear applies the affine map") {
        MultiHeadModel m(testing::tiny_model(4, MergeVariant::linear), 1);
        m.add_task();
        testing::set_identity(*m.projection_module(0).affine);
        CHECK(values(m.project(tape, v, 0, MergeVariant::linear)) == values(v));
    }
    SUBCASE("every variant preserves the dimension") {
        for (auto variant : {MergeVariant::scale_translate, MergeVariant::linear, MergeVariant::offset, MergeVariant::none}) {
            MultiHeadModel m(testing::tiny_model(4, variant), 1);
            m.add_task();
            CHECK(m.project(tape, v, 0, variant).shape() == v.shape());
        }
    }
    SUBCASE("unknown or mismatched variants") {
        CHECK_THROWS_AS(parse_merge_variant("rotate"), std::invalid_argument);
        MultiHeadModel m(testing::tiny_model(4, MergeVariant::linear), 1);
        m.add_task();
        CHECK_THROWS_AS(m.project(tape, v, 0, MergeVariant::scale_translate), std::invalid_argument);
    }
    SUBCASE("unshared centroid projections") {
        auto c = testing::tiny_model(4, MergeVariant::linear);
        c.share_projection = false;
        MultiHeadModel m(c, 1);
        m.add_task();
        CHECK(&m.projection_module(0, ProjectionSide::centroid) != &m.projection_module(0));
        CHECK(values(m.project(tape, v, 0, MergeVariant::linear, ProjectionSide::centroid)) !=
              values(m.project(tape, v, 0, MergeVariant::linear)));
    }
}

TEST_CASE("snapshot examples") {
    Gen g(7);
    MultiHeadModel m(testing::tiny_model(), 8);
    m.add_task();
    m.update_norm_stats(g.matrix(8, 4, -2.0, 2.0));
    const auto x = g.matrix(6, 4, -2.0, 2.0);
    const auto snap = m.snapshot();

    Tape tape;
    const auto frozen_before = snap.embed(tape, x, 0);
    CHECK(tape.empty());
    CHECK_FALSE(frozen_before.requires_grad());
    CHECK(values(frozen_before) == values(m.embed(tape, x, 0)));
    tape.clear();

    // 100 training steps on the live model.
    Sgd sgd;
    const std::vector<int> labels{0, 1, 0, 1, 0, 1};
    Batch batch;
    for (std::size_t i = 0; i < 6; ++i) {
        batch.x.push_back(x.row(i));
        batch.local_labels.push_back(labels[i]);
        batch.global_labels.push_back(labels[i]);
        batch.task_ids.push_back(0);
    }
    TrainConfig tc;
    for (int i = 0; i < 100; ++i) til_training_step(m, nullptr, batch, batch, 0, tc, sgd);

    CHECK(values(snap.embed(tape, x, 0)) == values(frozen_before));
    CHECK(values(m.embed(tape, x, 0)) != values(frozen_before));

    MultiHeadModel empty(testing::tiny_model(), 1);
    CHECK_THROWS_AS(empty.snapshot(), std::logic_error);
}

TEST_CASE("normalization statistics") {
    Gen g(9);
    SUBCASE("capture then apply reproduces outputs") {
        MultiHeadModel m(testing::tiny_model(), 2);
        m.add_task();
        m.update_norm_stats(g.matrix(10, 4, -3.0, 3.0));
        const auto x = g.matrix(4, 4, -2.0, 2.0);
        Tape tape;
        const auto at_capture = values(m.embed(tape, x, 0));
        m.capture_norm_stats(0);
        m.update_norm_stats(g.matrix(10, 4, 5.0, 9.0));
        CHECK(values(m.embed(tape, x, 0)) != at_capture);
        {
            NormStatsScope scope(m, 0);
            CHECK(values(m.embed(tape, x, 0)) == at_capture);
        }
        CHECK(values(m.embed(tape, x, 0)) != at_capture);
        CHECK(values(m.task_features(tape, x, 0)) != values(m.features(tape, x)));
        CHECK(values(m.head(tape, m.task_features(tape, x, 0), 0)) == at_capture);
    }
    SUBCASE("no normalization layer: both are no-ops") {
        auto c = testing::tiny_model();
        c.normalization = false;
        MultiHeadModel m(c, 2);
        m.add_task();
        m.capture_norm_stats(0);
        m.apply_norm_stats(0);
        CHECK_FALSE(m.current_norm_stats());
        CHECK(m.has_norm_stats(0));
    }
    SUBCASE("shifted inputs give different statistics") {
        MultiHeadModel m(testing::tiny_model(), 2);
        m.add_task();
        m.add_task();
        for (int i = 0; i < 30; ++i) m.update_norm_stats(g.matrix(16, 4, -1.0, 1.0));
        m.capture_norm_stats(0);
        for (int i = 0; i < 60; ++i) m.update_norm_stats(g.matrix(16, 4, 9.0, 11.0));
        m.capture_norm_stats(1);
        const auto a = *m.norm_stats(0), b = *m.norm_stats(1);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(a.mean[k] == doctest::Approx(0.0).epsilon(0.3).scale(1.0));
            CHECK(b.mean[k] == doctest::Approx(10.0).epsilon(0.05));
            CHECK(a.variance[k] >= 0.0);
            CHECK(b.variance[k] >= 0.0);
        }
    }
    SUBCASE("apply without a record is rejected") {
        MultiHeadModel m(testing::tiny_model(), 2);
        m.add_task();
        CHECK_THROWS_AS(m.apply_norm_stats(0), std::out_of_range);
    }
}

TEST_CASE("training one head leaves the other heads untouched") {
    Gen g(10);
    MultiHeadModel m(testing::tiny_model(), 3);
    m.add_task();
    m.add_task();
    std::vector<std::vector<double>> head0;
    for (const auto& p : m.head_parameters(0)) head0.push_back(values(p));
    std::vector<std::vector<double>> backbone;
    for (const auto& p : m.backbone_parameters()) backbone.push_back(values(p));

    Batch b;
    for (int i = 0; i < 8; ++i) {
        b.x.push_back(g.values(4, -2.0, 2.0));
        b.local_labels.push_back(i % 2);
        b.global_labels.push_back(2 + i % 2);
        b.task_ids.push_back(1);
    }
    TrainConfig tc;
    tc.lambda = 0.0;
    Sgd sgd(tc.sgd);
    for (int i = 0; i < 10; ++i) til_training_step(m, nullptr, b, b, 1, tc, sgd);

    const auto after = m.head_parameters(0);
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(values(after[i]) == head0[i]);
    bool backbone_moved = false;
    const auto bb = m.backbone_parameters();
    for (std::size_t i = 0; i < bb.size(); ++i) backbone_moved = backbone_moved || values(bb[i]) != backbone[i];
    CHECK(backbone_moved);
}

TEST_CASE("checkpoint round trip") {
    Gen g(12);
    auto c = testing::tiny_model(4, MergeVariant::offset);
    c.share_projection = false;
    MultiHeadModel m(c, 5);
    m.add_task();
    m.add_task();
    m.update_norm_stats(g.matrix(6, 4, -2.0, 2.0));
    m.capture_norm_stats(0);

    std::stringstream buf;
    m.save(buf);
    auto loaded = MultiHeadModel::load(buf);
    CHECK(snapshot_params(loaded) == snapshot_params(m));
    CHECK(loaded.parameter_names() == m.parameter_names());
    CHECK(loaded.norm_stats(0)->mean == m.norm_stats(0)->mean);
    const auto x = g.matrix(3, 4, -2.0, 2.0);
    Tape tape;
    CHECK(values(loaded.embed(tape, x, 1)) == values(m.embed(tape, x, 1)));

    std::stringstream bad("NOTAMODEL");
    CHECK_THROWS(MultiHeadModel::load(bad));
}

TEST_CASE("clone is independent") {
    MultiHeadModel m(testing::tiny_model(), 5);
    m.add_task();
    auto copy = m.clone();
    copy.head_parameters(0)[0].mutable_values()[0] += 1.0;
    CHECK(m.head_parameters(0)[0][0] != copy.head_parameters(0)[0][0]);
}
