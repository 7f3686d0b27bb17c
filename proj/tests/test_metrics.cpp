#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "cmatch/metrics.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"

using namespace cmatch;
using testing::Gen;

namespace {

// Lower triangle plus diagonal of `values`.
ResultsMatrix lower(const oracle::Mat& values) {
    ResultsMatrix r(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) r.record(i, j, values[i][j]);
    }
    return r;
}

oracle::Mat random_mat(Gen& g, std::size_t n) {
    oracle::Mat m(n, oracle::Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) m[i][j] = g.uniform(0.0, 1.0);
    }
    return m;
}

MemoryLedger ledger(MemoryMethod method, std::uint64_t n, std::uint64_t p, std::uint64_t i, std::uint64_t m,
                    std::uint64_t d, std::uint64_t e, std::uint64_t t) {
    return MemoryLedger{method, n, p, i, m, d, e, t};
}

constexpr MemoryMethod kMethods[] = {MemoryMethod::ewc,    MemoryMethod::oewc,   MemoryMethod::rehearsal,
                                     MemoryMethod::emr,    MemoryMethod::cm_til, MemoryMethod::cm_cil,
                                     MemoryMethod::replay_fixed, MemoryMethod::none};

}  // namespace

TEST_CASE("accuracy") {
    ResultsMatrix r(3);
    r.record(0, 0, 0.95);
    r.record(1, 0, 0.9);
    r.record(1, 1, 0.9);
    CHECK_THROWS_AS(accuracy(r), std::logic_error);
    r.record(2, 0, 0.9);
    r.record(2, 1, 0.8);
    r.record(2, 2, 0.7);
    CHECK(accuracy(r) == doctest::Approx(0.8).epsilon(1e-15));

    ResultsMatrix one(1);
    one.record(0, 0, 0.42);
    CHECK(accuracy(one) == 0.42);
    CHECK(bwt(one) == 0.0);
    CHECK_FALSE(bwt_defined(one));
}

TEST_CASE("backward transfer") {
    CHECK(bwt(lower({{0.7, 0, 0}, {0.7, 0.6, 0}, {0.7, 0.6, 0.9}})) == 0.0);
    CHECK(bwt(lower({{0.9, 0}, {0.8, 0.5}})) == doctest::Approx(-0.1).epsilon(1e-12));

    Gen g(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto m = random_mat(g, 3);
        CHECK(std::abs(bwt(lower(m)) - oracle::bwt(m)) < 1e-12);
    }

    ResultsMatrix partial(3);
    partial.record(0, 0, 0.5);
    partial.record(1, 1, 0.5);
    CHECK_THROWS_AS(bwt(partial), std::logic_error);
}

TEST_CASE("recording results") {
    ResultsMatrix r(2);
    r.record(1, 0, 0.25);
    CHECK(r.at(1, 0) == 0.25);
    CHECK(r.filled(1, 0));
    CHECK_FALSE(r.get(0, 0).has_value());
    CHECK_THROWS_AS(r.record(1, 0, 0.3), std::logic_error);
    CHECK_THROWS_AS(r.record(0, 0, 1.2), std::invalid_argument);
    CHECK_THROWS_AS(r.record(0, 0, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(r.record(0, 1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(r.record(2, 0, 0.5), std::out_of_range);
    CHECK_THROWS_AS(ResultsMatrix(0), std::invalid_argument);

    std::ostringstream out;
    r.write_csv(out);
    CHECK(out.str() == ",\n0.25,\n");
}

TEST_CASE("runtime log") {
    RuntimeLog log;
    log.record(0, 1.5);
    log.record(1, 2.0);
    CHECK(log.total() == 3.5);
    CHECK(log.entries().size() == 2);
    CHECK_THROWS_AS(log.record(1, 0.5), std::logic_error);
    CHECK_THROWS_AS(log.record(2, -1.0), std::invalid_argument);
}

TEST_CASE("memory footprint examples") {
    MemoryLedger ewc{MemoryMethod::ewc};
    ewc.n_tasks = 5;
    ewc.parameters = 100;
    CHECK(memory_footprint(ewc) == 500);

    MemoryLedger cm{MemoryMethod::cm_til};
    cm.embedding_dim = 128;
    cm.total_classes = 10;
    CHECK(memory_footprint(cm) == 1280);

    MemoryLedger rehearsal{MemoryMethod::rehearsal};
    rehearsal.input_dim = 4;
    rehearsal.samples = 10;
    rehearsal.n_tasks = 5;
    CHECK(memory_footprint(rehearsal) == 200);

    MemoryLedger missing{MemoryMethod::emr};
    missing.input_dim = 4;
    missing.samples = 10;
    missing.n_tasks = 5;
    try {
        memory_footprint(missing);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("field D") != std::string::npos);
    }
    CHECK(memory_footprint(MemoryLedger{}) == 0);
    CHECK(parse_memory_method(to_string(MemoryMethod::cm_cil)) == MemoryMethod::cm_cil);
    CHECK_THROWS_AS(parse_memory_method("gem"), std::invalid_argument);
}

TEST_CASE("property: footprint matches the formulas and is linear in every count") {
    Gen g(5);
    for (int rep = 0; rep < 500; ++rep) {
        std::uint64_t v[7];
        for (auto& x : v) x = static_cast<std::uint64_t>(g.index(0, 1000));
        for (auto method : kMethods) {
            const auto at = [&](const std::uint64_t* a) {
                return static_cast<double>(memory_footprint(ledger(method, a[0], a[1], a[2], a[3], a[4], a[5], a[6])));
            };
            CHECK(at(v) == static_cast<double>(oracle::footprint(method, v[0], v[1], v[2], v[3], v[4], v[5], v[6])));
            // Second differences vanish along each axis.
            for (int k = 0; k < 7; ++k) {
                std::uint64_t a[7], b[7], c[7];
                std::copy(v, v + 7, a);
                std::copy(v, v + 7, b);
                std::copy(v, v + 7, c);
                b[k] += 1;
                c[k] += 2;
                CHECK(at(c) - 2.0 * at(b) + at(a) == 0.0);
            }
        }
    }
}

TEST_CASE("property: accuracy and backward transfer invariants") {
    Gen g(7);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t n = g.index(1, 6);
        auto m = random_mat(g, n);

        // Permuting the task order of the final evaluation leaves accuracy unchanged.
        auto permuted = m;
        std::shuffle(permuted[n - 1].begin(), permuted[n - 1].end(), g.engine());
        ResultsMatrix a(n), b(n);
        for (std::size_t j = 0; j < n; ++j) {
            a.record(n - 1, j, m[n - 1][j]);
            b.record(n - 1, j, permuted[n - 1][j]);
        }
        CHECK(accuracy(a) == doctest::Approx(accuracy(b)).epsilon(1e-14));

        // Columns that stay at their diagonal value give zero backward transfer.
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < i; ++j) m[i][j] = m[j][j];
        }
        CHECK(bwt(lower(m)) == 0.0);
        CHECK(accuracy(lower(m)) == doctest::Approx(oracle::accuracy(m)).epsilon(1e-14));
    }
}
