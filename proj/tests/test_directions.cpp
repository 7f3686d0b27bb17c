#include <doctest.h>

#include "cmatch/harness.hpp"

using namespace cmatch;

// Single-seed direction checks on the default scenario. The three-seed
// versions with pinned margins live in the acceptance runner.

namespace {

SeedResult run_default(Mode mode, StrategyKind strategy, double lambda) {
    ExperimentConfig c;
    c.scenario.mode = mode;
    c.strategy = strategy;
    c.train.lambda = lambda;
    return run_seed(c, 0);
}

}  // namespace

TEST_CASE("naive training forgets earlier tasks") {
    const auto naive = run_default(Mode::til, StrategyKind::naive, 0.0);
    REQUIRE(naive.ok);
    CHECK(naive.bwt < 0.0);
}

TEST_CASE("the regularizer reduces forgetting in task-incremental mode") {
    const auto off = run_default(Mode::til, StrategyKind::cm, 0.0);
    const auto on = run_default(Mode::til, StrategyKind::cm, 0.1);
    REQUIRE(off.ok);
    REQUIRE(on.ok);
    CHECK(on.bwt > off.bwt);
}
