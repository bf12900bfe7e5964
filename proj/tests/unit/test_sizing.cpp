#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/pipeline.hpp"
#include "amsq/sizing.hpp"
#include "support.hpp"

using namespace amsq;
using amsq::testing::candidate;
using amsq::testing::prepare_fixture;

namespace {

MetricDef higher(double r, double rstar) {
    MetricDef m;
    m.name = "h";
    m.direction = Direction::HigherBetter;
    m.threshold = r;
    m.target = rstar;
    return m;
}

MetricDef lower(double r, double rstar) {
    auto m = higher(r, rstar);
    m.direction = Direction::LowerBetter;
    return m;
}

MetricDef range(Interval th, Interval tg) {
    MetricDef m;
    m.name = "r";
    m.direction = Direction::RangeTarget;
    m.threshold_range = th;
    m.target_range = tg;
    return m;
}

std::vector<Individual> random_population(Rng& rng, std::size_t n, std::size_t objectives) {
    std::vector<Individual> pop(n);
    for (auto& ind : pop) {
        for (std::size_t k = 0; k < objectives; ++k) ind.objectives.push_back(static_cast<double>(rng.below(5)));
        ind.violation = rng.uniform() < 0.3 ? static_cast<double>(rng.below(3) + 1) : 0.0;
        ind.genes = {rng.uniform(), rng.uniform()};
    }
    return pop;
}

class FailingBackend final : public Backend {
public:
    [[nodiscard]] std::string name() const override { return "failing"; }
    [[nodiscard]] bool supports(const Deck&) const override { return true; }
    [[nodiscard]] ParameterSpace space(const Deck&) const override { return {{"x", 0.0, 1.0}}; }
    Evaluation run(const Deck&, const ParamAssignment&) override {
        Evaluation e;
        e.status = EvalStatus::SimFailed;
        e.message = "down";
        return e;
    }
};

SizingProblem problem_for(const PreparedCandidate& c, int budget, std::uint64_t seed) {
    return make_problem(PipelineConfig{}, c, budget, seed);
}

} // namespace

TEST(Score, PiecewiseLinearHigherBetter) {
    const auto m = higher(40, 80);
    EXPECT_DOUBLE_EQ(score(40, m), 60.0);
    EXPECT_DOUBLE_EQ(score(80, m), 100.0);
    EXPECT_DOUBLE_EQ(score(60, m), 80.0);
    EXPECT_DOUBLE_EQ(score(200, m), 100.0);
    EXPECT_DOUBLE_EQ(score(-20, m), 0.0);   // 1.5 spans below threshold
    EXPECT_DOUBLE_EQ(score(10, m), 30.0);
    EXPECT_DOUBLE_EQ(score(10, m, ScoreConfig{1.0}), 15.0);
    EXPECT_DOUBLE_EQ(score(-1000, m), 0.0);
    EXPECT_DOUBLE_EQ(score(NAN, m), 0.0);
}

TEST(Score, LowerBetterAndRange) {
    const auto m = lower(4.5, 0.5);
    EXPECT_DOUBLE_EQ(score(4.5, m), 60.0);
    EXPECT_DOUBLE_EQ(score(0.5, m), 100.0);
    EXPECT_DOUBLE_EQ(score(2.5, m), 80.0);
    EXPECT_DOUBLE_EQ(score(10.5, m), 0.0);

    const auto r = range({1.0, 3.0}, {1.5, 2.0});
    EXPECT_DOUBLE_EQ(score(1.75, r), 100.0);
    EXPECT_DOUBLE_EQ(score(1.0, r), 60.0);
    EXPECT_DOUBLE_EQ(score(3.0, r), 60.0);
    EXPECT_DOUBLE_EQ(score(2.5, r), 80.0);
    EXPECT_DOUBLE_EQ(score(1.25, r), 80.0);
    EXPECT_DOUBLE_EQ(score(0.25, r), 0.0);
    EXPECT_THROW(score(1.0, higher(1, 1)), Error);
    EXPECT_THROW(score(1.0, range({1, 2}, {1, 2})), Error);
}

TEST(Score, MonotoneAndBounded) {
    Rng rng(3);
    for (const auto& m : {higher(40, 80), lower(-40, -60), higher(0.1, 8000)}) {
        double prev = -1;
        const double lo = std::min(m.threshold, m.target) - 3 * std::abs(m.target - m.threshold);
        const double hi = std::max(m.threshold, m.target) + std::abs(m.target - m.threshold);
        for (int i = 0; i <= 400; ++i) {
            const double x = m.direction == Direction::HigherBetter ? lo + (hi - lo) * i / 400 : hi - (hi - lo) * i / 400;
            const double s = score(x, m);
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, 100.0);
            EXPECT_GE(s, prev - 1e-12);
            prev = s;
            EXPECT_EQ(violation(x, m) == 0.0, s >= 60.0 - 1e-9) << x;
        }
    }
}

TEST(Violation, NormalizedShortfall) {
    EXPECT_DOUBLE_EQ(violation(30, higher(40, 80)), 0.25);
    EXPECT_DOUBLE_EQ(violation(50, higher(40, 80)), 0.0);
    EXPECT_DOUBLE_EQ(violation(6.5, lower(4.5, 0.5)), 0.5);
    EXPECT_DOUBLE_EQ(violation(0.5, range({1, 3}, {1.5, 2})), 1.0);
    EXPECT_DOUBLE_EQ(violation(4.0, range({1, 3}, {1.5, 2})), 1.0);
    EXPECT_DOUBLE_EQ(violation(2.0, range({1, 3}, {1.5, 2})), 0.0);
    EXPECT_EQ(violation(INFINITY, higher(1, 2)), kFailedViolation);
}

TEST(Dominance, MatchesReference) {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        auto pop = random_population(rng, 2, 1 + rng.below(3));
        EXPECT_EQ(constrained_dominates(pop[0], pop[1]), amsq::testing::reference_dominates(pop[0], pop[1]));
    }
    EXPECT_TRUE(pareto_dominates({1, 2}, {1, 3}));
    EXPECT_FALSE(pareto_dominates({1, 2}, {1, 2}));
    EXPECT_FALSE(pareto_dominates({1, 3}, {2, 2}));
}

TEST(NondominatedSort, MatchesPeeling) {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        auto pop = random_population(rng, 1 + rng.below(40), 1 + rng.below(3));
        const auto expected = amsq::testing::brute_force_fronts(pop);
        auto fronts = fast_nondominated_sort(pop);
        for (auto& f : fronts) std::sort(f.begin(), f.end());
        ASSERT_EQ(fronts, expected);
        for (std::size_t r = 0; r < fronts.size(); ++r) {
            for (auto i : fronts[r]) EXPECT_EQ(pop[i].rank, static_cast<int>(r));
        }
    }
}

TEST(Crowding, BoundariesInfiniteInteriorSummed) {
    std::vector<Individual> pop(4);
    pop[0].objectives = {0, 3};
    pop[1].objectives = {1, 2};
    pop[2].objectives = {2, 1};
    pop[3].objectives = {3, 0};
    const auto d = crowding_distance(pop, {0, 1, 2, 3});
    EXPECT_TRUE(std::isinf(d[0]));
    EXPECT_TRUE(std::isinf(d[3]));
    EXPECT_NEAR(d[1], 4.0 / 3.0, 1e-12);
    EXPECT_NEAR(d[2], 4.0 / 3.0, 1e-12);
    const auto two = crowding_distance(pop, {1, 2});
    EXPECT_TRUE(std::isinf(two[0]) && std::isinf(two[1]));
}

TEST(Nsga2Step, KeepsBestFronts) {
    Rng rng(8);
    NsgaConfig cfg;
    cfg.population = 10;
    for (int trial = 0; trial < 100; ++trial) {
        auto parents = random_population(rng, 10, 2);
        auto offspring = random_population(rng, 10, 2);
        const auto next = nsga2_step(parents, offspring, cfg);
        ASSERT_EQ(next.size(), 10u);
        auto all = parents;
        all.insert(all.end(), offspring.begin(), offspring.end());
        auto fronts = fast_nondominated_sort(all);
        int worst_kept = 0;
        for (const auto& ind : next) {
            auto it = std::find_if(all.begin(), all.end(), [&](const Individual& a) {
                return a.objectives == ind.objectives && a.violation == ind.violation && a.genes == ind.genes;
            });
            ASSERT_NE(it, all.end());
            worst_kept = std::max(worst_kept, it->rank);
        }
        // Everything strictly better than the last admitted front survives.
        std::size_t better = 0;
        for (const auto& a : all) better += a.rank < worst_kept;
        EXPECT_LE(better, 10u);
        for (const auto& a : all) {
            if (a.rank >= worst_kept) continue;
            EXPECT_TRUE(std::any_of(next.begin(), next.end(), [&](const Individual& n) { return n.genes == a.genes; }));
        }
    }
}

TEST(Offspring, StaysInUnitBox) {
    Rng rng(13);
    auto pop = random_population(rng, 20, 2);
    fast_nondominated_sort(pop);
    for (auto& p : pop) p.genes = {rng.uniform(), rng.uniform(), 0.0, 1.0};
    NsgaConfig cfg;
    for (int i = 0; i < 50; ++i) {
        const auto kids = make_offspring(pop, 20, rng, cfg);
        ASSERT_EQ(kids.size(), 20u);
        for (const auto& k : kids) {
            ASSERT_EQ(k.size(), 4u);
            for (double g : k) {
                EXPECT_GE(g, 0.0);
                EXPECT_LE(g, 1.0);
            }
        }
    }
    EXPECT_EQ(make_offspring(pop, 7, rng, cfg).size(), 7u);
}

TEST(Encoding, RoundTripsLinearAndLog) {
    const ParameterSpace space{{"lin", 0.3, 1.5}, {"log", 1e-6, 1e-3}};
    const ParamAssignment p{{"lin", 0.9}, {"log", 1e-5}};
    const auto g = encode(space, p);
    EXPECT_NEAR(g[0], 0.5, 1e-12);
    EXPECT_NEAR(g[1], 1.0 / 3.0, 1e-12);
    const auto back = decode(space, g);
    EXPECT_NEAR(back.at("lin"), 0.9, 1e-12);
    EXPECT_NEAR(back.at("log"), 1e-5, 1e-18);
    EXPECT_EQ(decode(space, {-1.0, 2.0}).at("log"), 1e-3);
    EXPECT_THROW(encode(space, {{"lin", 1.0}}), Error);
}

TEST(Identify, FindsFeasiblePolarityOnly) {
    const auto prep = prepare_fixture("corpus/ota5t.sp");
    SurrogateBackend backend;
    std::vector<IdentificationResult> results;
    for (int perm : {0, 1}) {
        const auto& c = candidate(prep, CircuitClass::SingleEndedOpAmp, perm);
        results.push_back(identify(problem_for(c, 200, 7), backend));
    }
    const auto truthful = candidate(prep, CircuitClass::SingleEndedOpAmp, 0).deck.dut.find_port("inp")->ptype ==
                                  PortType::InputPlus
                              ? 0
                              : 1;
    const auto& good = results[static_cast<std::size_t>(truthful)];
    const auto& bad = results[static_cast<std::size_t>(1 - truthful)];
    ASSERT_TRUE(good.accepted);
    EXPECT_EQ(good.trials_used, *good.first_feasible_trial);
    EXPECT_TRUE(good.records.back().feasible);
    EXPECT_FALSE(bad.accepted);
    EXPECT_EQ(bad.trials_used, 200);
    EXPECT_EQ(choose_polarity(results).permutation_index, truthful);
}

TEST(Identify, DeterministicAcrossWorkers) {
    const auto prep = prepare_fixture("corpus/fd_telescopic.sp");
    SurrogateBackend backend;
    auto p = problem_for(candidate(prep, CircuitClass::FullyDiffOpAmp, 0), 120, 3);
    const auto serial = optimize(p, backend);
    p.workers = 4;
    EXPECT_EQ(optimize(p, backend), serial);
    p.seed = 4;
    EXPECT_NE(optimize(p, backend), serial);
}

TEST(Optimize, UsesExactBudget) {
    const auto prep = prepare_fixture("corpus/ota5t.sp");
    SurrogateBackend backend;
    for (int budget : {1, 7, 20, 33}) {
        std::vector<TrialRecord> all;
        const auto feasible = optimize(problem_for(candidate(prep, CircuitClass::SingleEndedOpAmp, 0), budget, 1), backend,
                                       nullptr, &all);
        ASSERT_EQ(all.size(), static_cast<std::size_t>(budget));
        for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].trial_index, static_cast<int>(i) + 1);
        EXPECT_EQ(feasible.size(), static_cast<std::size_t>(std::count_if(all.begin(), all.end(),
                                                                          [](const TrialRecord& r) { return r.feasible; })));
    }
}

TEST(Optimize, InitialPointsGoFirst) {
    const auto prep = prepare_fixture("corpus/ota5t.sp");
    SurrogateBackend backend;
    auto p = problem_for(candidate(prep, CircuitClass::SingleEndedOpAmp, 0), 30, 1);
    p.initial_points = {{{"gm", 1e-3}, {"ro", 1e5}, {"Ibias", 1e-5}}};
    std::vector<TrialRecord> all;
    optimize(p, backend, nullptr, &all);
    EXPECT_NEAR(all.front().params.at("gm"), 1e-3, 1e-15);
    EXPECT_NEAR(all.front().params.at("ro"), 1e5, 1e-7);
}

TEST(Optimize, Preconditions) {
    const auto prep = prepare_fixture("corpus/ota5t.sp");
    SurrogateBackend backend;
    auto p = problem_for(candidate(prep, CircuitClass::SingleEndedOpAmp, 0), 0, 1);
    EXPECT_THROW(optimize(p, backend), Error);
    p.budget = 10;
    p.nsga.population = 5;
    EXPECT_THROW(optimize(p, backend), Error);
    FailingBackend down;
    p.nsga.population = 4;
    try {
        identify(p, down);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BackendDown);
    }
}

TEST(Records, ScoresFollowTableOrder) {
    const auto specs = default_spec_table(CircuitClass::SingleEndedOpAmp);
    Evaluation e;
    for (const auto& m : specs.metrics) e.metrics[m.name] = m.target;
    auto r = make_record(e, specs, 4);
    EXPECT_TRUE(r.feasible);
    EXPECT_EQ(r.trial_index, 4);
    for (double s : r.scores) EXPECT_DOUBLE_EQ(s, 100.0);
    e.metrics["Slew Rate"] = 0.0; // non-gating shortfall keeps feasibility
    r = make_record(e, specs, 1);
    EXPECT_TRUE(r.feasible);
    EXPECT_GT(r.violations[4], 0.0);
    e.metrics["Gain"] = 10.0;
    EXPECT_FALSE(make_record(e, specs, 1).feasible);
    e.status = EvalStatus::Timeout;
    r = make_record(e, specs, 1);
    EXPECT_FALSE(r.feasible);
    EXPECT_TRUE(r.raw.empty());
    EXPECT_EQ(r.violations.front(), kFailedViolation);
}

TEST(ChoosePolarity, TieBreaksOnIndex) {
    std::vector<IdentificationResult> rs(3);
    for (int i = 0; i < 3; ++i) rs[static_cast<std::size_t>(i)].polarity.permutation_index = i;
    rs[1].accepted = true;
    rs[1].first_feasible_trial = 9;
    rs[2].accepted = true;
    rs[2].first_feasible_trial = 9;
    EXPECT_EQ(choose_polarity(rs).permutation_index, 1);
    rs[2].first_feasible_trial = 3;
    EXPECT_EQ(choose_polarity(rs).permutation_index, 2);
    rs[1].accepted = rs[2].accepted = false;
    try {
        choose_polarity(rs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoFeasiblePolarity);
    }
}

TEST(Manifest, RoundTrip) {
    const auto prep = prepare_fixture("corpus/ota5t.sp");
    SurrogateBackend backend;
    const auto p = problem_for(candidate(prep, CircuitClass::SingleEndedOpAmp, 0), 25, 9);
    std::vector<TrialRecord> all;
    optimize(p, backend, nullptr, &all);
    const auto path = amsq::testing::scratch_dir("manifest") + "/m.jsonl";
    write_manifest(path, "optimize", p, all);
    const auto m = read_manifest(path);
    EXPECT_EQ(m.kind, "optimize");
    EXPECT_EQ(m.seed, 9u);
    EXPECT_EQ(m.budget, 25);
    EXPECT_EQ(m.config_hash, config_hash(p));
    EXPECT_EQ(m.records, all);

    auto q = p;
    q.seed = 10;
    EXPECT_NE(config_hash(q), config_hash(p));
    std::ofstream(path, std::ios::trunc) << "{not json\n";
    EXPECT_THROW(read_manifest(path), Error);
    EXPECT_THROW(read_manifest(path + ".missing"), Error);
}
