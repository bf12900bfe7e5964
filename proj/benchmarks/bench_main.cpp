#include <benchmark/benchmark.h>

#include "amsq/labeling.hpp"
#include "amsq/netlist.hpp"
#include "amsq/pipeline.hpp"
#include "amsq/sizing.hpp"

using namespace amsq;

namespace {

std::vector<Individual> population(std::size_t n, std::size_t objectives, Rng& rng) {
    std::vector<Individual> pop(n);
    for (auto& ind : pop) {
        for (std::size_t j = 0; j < objectives; ++j) ind.objectives.push_back(rng.uniform());
        ind.violation = rng.uniform() < 0.2 ? rng.uniform() : 0.0;
    }
    return pop;
}

std::string chain_netlist(int stages) {
    std::string text = ".subckt chain in out vdd vss\n";
    std::string prev = "in";
    for (int i = 0; i < stages; ++i) {
        const std::string next = i + 1 == stages ? "out" : "n" + std::to_string(i);
        text += "MP" + std::to_string(i) + " " + next + " " + prev + " vdd vdd pmos W=2u L=180n\n";
        text += "MN" + std::to_string(i) + " " + next + " " + prev + " vss vss nmos W=1u L=180n\n";
        text += "C" + std::to_string(i) + " " + next + " vss 10f\n";
        prev = next;
    }
    return text + ".ends\n";
}

} // namespace

static void BM_NondominatedSort(benchmark::State& state) {
    Rng rng(1);
    const auto base = population(static_cast<std::size_t>(state.range(0)), 6, rng);
    for (auto _ : state) {
        auto pop = base;
        benchmark::DoNotOptimize(fast_nondominated_sort(pop));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_NondominatedSort)->RangeMultiplier(2)->Range(32, 512)->Complexity();

static void BM_KMeans(benchmark::State& state) {
    Rng rng(2);
    Matrix x(static_cast<std::size_t>(state.range(0)));
    for (auto& row : x) {
        for (int j = 0; j < 8; ++j) row.push_back(100 * rng.uniform());
    }
    for (auto _ : state) benchmark::DoNotOptimize(kmeans(x, 30, 7));
}
BENCHMARK(BM_KMeans)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_ParseNetlist(benchmark::State& state) {
    const auto text = chain_netlist(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(parse_netlist(text));
    state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_ParseNetlist)->Arg(10)->Arg(1000);

static void BM_EmitNetlist(benchmark::State& state) {
    const auto n = parse_netlist(chain_netlist(static_cast<int>(state.range(0))));
    for (auto _ : state) benchmark::DoNotOptimize(emit_netlist(n));
}
BENCHMARK(BM_EmitNetlist)->Arg(1000);

static void BM_Standardize(benchmark::State& state) {
    Rng rng(3);
    Matrix x(2000);
    for (auto& row : x) {
        for (int j = 0; j < 14; ++j) row.push_back(100 * rng.uniform());
    }
    for (auto _ : state) benchmark::DoNotOptimize(standardize(x));
}
BENCHMARK(BM_Standardize);

BENCHMARK_MAIN();
