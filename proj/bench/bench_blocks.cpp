// Benchmark of the block-likelihood kernels: serial reference vs OpenMP at
// several thread counts, forward and forward+backward.

#include <benchmark/benchmark.h>

#include <random>

#include "sptte/blocks.hpp"
#include "sptte/trips.hpp"

using namespace sptte;

namespace {

struct Fixture {
    LinkStateValues state;
    BatchBlocks batch;

    Fixture(int V, int trips_n, int k_aug, int rL) {
        std::mt19937_64 rng(99);
        std::normal_distribution<double> g(0.0, 1.0);
        state.mu = Vec::NullaryExpr(V, [&](Eigen::Index) { return 10.0 + g(rng); });
        state.L = Mat::NullaryExpr(V, rL, [&](Eigen::Index, Eigen::Index) { return 0.3 * g(rng); });
        state.v = Vec::NullaryExpr(V, [&](Eigen::Index) { return 0.8 + 0.2 * std::abs(g(rng)); });
        state.d = Vec::NullaryExpr(V, [&](Eigen::Index) { return 0.7 + 0.2 * std::abs(g(rng)); });

        SlotConfig slots;
        std::uniform_int_distribution<int> link(0, V - 1);
        std::uniform_int_distribution<int> len(8, 40);
        for (int q = 0; q < trips_n; ++q) {
            std::vector<int> links;
            std::vector<double> durs;
            double total = 0.0;
            const int n = len(rng);
            for (int i = 0; i < n; ++i) {
                links.push_back(link(rng));
                durs.push_back(8.0 + (i % 5));
                total += durs.back();
            }
            TripRecord t;
            t.links = std::move(links);
            t.total_time = total;
            t.per_link_durations = std::move(durs);
            batch.trips.push_back(make_trip_blocks(augment_trip(t, k_aug, slots)));
            batch.total_rows += batch.trips.back().rows();
        }
    }
};

const Fixture& fixture() {
    static Fixture f(200, 2048, 5, 64);
    return f;
}

void bm_forward_serial(benchmark::State& bm) {
    const auto& f = fixture();
    for (auto _ : bm) {
        const NllResult r = batch_nll_serial(f.state, f.batch, JitterPolicy::likelihood());
        benchmark::DoNotOptimize(r.nll);
    }
}

void bm_forward_parallel(benchmark::State& bm) {
    const auto& f = fixture();
    const int threads = static_cast<int>(bm.range(0));
    for (auto _ : bm) {
        const NllResult r = batch_nll_parallel(f.state, f.batch, JitterPolicy::likelihood(), threads);
        benchmark::DoNotOptimize(r.nll);
    }
}

void bm_forward_backward_serial(benchmark::State& bm) {
    const auto& f = fixture();
    for (auto _ : bm) {
        const NllResult r = batch_nll_serial(f.state, f.batch, JitterPolicy::likelihood());
        const StateGrads g = batch_nll_backward(f.state, f.batch, r, 1.0, 1);
        benchmark::DoNotOptimize(g.gmu.sum());
    }
}

void bm_forward_backward_parallel(benchmark::State& bm) {
    const auto& f = fixture();
    const int threads = static_cast<int>(bm.range(0));
    for (auto _ : bm) {
        const NllResult r = batch_nll_parallel(f.state, f.batch, JitterPolicy::likelihood(), threads);
        const StateGrads g = batch_nll_backward(f.state, f.batch, r, 1.0, threads);
        benchmark::DoNotOptimize(g.gmu.sum());
    }
}

BENCHMARK(bm_forward_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_forward_parallel)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_forward_backward_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_forward_backward_parallel)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
