#include <doctest.h>

#include <random>

#include "sptte/blocks.hpp"
#include "sptte/trips.hpp"
#include "test_util.hpp"

using namespace sptte;

namespace {

BatchBlocks random_batch(int V, int trips_n, int k_aug, std::mt19937_64& rng) {
    SlotConfig slot_cfg;
    std::uniform_int_distribution<int> link(0, V - 1);
    std::uniform_int_distribution<int> len(4, 24);
    BatchBlocks batch;
    for (int q = 0; q < trips_n; ++q) {
        const int n = len(rng);
        std::vector<int> links;
        std::vector<double> durs;
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            links.push_back(link(rng));
            durs.push_back(5.0 + (i % 7));
            total += durs.back();
        }
        const auto aug = augment_trip(test::make_trip(links, 0, total, durs), k_aug, slot_cfg);
        batch.trips.push_back(make_trip_blocks(aug));
        batch.total_rows += batch.trips.back().rows();
    }
    return batch;
}

LinkStateValues random_state(int V, int rL, std::mt19937_64& rng) {
    LinkStateValues st;
    st.mu = test::random_mat(V, 1, rng, 2.0).col(0).array() + 8.0;
    st.L = test::random_mat(V, rL, rng, 0.3);
    st.v = test::random_mat(V, 1, rng, 0.2).col(0).array().abs() + 0.6;
    st.d = test::random_mat(V, 1, rng, 0.2).col(0).array().abs() + 0.5;
    return st;
}

} // namespace

TEST_CASE("OpenMP batch NLL is bitwise identical to the serial reference") {
    std::mt19937_64 rng(42);
    const int V = 40;
    const LinkStateValues st = random_state(V, 8, rng);
    const BatchBlocks batch = random_batch(V, 64, 5, rng);

    const NllResult ref = batch_nll_serial(st, batch, JitterPolicy::likelihood());
    for (int threads : {1, 2, 4, 8}) {
        CAPTURE(threads);
        const NllResult par = batch_nll_parallel(st, batch, JitterPolicy::likelihood(), threads);
        CHECK(par.nll == ref.nll); // bitwise, ordered reduction
        REQUIRE(par.cache.size() == ref.cache.size());
        for (std::size_t t = 0; t < ref.cache.size(); ++t) {
            CHECK(par.cache[t].nll == ref.cache[t].nll);
            CHECK(par.cache[t].jitter_abs == ref.cache[t].jitter_abs);
        }
    }
}

TEST_CASE("OpenMP batch NLL gradients are bitwise identical to the serial reference") {
    std::mt19937_64 rng(43);
    const int V = 32;
    const LinkStateValues st = random_state(V, 6, rng);
    const BatchBlocks batch = random_batch(V, 48, 4, rng);

    const NllResult fwd = batch_nll_serial(st, batch, JitterPolicy::likelihood());
    const StateGrads ref = batch_nll_backward(st, batch, fwd, 1.0, 1);
    for (int threads : {2, 4, 8}) {
        CAPTURE(threads);
        const StateGrads par = batch_nll_backward(st, batch, fwd, 1.0, threads);
        CHECK((par.gmu - ref.gmu).cwiseAbs().maxCoeff() == 0.0);
        CHECK((par.gv - ref.gv).cwiseAbs().maxCoeff() == 0.0);
        CHECK((par.gd - ref.gd).cwiseAbs().maxCoeff() == 0.0);
        CHECK((par.gL - ref.gL).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("parallel coverage computation matches serial") {
    SlotConfig cfg;
    std::mt19937_64 rng(44);
    std::uniform_int_distribution<int> link(0, 19);
    std::uniform_int_distribution<int> slot(0, 9);
    std::vector<TripRecord> trips;
    for (int i = 0; i < 500; ++i) {
        std::vector<int> links;
        for (int j = 0; j < 8; ++j) links.push_back(link(rng));
        trips.push_back(test::make_trip(links, static_cast<std::int64_t>(slot(rng)) * 1200, 80.0));
    }
    const auto serial = compute_coverage(trips, cfg, 20, 10, 1);
    const auto parallel = compute_coverage(trips, cfg, 20, 10, 4);
    CHECK(serial.counts == parallel.counts);
}
