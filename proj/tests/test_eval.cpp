#include <doctest.h>

#include <algorithm>
#include <random>

#include "sptte/eval.hpp"
#include "test_util.hpp"

using namespace sptte;

TEST_CASE("point metrics") {
    SUBCASE("perfect predictions are zero") {
        const std::vector<double> v = {10.0, 20.0, 30.0};
        const MetricReport r = point_metrics(v, v);
        CHECK(r.rmse == 0.0);
        CHECK(r.mae == 0.0);
        CHECK(r.mape == 0.0);
    }
    SUBCASE("single pair (110, 100)") {
        const MetricReport r = point_metrics({110.0}, {100.0});
        CHECK(r.mae == doctest::Approx(10.0));
        CHECK(r.mape == doctest::Approx(0.10));
        CHECK(r.rmse == doctest::Approx(10.0));
    }
    SUBCASE("random vectors match a scalar-loop oracle") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> uni(50.0, 150.0);
        std::vector<double> pred, obs;
        for (int i = 0; i < 200; ++i) {
            pred.push_back(uni(rng));
            obs.push_back(uni(rng));
        }
        double se = 0, ae = 0, ape = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            se += (pred[i] - obs[i]) * (pred[i] - obs[i]);
            ae += std::abs(pred[i] - obs[i]);
            ape += std::abs((pred[i] - obs[i]) / obs[i]);
        }
        const MetricReport r = point_metrics(pred, obs);
        CHECK(r.rmse == doctest::Approx(std::sqrt(se / 200)).epsilon(1e-12));
        CHECK(r.mae == doctest::Approx(ae / 200).epsilon(1e-12));
        CHECK(r.mape == doctest::Approx(ape / 200).epsilon(1e-12));
    }
    SUBCASE("length mismatch errors") {
        CHECK_THROWS_AS(point_metrics({1.0}, {1.0, 2.0}), dimension_error);
    }
}

TEST_CASE("crps metric averages per-trip values") {
    const double c1 = crps_gaussian(0.0, 1.0, 0.0);
    CHECK(crps_metric({0.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}) == doctest::Approx(c1));
    const double c2 = crps_gaussian(5.0, 2.0, 7.0);
    CHECK(crps_metric({0.0, 5.0}, {1.0, 2.0}, {0.0, 7.0}) == doctest::Approx(0.5 * (c1 + c2)));
    // near-point-mass forecasts at the observation score ~0
    CHECK(crps_metric({3.0}, {1e-9}, {3.0}) < 1e-8);
}

TEST_CASE("slotwise report") {
    SUBCASE("single-slot data equals the global report") {
        const std::vector<double> pred = {10, 12, 9}, obs = {11, 12, 10};
        const auto rep = slotwise_report(pred, obs, {5, 5, 5}, 72);
        REQUIRE(rep.size() == 1);
        const MetricReport global = point_metrics(pred, obs);
        CHECK(rep.at(5).mae == doctest::Approx(global.mae));
    }
    SUBCASE("per-slot MAEs recompose the global MAE as a weighted mean") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> uni(80.0, 120.0);
        std::vector<double> pred, obs;
        std::vector<int> slots;
        for (int i = 0; i < 90; ++i) {
            pred.push_back(uni(rng));
            obs.push_back(uni(rng));
            slots.push_back(i % 3 + 72 * (i % 2)); // slots of day 0,1,2 across two days
        }
        const auto rep = slotwise_report(pred, obs, slots, 72);
        double weighted = 0.0;
        std::size_t n = 0;
        for (const auto& [sod, r] : rep) {
            weighted += r.mae * static_cast<double>(r.count);
            n += r.count;
        }
        const MetricReport global = point_metrics(pred, obs);
        CHECK(weighted / static_cast<double>(n) == doctest::Approx(global.mae).epsilon(1e-12));
    }
    SUBCASE("empty slots are absent, not zero") {
        const auto rep = slotwise_report({1.0}, {1.0}, {3}, 72);
        CHECK(rep.size() == 1);
        CHECK(rep.count(4) == 0);
    }
}

TEST_CASE("sampled point predictions are seeded") {
    const std::vector<double> m = {10, 20}, s = {1, 2};
    CHECK(sampled_point_predictions(m, s, 7) == sampled_point_predictions(m, s, 7));
    CHECK(sampled_point_predictions(m, s, 7) != sampled_point_predictions(m, s, 8));
}

namespace {

std::vector<TripRecord> sparsify_fixture() {
    std::vector<TripRecord> trips;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> link(0, 19);
    for (int slot = 0; slot < 6; ++slot) {
        for (int i = 0; i < 10; ++i) {
            std::vector<int> links;
            for (int j = 0; j < 5; ++j) links.push_back(link(rng));
            trips.push_back(test::make_trip(links, static_cast<std::int64_t>(slot) * 1200, 50.0));
        }
    }
    return trips;
}

std::vector<std::string> keys_of(const std::vector<TripRecord>& trips) {
    std::vector<std::string> keys;
    for (const auto& t : trips) {
        std::string k = std::to_string(t.depart_ts);
        for (int l : t.links) k += ":" + std::to_string(l);
        keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

} // namespace

TEST_CASE("sparsify") {
    SlotConfig slots;
    const auto trips = sparsify_fixture();

    SUBCASE("identity settings keep everything") {
        const auto res = sparsify(trips, slots, 20, 1.0, 0.0, 5);
        CHECK(res.training.size() == trips.size());
        CHECK(res.knocked_links.empty());
    }
    SUBCASE("full spatial knockout empties the training set") {
        const auto res = sparsify(trips, slots, 20, 1.0, 1.0, 5);
        CHECK(res.training.empty());
        CHECK(res.knocked_links.size() == 20);
    }
    SUBCASE("temporal keep rounds up per slot") {
        const auto res = sparsify(trips, slots, 20, 0.75, 0.0, 5);
        // ceil(0.75 * 10) = 8 per slot, 6 slots
        CHECK(res.training.size() == 48);
        std::map<std::int64_t, int> per_slot;
        for (const auto& t : res.training) ++per_slot[t.depart_ts];
        for (const auto& [ts, n] : per_slot) CHECK(n == 8);
    }
    SUBCASE("deterministic per seed") {
        const auto a = sparsify(trips, slots, 20, 0.6, 0.1, 9);
        const auto b = sparsify(trips, slots, 20, 0.6, 0.1, 9);
        CHECK(keys_of(a.training) == keys_of(b.training));
        CHECK(a.knocked_links == b.knocked_links);
    }
    SUBCASE("stricter settings select nested subsets when seeds align") {
        const auto loose = sparsify(trips, slots, 20, 0.8, 0.1, 13);
        const auto strict = sparsify(trips, slots, 20, 0.5, 0.2, 13);
        const auto lk = keys_of(loose.training);
        for (const auto& k : keys_of(strict.training))
            CHECK(std::binary_search(lk.begin(), lk.end(), k));
        // knocked links nest too
        for (int l : loose.knocked_links)
            CHECK(std::find(strict.knocked_links.begin(), strict.knocked_links.end(), l) !=
                  strict.knocked_links.end());
    }
    SUBCASE("fraction range is validated") {
        CHECK_THROWS_AS(sparsify(trips, slots, 20, 1.2, 0.0, 1), schema_error);
        CHECK_THROWS_AS(sparsify(trips, slots, 20, 1.0, -0.1, 1), schema_error);
    }
}
