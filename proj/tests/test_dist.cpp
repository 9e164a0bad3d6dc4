#include <doctest.h>

#include <numbers>
#include <random>

#include "sptte/dist.hpp"
#include "sptte/trips.hpp"
#include "test_util.hpp"

using namespace sptte;

namespace {

LinkStateValues random_state(int V, int rL, std::mt19937_64& rng, double l_scale = 0.4) {
    LinkStateValues st;
    st.mu = test::random_mat(V, 1, rng, 3.0).col(0).array() + 10.0;
    st.L = test::random_mat(V, rL, rng, l_scale);
    st.v = test::random_mat(V, 1, rng, 0.3).col(0).array().abs() + 0.5;
    st.d = test::random_mat(V, 1, rng, 0.3).col(0).array().abs() + 0.4;
    return st;
}

Mat dense_sigma(const LinkStateValues& st) {
    const Vec sqrtv = st.v.cwiseSqrt();
    Mat S = sqrtv.asDiagonal() * st.L * st.L.transpose() * sqrtv.asDiagonal();
    S.diagonal() += st.d;
    return S;
}

Mat dense_indicator(const TripBlocks& tb, int V) {
    Mat A = Mat::Zero(tb.rows(), V);
    for (int r = 0; r < tb.rows(); ++r)
        for (int i = 0; i < tb.nlinks(); ++i) A(r, tb.links[i]) = tb.A(r, i);
    return A;
}

// literal dense-route NLL: materialize I_Q (x) Sigma and the stacked
// block-diagonal indicator, add the per-block jitters the implementation
// reports, and evaluate the Gaussian NLL on the full matrix
double dense_nll_oracle(const LinkStateValues& st, const BatchBlocks& batch,
                        const std::vector<BlockCache>& cache) {
    const int V = st.num_links();
    const int Q = static_cast<int>(batch.trips.size());
    int total_rows = 0;
    for (const auto& t : batch.trips) total_rows += t.rows();

    const Mat Sigma = dense_sigma(st);
    Mat kron = Mat::Zero(Q * V, Q * V);
    for (int q = 0; q < Q; ++q) kron.block(q * V, q * V, V, V) = Sigma;

    Mat B = Mat::Zero(total_rows, Q * V);
    Vec resid(total_rows);
    int row0 = 0;
    for (int q = 0; q < Q; ++q) {
        const auto& tb = batch.trips[q];
        const Mat A = dense_indicator(tb, V);
        B.block(row0, q * V, tb.rows(), V) = A;
        resid.segment(row0, tb.rows()) = tb.targets - A * st.mu;
        row0 += tb.rows();
    }
    Mat big = B * kron * B.transpose();
    row0 = 0;
    for (int q = 0; q < Q; ++q) {
        for (int r = 0; r < batch.trips[q].rows(); ++r) big(row0 + r, row0 + r) += cache[q].jitter_abs;
        row0 += batch.trips[q].rows();
    }
    const Eigen::LLT<Mat> llt(big);
    REQUIRE(llt.info() == Eigen::Success);
    double logdet = 0.0;
    for (int i = 0; i < total_rows; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const Vec y = llt.solve(resid);
    return 0.5 * (logdet + resid.dot(y) + total_rows * std::log(2.0 * std::numbers::pi));
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

double crps_numeric(double mu, double sigma, double y) {
    const auto cdf = [&](double t) { return 0.5 * std::erfc(-(t - mu) / (sigma * std::numbers::sqrt2)); };
    const double lo = std::min(mu - 14.0 * sigma, y - 2.0 * sigma);
    const double hi = std::max(mu + 14.0 * sigma, y + 2.0 * sigma);
    const auto f_below = [&](double t) { return cdf(t) * cdf(t); };
    const auto f_above = [&](double t) { return (cdf(t) - 1.0) * (cdf(t) - 1.0); };
    return simpson(f_below, lo, y, 20000) + simpson(f_above, y, hi, 20000);
}

} // namespace

TEST_CASE("trip_mean sums with multiplicity") {
    std::mt19937_64 rng(2);
    LinkStateValues st = random_state(8, 3, rng);
    st.mu(3) = 42.0;
    CHECK(trip_mean(st, {{3, 1}}) == 42.0);
    st.mu(5) = 10.0;
    CHECK(trip_mean(st, {{5, 2}}) == 20.0);
    const std::vector<std::pair<int, int>> rs = {{0, 1}, {2, 3}, {5, 1}, {7, 2}};
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(8);
    for (const auto& [l, c] : rs) a(l) = c;
    CHECK(trip_mean(st, rs) == doctest::Approx(a * st.mu).epsilon(1e-14));
    CHECK_THROWS_AS(trip_mean(st, {}), schema_error);
}

TEST_CASE("block_cov structure") {
    std::mt19937_64 rng(4);
    SUBCASE("L = 0, single row: diagonal-only variance") {
        LinkStateValues st = random_state(5, 3, rng);
        st.L.setZero();
        TripAug aug;
        aug.rows = {{{1, 1}, {2, 1}}};
        aug.targets = {20.0};
        const auto tb = make_trip_blocks(aug);
        const Mat M = block_cov(st, tb);
        REQUIRE(M.rows() == 1);
        CHECK(M(0, 0) == doctest::Approx(st.d(1) + st.d(2)).epsilon(1e-14));
    }
    SUBCASE("disjoint rows with L = 0 have zero covariance") {
        LinkStateValues st = random_state(6, 3, rng);
        st.L.setZero();
        TripAug aug;
        aug.rows = {{{0, 1}, {1, 1}, {2, 1}, {3, 1}}, {{0, 1}, {2, 1}}, {{1, 1}, {3, 1}}};
        aug.targets = {40.0, 20.0, 20.0};
        const Mat M = block_cov(st, make_trip_blocks(aug));
        CHECK(M(1, 2) == 0.0);
        CHECK(M(2, 1) == 0.0);
    }
    SUBCASE("random augmented trips match the dense construction oracle") {
        SlotConfig slot_cfg;
        std::uniform_int_distribution<int> link(0, 11);
        std::uniform_int_distribution<int> len(3, 14);
        std::uniform_int_distribution<int> kk(0, 3);
        for (int rep = 0; rep < 30; ++rep) {
            const LinkStateValues st = random_state(12, 4, rng);
            std::vector<int> links;
            const int n = len(rng);
            for (int i = 0; i < n; ++i) links.push_back(link(rng));
            std::vector<double> durs(links.size(), 5.0);
            const auto aug =
                augment_trip(test::make_trip(links, 0, 5.0 * n, durs), kk(rng), slot_cfg);
            const auto tb = make_trip_blocks(aug);
            const Mat M = block_cov(st, tb);
            const Mat A = dense_indicator(tb, 12);
            const Mat M_oracle = A * dense_sigma(st) * A.transpose();
            const double scale = M_oracle.cwiseAbs().maxCoeff();
            CHECK((M - M_oracle).cwiseAbs().maxCoeff() / scale < 1e-10);
            CHECK((M - M.transpose()).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("batch NLL: simple closed forms and additivity") {
    SUBCASE("one 1-link trip, zero residual: 1/2 log(2 pi sigma^2)") {
        LinkStateValues st;
        st.mu = Vec::Constant(1, 100.0);
        st.L = Mat::Zero(1, 2);
        st.v = Vec::Constant(1, 1.0);
        st.d = Vec::Constant(1, 4.0);
        TripAug aug;
        aug.rows = {{{0, 1}}};
        aug.targets = {100.0};
        BatchBlocks batch;
        batch.trips.push_back(make_trip_blocks(aug));
        batch.total_rows = 1;
        const NllResult r = batch_nll_serial(st, batch, JitterPolicy::likelihood());
        CHECK(r.cache[0].jitter_abs == 0.0);
        CHECK(r.nll == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi * 4.0)).epsilon(1e-12));
    }
    SUBCASE("three-trip batch equals the sum of single-trip evaluations") {
        std::mt19937_64 rng(6);
        const LinkStateValues st = random_state(9, 3, rng);
        SlotConfig slot_cfg;
        BatchBlocks batch;
        double individual = 0.0;
        for (int q = 0; q < 3; ++q) {
            std::vector<int> links;
            for (int i = 0; i < 5 + q; ++i) links.push_back((q * 3 + i) % 9);
            std::vector<double> durs(links.size(), 8.0 + q);
            const auto aug = augment_trip(
                test::make_trip(links, 0, (8.0 + q) * links.size(), durs), 2, slot_cfg);
            BatchBlocks single;
            single.trips.push_back(make_trip_blocks(aug));
            individual += batch_nll_serial(st, single, JitterPolicy::likelihood()).nll;
            batch.trips.push_back(make_trip_blocks(aug));
        }
        const NllResult joint = batch_nll_serial(st, batch, JitterPolicy::likelihood());
        CHECK(joint.nll == doctest::Approx(individual).epsilon(1e-15));
    }
}

TEST_CASE("duplicated augmentation rows stay finite and match the jittered dense oracle") {
    std::mt19937_64 rng(8);
    const LinkStateValues st = random_state(4, 2, rng);
    // a single-link trip with k_aug = 1 duplicates the full row exactly
    SlotConfig slot_cfg;
    const auto aug = augment_trip(test::make_trip({2}, 0, 12.0, {12.0}), 1, slot_cfg);
    REQUIRE(aug.rows.size() == 2);
    REQUIRE(aug.rows[0] == aug.rows[1]);
    BatchBlocks batch;
    batch.trips.push_back(make_trip_blocks(aug));
    const NllResult r = batch_nll_serial(st, batch, JitterPolicy::likelihood());
    CHECK(std::isfinite(r.nll));
    CHECK(r.cache[0].jitter_abs > 0.0);
    const double oracle = dense_nll_oracle(st, batch, r.cache);
    CHECK(r.nll == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("block NLL equals the dense kron-materialized NLL on random instances") {
    std::mt19937_64 rng(10);
    SlotConfig slot_cfg;
    std::uniform_int_distribution<int> nl(4, 20);
    std::uniform_int_distribution<int> nt(1, 8);
    std::uniform_int_distribution<int> kk(0, 3);
    std::uniform_int_distribution<int> len(2, 10);
    for (int rep = 0; rep < 25; ++rep) {
        const int V = nl(rng);
        const LinkStateValues st = random_state(V, 3, rng);
        std::uniform_int_distribution<int> link(0, V - 1);
        BatchBlocks batch;
        const int k_aug = kk(rng);
        const int trips_n = nt(rng);
        for (int q = 0; q < trips_n; ++q) {
            std::vector<int> links;
            const int n = len(rng);
            for (int i = 0; i < n; ++i) links.push_back(link(rng));
            std::vector<double> durs;
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                durs.push_back(6.0 + (i % 5));
                total += durs.back();
            }
            const auto aug = augment_trip(test::make_trip(links, 0, total, durs), k_aug, slot_cfg);
            batch.trips.push_back(make_trip_blocks(aug));
        }
        const NllResult r = batch_nll_serial(st, batch, JitterPolicy::likelihood());
        const double oracle = dense_nll_oracle(st, batch, r.cache);
        CHECK(std::abs(r.nll - oracle) / std::abs(oracle) < 1e-10);
    }
}

TEST_CASE("predict_joint") {
    std::mt19937_64 rng(12);
    SUBCASE("no shared links and L = 0: zero cross covariance") {
        LinkStateValues st = random_state(6, 2, rng);
        st.L.setZero();
        const TripGaussian tg = predict_joint(st, {{{0, 1}, {1, 1}}, {{3, 1}, {4, 2}}});
        CHECK(tg.cov(0, 1) == 0.0);
        // squared multiplicity on the diagonal contribution
        CHECK(tg.cov(1, 1) == doctest::Approx(st.d(3) + 4.0 * st.d(4)).epsilon(1e-14));
    }
    SUBCASE("identical trips correlate exactly 1") {
        const LinkStateValues st = random_state(6, 3, rng);
        const std::vector<std::pair<int, int>> rs = {{1, 1}, {2, 1}, {4, 1}};
        const TripGaussian tg = predict_joint(st, {rs, rs});
        CHECK(tg.cov(0, 1) / std::sqrt(tg.cov(0, 0) * tg.cov(1, 1)) == doctest::Approx(1.0));
        CHECK(tg.mean(0) == tg.mean(1));
    }
    SUBCASE("partial overlap matches the dense oracle") {
        const LinkStateValues st = random_state(10, 4, rng);
        const std::vector<std::vector<std::pair<int, int>>> rowsets = {
            {{0, 1}, {1, 1}, {2, 2}}, {{2, 1}, {3, 1}}, {{5, 1}, {6, 1}, {7, 1}}};
        const TripGaussian tg = predict_joint(st, rowsets);
        Mat A = Mat::Zero(3, 10);
        for (int q = 0; q < 3; ++q)
            for (const auto& [l, c] : rowsets[q]) A(q, l) = c;
        const Mat oracle = A * dense_sigma(st) * A.transpose();
        CHECK((tg.cov - oracle).cwiseAbs().maxCoeff() / oracle.cwiseAbs().maxCoeff() < 1e-10);
        const Vec mean_oracle = A * st.mu;
        CHECK((tg.mean - mean_oracle).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("marginal consistency: cross diag equals marginal-only") {
        const LinkStateValues st = random_state(8, 3, rng);
        const std::vector<std::vector<std::pair<int, int>>> rowsets = {
            {{0, 1}, {3, 1}}, {{3, 2}, {4, 1}}, {{6, 1}}};
        const TripGaussian full = predict_joint(st, rowsets, true);
        const TripGaussian marg = predict_joint(st, rowsets, false);
        for (int q = 0; q < 3; ++q) CHECK(full.cov(q, q) == doctest::Approx(marg.cov(q, q)).epsilon(1e-14));
        Eigen::SelfAdjointEigenSolver<Mat> es(full.cov);
        CHECK(es.eigenvalues().minCoeff() > -1e-12 * full.cov.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("crps_gaussian") {
    SUBCASE("center value") {
        // y = mu, sigma = 1: 2 phi(0) - 1/sqrt(pi)
        const double expect = 2.0 / std::sqrt(2.0 * std::numbers::pi) - 1.0 / std::sqrt(std::numbers::pi);
        CHECK(crps_gaussian(0.0, 1.0, 0.0) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(crps_gaussian(0.0, 1.0, 0.0) == doctest::Approx(0.23370).epsilon(1e-4));
    }
    SUBCASE("matches numeric integration") {
        for (double sigma : {0.1, 1.0, 10.0})
            for (double z : {-3.0, -1.0, 0.0, 0.7, 2.5}) {
                const double y = 5.0 + z * sigma;
                CHECK(crps_gaussian(5.0, sigma, y) ==
                      doctest::Approx(crps_numeric(5.0, sigma, y)).epsilon(1e-7));
            }
    }
    SUBCASE("tiny sigma at the observation is ~0") { CHECK(crps_gaussian(10.0, 1e-9, 10.0) < 1e-8); }
    SUBCASE("large |z| approaches |y - mu|") {
        const double v = crps_gaussian(0.0, 1.0, 8.0);
        CHECK(std::abs(v - 8.0) < 1e-3);
    }
    SUBCASE("translation invariance") {
        for (double c : {-100.0, 3.5, 1e4})
            CHECK(crps_gaussian(2.0 + c, 1.5, 3.0 + c) ==
                  doctest::Approx(crps_gaussian(2.0, 1.5, 3.0)).epsilon(1e-12));
    }
    SUBCASE("nonpositive sigma is an error") {
        CHECK_THROWS_AS(crps_gaussian(0.0, 0.0, 1.0), schema_error);
    }
}

TEST_CASE("sample: determinism and moment convergence") {
    std::mt19937_64 rng(14);
    TripGaussian tg;
    tg.mean = (Vec(2) << 3.0, -1.0).finished();
    Mat G = test::random_mat(2, 2, rng);
    tg.cov = G * G.transpose() + 0.5 * Mat::Identity(2, 2);

    const Mat d1 = sample(tg, 1000, 77);
    const Mat d2 = sample(tg, 1000, 77);
    CHECK((d1 - d2).cwiseAbs().maxCoeff() == 0.0);

    const Mat big = sample(tg, 200000, 5);
    const Vec emp_mean = big.colwise().mean().transpose();
    Mat centered = big.rowwise() - emp_mean.transpose();
    const Mat emp_cov = centered.transpose() * centered / (big.rows() - 1.0);
    CHECK((emp_cov - tg.cov).cwiseAbs().maxCoeff() / tg.cov.cwiseAbs().maxCoeff() < 0.02);

    SUBCASE("zero covariance limit: draws collapse to the mean") {
        TripGaussian point;
        point.mean = Vec::Constant(3, 7.0);
        point.cov = Mat::Zero(3, 3);
        const Mat d = sample(point, 10, 1);
        CHECK((d.array() - 7.0).abs().maxCoeff() == 0.0);
    }
}
