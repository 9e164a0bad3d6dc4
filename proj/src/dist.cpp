#include "sptte/dist.hpp"

#include <cmath>
#include <numbers>

namespace sptte {

TripGaussian predict_joint(const LinkStateValues& state,
                           const std::vector<std::vector<std::pair<int, int>>>& rowsets,
                           bool include_cross) {
    const int Q = static_cast<int>(rowsets.size());
    const int rL = static_cast<int>(state.L.cols());
    TripGaussian tg;
    tg.mean = Vec(Q);

    // rows of A V^{1/2} L and A diag(d) A^T assembled per query
    Mat U(Q, rL);
    Vec diag_d(Q);
    std::vector<Vec> count_rows;
    count_rows.reserve(Q);
    for (int q = 0; q < Q; ++q) {
        if (rowsets[q].empty()) throw schema_error("predict_joint: empty rowset");
        tg.mean(q) = trip_mean(state, rowsets[q]);
        U.row(q).setZero();
        double dq = 0.0;
        for (const auto& [l, c] : rowsets[q]) {
            const double cc = static_cast<double>(c);
            U.row(q) += cc * std::sqrt(state.v(l)) * state.L.row(l);
            dq += cc * cc * state.d(l); // squared multiplicity on the diagonal
        }
        diag_d(q) = dq;
    }

    if (!include_cross) {
        tg.cov = Mat::Zero(Q, Q);
        for (int q = 0; q < Q; ++q) tg.cov(q, q) = U.row(q).squaredNorm() + diag_d(q);
        return tg;
    }

    tg.cov = U * U.transpose();
    // cross terms of A diag(d) A^T: sum over shared links of c_q c_q' d_l
    for (int q = 0; q < Q; ++q) {
        for (int p = q; p < Q; ++p) {
            double s = 0.0;
            auto it_q = rowsets[q].begin();
            auto it_p = rowsets[p].begin();
            while (it_q != rowsets[q].end() && it_p != rowsets[p].end()) {
                if (it_q->first < it_p->first)
                    ++it_q;
                else if (it_p->first < it_q->first)
                    ++it_p;
                else {
                    s += static_cast<double>(it_q->second) * static_cast<double>(it_p->second) *
                         state.d(it_q->first);
                    ++it_q;
                    ++it_p;
                }
            }
            tg.cov(q, p) += s;
            tg.cov(p, q) = tg.cov(q, p);
        }
    }
    return tg;
}

double crps_gaussian(double mean, double std_dev, double observed) {
    if (!(std_dev > 0.0)) throw schema_error("crps: std must be positive");
    const double z = (observed - mean) / std_dev;
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return std_dev * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

Mat sample(const TripGaussian& tg, int n, std::uint64_t seed) {
    const int Q = tg.dim();
    Mat draws(n, Q);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Mat factor = Mat::Zero(Q, Q);
    const double max_cov = tg.cov.cwiseAbs().maxCoeff();
    if (max_cov > 0.0) {
        const JitteredChol jc = jittered_cholesky(tg.cov, JitterPolicy::factorization());
        factor = jc.llt.matrixL();
    }
    Vec z(Q);
    for (int i = 0; i < n; ++i) {
        for (int q = 0; q < Q; ++q) z(q) = gauss(rng);
        draws.row(i) = (tg.mean + factor * z).transpose();
    }
    return draws;
}

} // namespace sptte
