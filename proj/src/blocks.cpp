#include "sptte/blocks.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sptte {

namespace {

bool pivots_ok(const Eigen::LLT<Mat>& llt, double ratio_floor) {
    if (llt.info() != Eigen::Success) return false;
    if (ratio_floor <= 0.0) return true;
    const auto& L = llt.matrixLLT();
    double pmin = L(0, 0), pmax = L(0, 0);
    for (int i = 1; i < L.rows(); ++i) {
        pmin = std::min(pmin, L(i, i));
        pmax = std::max(pmax, L(i, i));
    }
    if (!(pmax > 0.0)) return false;
    const double r = pmin / pmax;
    return r * r >= ratio_floor;
}

std::string dump_matrix(const Mat& M) {
    std::ostringstream os;
    os.precision(17);
    os << M;
    return os.str();
}

} // namespace

JitteredChol jittered_cholesky(const Mat& M, const JitterPolicy& policy) {
    const int n = static_cast<int>(M.rows());
    const double mean_diag = M.diagonal().sum() / n;
    JitteredChol out;
    double rel = 0.0;
    while (true) {
        out.jitter = rel * mean_diag;
        out.rel_level = rel;
        Mat Mj = M;
        Mj.diagonal().array() += out.jitter;
        out.llt.compute(Mj);
        if (pivots_ok(out.llt, policy.pivot_ratio_floor)) return out;
        if (rel == 0.0)
            rel = policy.base_rel;
        else if (rel * policy.factor <= policy.max_rel * (1.0 + 1e-12))
            rel *= policy.factor;
        else
            throw numeric_error("cholesky failed after max jitter " + std::to_string(policy.max_rel) +
                                " * mean(diag); block:\n" + dump_matrix(M));
    }
}

TripBlocks make_trip_blocks(const TripAug& aug) {
    TripBlocks tb;
    tb.slot = aug.slot;
    for (const auto& row : aug.rows)
        for (const auto& [l, c] : row) {
            (void)c;
            tb.links.push_back(l);
        }
    std::sort(tb.links.begin(), tb.links.end());
    tb.links.erase(std::unique(tb.links.begin(), tb.links.end()), tb.links.end());

    const int R = static_cast<int>(aug.rows.size());
    const int m = static_cast<int>(tb.links.size());
    tb.A = Mat::Zero(R, m);
    tb.targets = Vec(R);
    for (int r = 0; r < R; ++r) {
        tb.targets(r) = aug.targets[r];
        for (const auto& [l, c] : aug.rows[r]) {
            const auto it = std::lower_bound(tb.links.begin(), tb.links.end(), l);
            tb.A(r, static_cast<int>(it - tb.links.begin())) = static_cast<double>(c);
        }
    }
    return tb;
}

BatchBlocks make_batch_blocks(const AugmentedBatch& batch) {
    BatchBlocks bb;
    bb.trips.reserve(batch.entries.size());
    for (const auto& e : batch.entries) {
        bb.trips.push_back(make_trip_blocks(e));
        bb.total_rows += bb.trips.back().rows();
    }
    return bb;
}

Mat block_cov(const LinkStateValues& state, const TripBlocks& trip) {
    const int m = trip.nlinks();
    const int rL = static_cast<int>(state.L.cols());
    Mat Ls(m, rL);
    Vec dsub(m);
    for (int i = 0; i < m; ++i) {
        const int l = trip.links[i];
        Ls.row(i) = std::sqrt(state.v(l)) * state.L.row(l);
        dsub(i) = state.d(l);
    }
    const Mat U = trip.A * Ls;
    Mat M = U * U.transpose() + trip.A * dsub.asDiagonal() * trip.A.transpose();
    // mirror the lower triangle so the result is exactly symmetric
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < i; ++j) M(j, i) = M(i, j);
    return M;
}

double trip_mean(const LinkStateValues& state, const std::vector<std::pair<int, int>>& rowset) {
    if (rowset.empty()) throw schema_error("trip_mean: empty rowset");
    double s = 0.0;
    for (const auto& [l, c] : rowset) s += static_cast<double>(c) * state.mu(l);
    return s;
}

double block_nll_forward(const LinkStateValues& state, const TripBlocks& trip,
                         const JitterPolicy& policy, BlockCache& cache) {
    const int R = trip.rows();
    const int m = trip.nlinks();
    const int rL = static_cast<int>(state.L.cols());

    cache.sqrtv = Vec(m);
    cache.Ls = Mat(m, rL);
    Vec dsub(m), musub(m);
    for (int i = 0; i < m; ++i) {
        const int l = trip.links[i];
        cache.sqrtv(i) = std::sqrt(state.v(l));
        cache.Ls.row(i) = cache.sqrtv(i) * state.L.row(l);
        dsub(i) = state.d(l);
        musub(i) = state.mu(l);
    }
    cache.U = trip.A * cache.Ls;
    Mat M = cache.U * cache.U.transpose() + trip.A * dsub.asDiagonal() * trip.A.transpose();
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < i; ++j) M(j, i) = M(i, j);

    const Vec resid = trip.targets - trip.A * musub;

    const JitteredChol jc = jittered_cholesky(M, policy);
    cache.jitter_rel = jc.rel_level;
    cache.jitter_abs = jc.jitter;
    cache.cholL = jc.llt.matrixL();
    cache.y = jc.llt.solve(resid);

    double logdet = 0.0;
    for (int i = 0; i < R; ++i) logdet += 2.0 * std::log(cache.cholL(i, i));
    cache.nll = 0.5 * (logdet + resid.dot(cache.y) + R * std::log(2.0 * std::numbers::pi));
    if (!std::isfinite(cache.nll))
        throw numeric_error("block nll is not finite; block:\n" + dump_matrix(M));
    return cache.nll;
}

BlockGrads block_nll_backward(const LinkStateValues& state, const TripBlocks& trip,
                              const BlockCache& cache, double upstream) {
    const int R = trip.rows();
    const int m = trip.nlinks();

    Mat Minv = Mat::Identity(R, R);
    cache.cholL.triangularView<Eigen::Lower>().solveInPlace(Minv);
    cache.cholL.transpose().triangularView<Eigen::Upper>().solveInPlace(Minv);

    // d(logdet)/dM = M^{-1}; d(r^T M^{-1} r)/dM = -y y^T
    Mat Mbar_j = 0.5 * upstream * (Minv - cache.y * cache.y.transpose());
    // chain through the mean(diag)-relative jitter j = rel * tr(M)/n
    Mat Mbar = Mbar_j;
    Mbar.diagonal().array() += (cache.jitter_rel / R) * Mbar_j.trace();

    const Mat Ubar = 2.0 * Mbar * cache.U;
    const Mat Lsbar = trip.A.transpose() * Ubar;

    BlockGrads g;
    g.gL = Mat(m, state.L.cols());
    g.gv = Vec(m);
    g.gd = Vec(m);
    g.gmu = Vec(m);

    // gmu = -upstream * A^T y
    g.gmu = -upstream * (trip.A.transpose() * cache.y);

    for (int i = 0; i < m; ++i) {
        g.gL.row(i) = cache.sqrtv(i) * Lsbar.row(i);
        // sqrt(v) rows: dLs/dv = L / (2 sqrt(v)); Ls = sqrt(v) L
        const double gs = Lsbar.row(i).dot(cache.Ls.row(i)) / cache.sqrtv(i);
        g.gv(i) = gs * (0.5 / cache.sqrtv(i));
    }

    // gd_l = sum_{r,s} Mbar[r,s] A[r,l] A[s,l]
    const Mat G = Mbar * trip.A;
    for (int i = 0; i < m; ++i) g.gd(i) = trip.A.col(i).dot(G.col(i));
    return g;
}

NllResult batch_nll_serial(const LinkStateValues& state, const BatchBlocks& batch,
                           const JitterPolicy& policy) {
    NllResult res;
    res.cache.resize(batch.trips.size());
    for (std::size_t t = 0; t < batch.trips.size(); ++t)
        block_nll_forward(state, batch.trips[t], policy, res.cache[t]);
    for (std::size_t t = 0; t < batch.trips.size(); ++t) res.nll += res.cache[t].nll;
    return res;
}

NllResult batch_nll_parallel(const LinkStateValues& state, const BatchBlocks& batch,
                             const JitterPolicy& policy, int threads) {
#ifdef _OPENMP
    if (threads > 1) {
        NllResult res;
        res.cache.resize(batch.trips.size());
        const auto n = static_cast<std::int64_t>(batch.trips.size());
        std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::int64_t t = 0; t < n; ++t) {
            try {
                block_nll_forward(state, batch.trips[t], policy, res.cache[t]);
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
        // ordered reduction: bitwise identical to the serial reference
        for (std::size_t t = 0; t < batch.trips.size(); ++t) res.nll += res.cache[t].nll;
        return res;
    }
#else
    (void)threads;
#endif
    return batch_nll_serial(state, batch, policy);
}

StateGrads batch_nll_backward(const LinkStateValues& state, const BatchBlocks& batch,
                              const NllResult& forward, double upstream, int threads) {
    const int V = state.num_links();
    StateGrads g;
    g.gmu = Vec::Zero(V);
    g.gv = Vec::Zero(V);
    g.gd = Vec::Zero(V);
    g.gL = Mat::Zero(V, state.L.cols());

    std::vector<BlockGrads> parts(batch.trips.size());
#ifdef _OPENMP
    if (threads > 1) {
        const auto n = static_cast<std::int64_t>(batch.trips.size());
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::int64_t t = 0; t < n; ++t)
            parts[t] = block_nll_backward(state, batch.trips[t], forward.cache[t], upstream);
    } else
#endif
    {
        (void)threads;
        for (std::size_t t = 0; t < batch.trips.size(); ++t)
            parts[t] = block_nll_backward(state, batch.trips[t], forward.cache[t], upstream);
    }

    // serial scatter in trip order keeps the accumulation deterministic
    for (std::size_t t = 0; t < batch.trips.size(); ++t) {
        const auto& trip = batch.trips[t];
        const auto& p = parts[t];
        for (int i = 0; i < trip.nlinks(); ++i) {
            const int l = trip.links[i];
            g.gmu(l) += p.gmu(i);
            g.gv(l) += p.gv(i);
            g.gd(l) += p.gd(i);
            g.gL.row(l) += p.gL.row(i);
        }
    }
    return g;
}

} // namespace sptte
