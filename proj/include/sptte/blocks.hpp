#ifndef SPTTE_BLOCKS_HPP
#define SPTTE_BLOCKS_HPP

#include <Eigen/Dense>
#include <vector>

#include "sptte/common.hpp"
#include "sptte/trips.hpp"

namespace sptte {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Escalating diagonal regularization for Cholesky factorizations of trip
/// covariance blocks: mean(diag)-relative levels 0, 1e-8, 1e-7, ..., 1e-4.
/// For likelihood evaluation a factorization also counts as failed when the
/// squared pivot ratio drops below `pivot_ratio_floor` (augmented blocks are
/// rank-deficient by construction and need a quantified floor so that the
/// log-determinant is well conditioned). Sampling/prediction uses the plain
/// success criterion only.
struct JitterPolicy {
    double base_rel = 1e-8;
    double max_rel = 1e-4;
    double factor = 10.0;
    double pivot_ratio_floor = 0.0; // 0 disables the conditioning check

    static JitterPolicy likelihood() { return JitterPolicy{1e-8, 1e-4, 10.0, 1e-5}; }
    static JitterPolicy factorization() { return JitterPolicy{1e-8, 1e-4, 10.0, 0.0}; }
};

struct JitteredChol {
    Eigen::LLT<Mat> llt;
    double rel_level = 0.0; // chosen level, relative to mean(diag); 0 = no jitter
    double jitter = 0.0;    // absolute value added to the diagonal
};

/// Factor M (+ jitter per policy). Throws numeric_error with a dump of the
/// matrix when the escalation ladder is exhausted.
JitteredChol jittered_cholesky(const Mat& M, const JitterPolicy& policy);

/// Sparse indicator view of one trip: local dense indicator over the trip's
/// distinct links (row 0 full trip, rows 1.. the subsample partition).
struct TripBlocks {
    int slot = 0;
    std::vector<int> links; // distinct links, ascending
    Mat A;                  // rows x links.size(), multiplicity counts
    Vec targets;            // rows

    int rows() const { return static_cast<int>(A.rows()); }
    int nlinks() const { return static_cast<int>(links.size()); }
};

struct BatchBlocks {
    std::vector<TripBlocks> trips;
    int total_rows = 0;
};

TripBlocks make_trip_blocks(const TripAug& aug);
BatchBlocks make_batch_blocks(const AugmentedBatch& batch);

/// Per-slot Gaussian state of all links (values, seconds or standardized units).
struct LinkStateValues {
    int slot = 0;
    Vec mu; // num_links
    Mat L;  // num_links x r_L
    Vec v;  // num_links, > 0
    Vec d;  // num_links, > 0

    int num_links() const { return static_cast<int>(mu.size()); }
};

/// Covariance block of one trip, U U^T + A diag(d) A^T with U = A V^{1/2} L,
/// assembled from the gathered link rows only (the |V| x |V| covariance is
/// never materialized). Exactly symmetric, no jitter applied.
Mat block_cov(const LinkStateValues& state, const TripBlocks& trip);

/// Sum of mu over a rowset with multiplicity.
double trip_mean(const LinkStateValues& state, const std::vector<std::pair<int, int>>& rowset);

struct BlockCache {
    Mat cholL;    // lower factor of the jittered block
    Vec y;        // (M + jI)^{-1} r
    Mat U;        // rows x r_L
    Mat Ls;       // nlinks x r_L, diag(sqrt(v)) * L rows
    Vec sqrtv;    // nlinks
    double jitter_rel = 0.0;
    double jitter_abs = 0.0;
    double nll = 0.0;
};

struct BlockGrads {
    Vec gmu, gv, gd; // per gathered link
    Mat gL;
};

struct NllResult {
    double nll = 0.0;
    std::vector<BlockCache> cache; // one entry per trip, in order
};

/// NLL contribution of one trip block:
///   1/2 [ logdet(M + jI) + r^T (M + jI)^{-1} r + rows * log(2 pi) ]
/// with j = policy-chosen relative level times mean(diag(M)).
double block_nll_forward(const LinkStateValues& state, const TripBlocks& trip,
                         const JitterPolicy& policy, BlockCache& cache);

/// Adjoints of the block NLL w.r.t. the gathered mu/L/v/d rows, scaled by
/// `upstream`. Uses the forward cache; gradients flow through the jitter term
/// j = rel * tr(M)/n as well.
BlockGrads block_nll_backward(const LinkStateValues& state, const TripBlocks& trip,
                              const BlockCache& cache, double upstream);

/// Serial reference evaluation: plain loop over trips, ordered summation.
NllResult batch_nll_serial(const LinkStateValues& state, const BatchBlocks& batch,
                           const JitterPolicy& policy);

/// OpenMP evaluation. Per-trip work is independent; the reduction runs
/// serially in trip order afterwards, so the result is bitwise identical to
/// the serial reference for any thread count.
NllResult batch_nll_parallel(const LinkStateValues& state, const BatchBlocks& batch,
                             const JitterPolicy& policy, int threads);

struct StateGrads {
    Vec gmu, gv, gd;
    Mat gL;
};

/// Backward pass over all blocks; per-trip adjoints are computed independently
/// (OpenMP when threads > 1) and scattered serially in trip order.
StateGrads batch_nll_backward(const LinkStateValues& state, const BatchBlocks& batch,
                              const NllResult& forward, double upstream, int threads);

} // namespace sptte

#endif
