#ifndef SPTTE_DIST_HPP
#define SPTTE_DIST_HPP

#include <Eigen/Dense>
#include <vector>

#include "sptte/blocks.hpp"
#include "sptte/common.hpp"

namespace sptte {

/// Joint Gaussian over a set of query trips (seconds and seconds^2).
struct TripGaussian {
    Vec mean;
    Mat cov; // full Q x Q when cross terms requested, otherwise diagonal only

    int dim() const { return static_cast<int>(mean.size()); }
};

/// Full joint distribution over query rowsets. Covariance is
/// (A V^{1/2} L)(A V^{1/2} L)^T + A diag(d) A^T; shared links induce cross
/// correlation. include_cross = false keeps the marginal diagonal only.
TripGaussian predict_joint(const LinkStateValues& state,
                           const std::vector<std::vector<std::pair<int, int>>>& rowsets,
                           bool include_cross = true);

/// Closed-form CRPS of a Gaussian forecast:
///   sigma * [ z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ],  z = (y - mu)/sigma.
double crps_gaussian(double mean, double std_dev, double observed);

/// n joint draws via the Cholesky factor (escalating jitter on failure);
/// deterministic per seed. Returns n x Q.
Mat sample(const TripGaussian& tg, int n, std::uint64_t seed);

} // namespace sptte

#endif
