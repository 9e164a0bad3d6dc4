#ifndef SPTTE_GRAPH_HPP
#define SPTTE_GRAPH_HPP

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "sptte/common.hpp"

namespace sptte {

/// Road network as a link graph: vertices are road links, edges connect
/// topologically adjacent links. Immutable after construction.
struct RoadNetwork {
    int num_links = 0;
    // unordered pairs (a < b), no self-edges
    std::vector<std::pair<int, int>> edges;
    // one row per link, shared feature dimension h >= 1
    std::vector<std::vector<double>> prior_features;
    std::vector<std::string> feature_names;

    // adjacency lists derived from `edges`, symmetrized
    std::vector<std::vector<int>> neighbors;

    void validate() const;
    void build_adjacency();
    int feature_dim() const { return prior_features.empty() ? 0 : static_cast<int>(prior_features[0].size()); }
};

/// Square sparse nonnegative weight matrix whose pattern is restricted to
/// adjacency plus diagonal. Rows are stored sorted by column id.
struct SparseWeights {
    int n = 0;
    std::vector<std::vector<std::pair<int, double>>> rows; // (col, value)

    double at(int r, int c) const;
    double row_sum(int r) const;
    Eigen::MatrixXd dense() const;
};

struct SmoothingDiagnostics {
    std::vector<int> identity_rows; // rows whose Hadamard product was identically zero
};

/// Prior similarity matrix P (unit diagonal, 1/(1+sqrt(dist)) on edges).
/// `feature_selector` picks the feature columns entering the distance; when
/// `adjacency_only` is set the distance is identically zero and P is the
/// adjacency pattern with ones (used for the L branch).
/// `standardize` z-scores the selected features over all links first.
SparseWeights build_prior_similarity(const RoadNetwork& network,
                                     const std::vector<int>& feature_selector,
                                     bool adjacency_only = false,
                                     bool standardize = true);

/// Frequency-based heterogeneous aware matrix W_f.
/// Diagonal: 1 - exp(-k_f * F_l / max(F)). Off-diagonal mass (1 - W_ll) is
/// split over neighbors proportionally to their frequency, uniformly when the
/// neighborhood frequency sum is zero. Asymmetric in general.
SparseWeights build_hetero_weights(const RoadNetwork& network,
                                   const std::vector<double>& freq,
                                   double k_f);

/// Normalized edge weight matrix: row-normalized Hadamard product P .* W_f.
/// Rows whose product is identically zero become identity rows and are
/// reported in `diag` when given.
SparseWeights build_edge_weights(const SparseWeights& P, const SparseWeights& W_f,
                                 SmoothingDiagnostics* diag = nullptr);

} // namespace sptte

#endif
